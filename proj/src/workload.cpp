#include "mac/workload.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>

namespace mac {

namespace fs = std::filesystem;

void SyntheticSpec::validate() const {
  if (seq_len < 1) throw ConfigError("workload: seq_len must be >= 1");
  if (dim == 0 || dim % 2 != 0)
    throw ConfigError("workload: head dimension must be even and positive "
                      "(RoPE rotates pairs), got " + std::to_string(dim));
  if (value_dim == 0) throw ConfigError("workload: value dim must be >= 1");
  if (n_layers == 0 || n_q_heads == 0 || n_kv_heads == 0)
    throw ConfigError("workload: layer and head counts must be >= 1");
  if (n_q_heads % n_kv_heads != 0)
    throw ConfigError("workload: query heads must be a multiple of KV heads");
  if (!(rep_prob >= 0.0 && rep_prob <= 1.0))
    throw ConfigError("workload: rep_prob must lie in [0, 1]");
  if (!(key_corr >= 0.0 && key_corr <= 1.0))
    throw ConfigError("workload: key_corr must lie in [0, 1]");
  if (rep_gap_max < 1) throw ConfigError("workload: rep_gap_max must be >= 1");
  if (rep_gap_min < 1 || rep_gap_min > rep_gap_max)
    throw ConfigError("workload: rep_gap_min must lie in [1, rep_gap_max]");
  if (!(noise_eps >= 0.0)) throw ConfigError("workload: noise_eps must be >= 0");
  if (!(key_gain >= 0.0)) throw ConfigError("workload: key_gain must be >= 0");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"seq_len", seq_len},         {"dim", dim},
          {"value_dim", value_dim},     {"n_layers", n_layers},
          {"n_q_heads", n_q_heads},     {"n_kv_heads", n_kv_heads},
          {"rep_prob", rep_prob},       {"rep_gap_max", rep_gap_max},
          {"rep_gap_min", rep_gap_min}, {"noise_eps", noise_eps},
          {"key_corr", key_corr},       {"key_gain", key_gain},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j,
                                       SyntheticSpec s) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("seq_len", s.seq_len);
  take("dim", s.dim);
  take("value_dim", s.value_dim);
  take("n_layers", s.n_layers);
  take("n_q_heads", s.n_q_heads);
  take("n_kv_heads", s.n_kv_heads);
  take("rep_prob", s.rep_prob);
  take("rep_gap_max", s.rep_gap_max);
  take("rep_gap_min", s.rep_gap_min);
  take("noise_eps", s.noise_eps);
  take("key_corr", s.key_corr);
  take("key_gain", s.key_gain);
  take("seed", s.seed);
  return s;
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  return from_json(j, SyntheticSpec{});
}

SyntheticSpec preset(std::string_view name) {
  SyntheticSpec s;  // redundant
  if (name == "redundant" || name == "default") return s;
  if (name == "independent") {
    s.rep_prob = 0.0;
    return s;
  }
  if (name == "gapped") {
    s.rep_gap_min = 256;
    return s;
  }
  if (name == "rep1") {
    s.rep_prob = 1.0;
    s.noise_eps = 0.0;
    s.rep_gap_max = 1024;
    return s;
  }
  throw ConfigError("unknown workload preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
  return {"redundant", "default", "independent", "gapped", "rep1"};
}

namespace {

std::mt19937_64 stream_rng(std::uint64_t seed, std::size_t layer,
                           std::size_t head, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(layer),
                    static_cast<std::uint32_t>(head), tag};
  return std::mt19937_64(seq);
}

std::size_t offset(const Trace& t, std::size_t layer, Position m,
                   std::size_t heads, std::size_t width) {
  if (layer >= t.n_layers || m < 1 || m > t.seq_len)
    throw RangeError("trace: no token " + std::to_string(m) + " in layer " +
                     std::to_string(layer));
  return ((layer * static_cast<std::size_t>(t.seq_len)) +
          static_cast<std::size_t>(m - 1)) *
         heads * width;
}

}  // namespace

std::span<const float> Trace::q_row(std::size_t layer, Position m) const {
  return {q_pre.data() + offset(*this, layer, m, n_q_heads, dim),
          n_q_heads * dim};
}

std::span<const float> Trace::k_row(std::size_t layer, Position m) const {
  return {k_pre.data() + offset(*this, layer, m, n_kv_heads, dim),
          n_kv_heads * dim};
}

std::span<const float> Trace::v_row(std::size_t layer, Position m) const {
  return {v.data() + offset(*this, layer, m, n_kv_heads, value_dim),
          n_kv_heads * value_dim};
}

Trace gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto L = static_cast<std::size_t>(spec.seq_len);
  const std::size_t d = spec.dim;
  const std::size_t dv = spec.value_dim;
  const std::size_t nq = spec.n_q_heads;
  const std::size_t nkv = spec.n_kv_heads;
  const std::size_t group = nq / nkv;

  Trace t;
  t.dim = d;
  t.value_dim = dv;
  t.n_layers = spec.n_layers;
  t.n_q_heads = nq;
  t.n_kv_heads = nkv;
  t.seq_len = spec.seq_len;
  t.q_pre.resize(spec.n_layers * L * nq * d);
  t.k_pre.resize(spec.n_layers * L * nkv * d);
  t.v.resize(spec.n_layers * L * nkv * dv);

  const double noise_w = std::sqrt(1.0 - spec.key_corr * spec.key_corr);
  const double query_w =
      spec.key_gain * spec.key_corr / std::sqrt(static_cast<double>(group));

  for (std::size_t layer = 0; layer < spec.n_layers; ++layer) {
    // Query lineages per head, kept in double until the keys are formed.
    std::vector<std::vector<double>> queries(nq, std::vector<double>(L * d));
    for (std::size_t h = 0; h < nq; ++h) {
      auto rng = stream_rng(spec.seed, layer, h, 0x71);
      std::normal_distribution<double> normal(0.0, 1.0);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      auto& q = queries[h];
      for (std::size_t m = 0; m < L; ++m) {
        double* row = q.data() + m * d;
        const auto pos = static_cast<Position>(m);
        if (pos >= spec.rep_gap_min && unit(rng) < spec.rep_prob) {
          using Pick = std::uniform_int_distribution<Position>;
          const Position lo = std::max<Position>(0, pos - spec.rep_gap_max);
          const Position p = Pick(lo, pos - spec.rep_gap_min)(rng);
          const double* src = q.data() + static_cast<std::size_t>(p) * d;
          for (std::size_t i = 0; i < d; ++i)
            row[i] = src[i] + spec.noise_eps * normal(rng);
        } else {
          for (std::size_t i = 0; i < d; ++i) row[i] = normal(rng);
        }
      }
      for (std::size_t m = 0; m < L; ++m)
        for (std::size_t i = 0; i < d; ++i)
          t.q_pre[((layer * L + m) * nq + h) * d + i] =
              static_cast<float>(q[m * d + i]);
    }

    for (std::size_t g = 0; g < nkv; ++g) {
      auto key_rng = stream_rng(spec.seed, layer, g, 0x6b);
      auto val_rng = stream_rng(spec.seed, layer, g, 0x76);
      std::normal_distribution<double> key_noise(0.0, 1.0);
      std::normal_distribution<double> value_draw(0.0, 1.0);
      for (std::size_t m = 0; m < L; ++m) {
        float* k = t.k_pre.data() + ((layer * L + m) * nkv + g) * d;
        for (std::size_t i = 0; i < d; ++i) {
          double shared = 0.0;
          for (std::size_t h = g * group; h < (g + 1) * group; ++h)
            shared += queries[h][m * d + i];
          k[i] = static_cast<float>(query_w * shared +
                                    noise_w * key_noise(key_rng));
        }
        float* v = t.v.data() + ((layer * L + m) * nkv + g) * dv;
        for (std::size_t i = 0; i < dv; ++i)
          v[i] = static_cast<float>(value_draw(val_rng));
      }
    }
  }
  return t;
}

namespace {

constexpr const char* kQFile = "q_pre.bin";
constexpr const char* kKFile = "k_pre.bin";
constexpr const char* kVFile = "v.bin";

std::uint32_t swap32(std::uint32_t x) {
  return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
}

void write_floats(const fs::path& path, const std::vector<float>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceIoError("cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  } else {
    for (float f : data) {
      const auto bits = swap32(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw TraceIoError("write failed for " + path.string());
}

std::vector<float> read_floats(const fs::path& path, std::size_t count) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw TraceIoError("cannot stat " + path.string() + ": " + ec.message());
  if (bytes != count * sizeof(float))
    throw TraceIoError("size mismatch for " + path.string() + ": expected " +
                       std::to_string(count * sizeof(float)) + " bytes, found " +
                       std::to_string(bytes));
  std::vector<float> data(count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceIoError("cannot open " + path.string());
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(bytes));
  if (!in) throw TraceIoError("read failed for " + path.string());
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : data)
      f = std::bit_cast<float>(swap32(std::bit_cast<std::uint32_t>(f)));
  }
  return data;
}

}  // namespace

void write_trace(const Trace& trace, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw TraceIoError("cannot create " + dir.string() + ": " + ec.message());

  const nlohmann::json manifest{
      {"version", kTraceVersion},
      {"dtype", kTraceDtype},
      {"layout", "layer,token,head,dim"},
      {"d", trace.dim},
      {"d_v", trace.value_dim},
      {"n_layers", trace.n_layers},
      {"n_q_heads", trace.n_q_heads},
      {"n_kv_heads", trace.n_kv_heads},
      {"seq_len", trace.seq_len},
      {"files", {{"q_pre", kQFile}, {"k_pre", kKFile}, {"v", kVFile}}},
  };
  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw TraceIoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
  }
  write_floats(dir / kQFile, trace.q_pre);
  write_floats(dir / kKFile, trace.k_pre);
  write_floats(dir / kVFile, trace.v);
}

Trace read_trace(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw TraceIoError("cannot open " + manifest_path.string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw TraceIoError("malformed " + manifest_path.string() + ": " + e.what());
  }

  Trace t;
  std::string q_file, k_file, v_file;
  try {
    const int version = m.at("version").get<int>();
    if (version != kTraceVersion)
      throw TraceIoError("unknown trace version " + std::to_string(version));
    const auto dtype = m.at("dtype").get<std::string>();
    if (dtype != kTraceDtype)
      throw TraceIoError("unsupported dtype tag '" + dtype + "'");
    m.at("d").get_to(t.dim);
    m.at("d_v").get_to(t.value_dim);
    m.at("n_layers").get_to(t.n_layers);
    m.at("n_q_heads").get_to(t.n_q_heads);
    m.at("n_kv_heads").get_to(t.n_kv_heads);
    m.at("seq_len").get_to(t.seq_len);
    const auto& files = m.at("files");
    files.at("q_pre").get_to(q_file);
    files.at("k_pre").get_to(k_file);
    files.at("v").get_to(v_file);
  } catch (const nlohmann::json::exception& e) {
    throw TraceIoError("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  if (t.seq_len < 0)
    throw TraceIoError("bad manifest " + manifest_path.string() +
                       ": negative seq_len");

  const auto L = static_cast<std::size_t>(t.seq_len);
  t.q_pre = read_floats(dir / q_file, t.n_layers * L * t.n_q_heads * t.dim);
  t.k_pre = read_floats(dir / k_file, t.n_layers * L * t.n_kv_heads * t.dim);
  t.v = read_floats(dir / v_file, t.n_layers * L * t.n_kv_heads * t.value_dim);
  return t;
}

}  // namespace mac
