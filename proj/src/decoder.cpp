#include "mac/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace mac {

ByteCostModel ByteCostModel::for_dims(std::size_t dim, std::size_t value_dim,
                                      std::size_t elem_bytes) {
  return ByteCostModel{static_cast<double>((dim + value_dim) * elem_bytes),
                       static_cast<double>(dim * elem_bytes)};
}

void ByteCostModel::validate() const {
  if (!(kv_bytes_per_token > 0.0) || !(query_bytes > 0.0))
    throw ConfigError("byte costs must be positive");
}

void EngineConfig::validate() const {
  if (dim == 0 || dim % 2 != 0)
    throw ConfigError("head dimension must be even and positive (got " +
                      std::to_string(dim) + ")");
  if (value_dim == 0) throw ConfigError("value dimension must be positive");
  if (n_layers == 0) throw ConfigError("need at least one layer");
  if (n_q_heads == 0 || n_kv_heads == 0)
    throw ConfigError("need at least one query head and one KV head");
  if (n_q_heads % n_kv_heads != 0)
    throw ConfigError("query heads (" + std::to_string(n_q_heads) +
                      ") must be a multiple of KV heads (" +
                      std::to_string(n_kv_heads) + ")");
  if (window == 0) throw ConfigError("window K must be >= 1");
  if (band < 0) throw ConfigError("band r must be >= 0");
  if (!(tau >= 0.0 && tau < 1.0))
    throw ConfigError("tau must lie in [0, 1), got " + std::to_string(tau));
  if (!layer_tau.empty()) {
    if (layer_tau.size() != n_layers)
      throw ConfigError("per-layer tau needs one value per layer");
    for (double t : layer_tau)
      if (!(t >= 0.0 && t < 1.0))
        throw ConfigError("per-layer tau must lie in [0, 1)");
  }
  if (delta_max && *delta_max < 1)
    throw ConfigError("delta_max must be >= 1 when set");
  if (!(rope_base > 0.0)) throw ConfigError("RoPE base must be positive");
  if (page_size == 0) throw ConfigError("page size must be >= 1");
  if (refresh_interval < 0)
    throw ConfigError("refresh interval must be >= 0");
  if (costs) costs->validate();
  if (mass_bound_diagnostics && !oracle_mode)
    throw ConfigError("mass-bound diagnostics need oracle mode");
}

double EngineConfig::tau_for_layer(std::size_t layer) const {
  return layer_tau.empty() ? tau : layer_tau.at(layer);
}

ByteCostModel EngineConfig::cost_model() const {
  return costs ? *costs : ByteCostModel::for_dims(dim, value_dim);
}

void DecodeMetrics::add(const DecodeMetrics& o) {
  steps += o.steps;
  hits += o.hits;
  skip_sum += o.skip_sum;
  kv_tokens_read += o.kv_tokens_read;
  full_tokens += o.full_tokens;
  kv_bytes += o.kv_bytes;
  match_bytes += o.match_bytes;
  group_span_tokens += o.group_span_tokens;
  group_full_tokens += o.group_full_tokens;
  gate_rejections += o.gate_rejections;
  refreshes += o.refreshes;
  cancellation_fallbacks += o.cancellation_fallbacks;
  max_downdate_error = std::max(max_downdate_error, o.max_downdate_error);
  err_samples.insert(err_samples.end(), o.err_samples.begin(),
                     o.err_samples.end());
  band_mass_samples.insert(band_mass_samples.end(),
                           o.band_mass_samples.begin(),
                           o.band_mass_samples.end());
  delta_gaps.insert(delta_gaps.end(), o.delta_gaps.begin(),
                    o.delta_gaps.end());
  mass_bound_samples.insert(mass_bound_samples.end(),
                            o.mass_bound_samples.begin(),
                            o.mass_bound_samples.end());
}

namespace {

double mean_of(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) /
         static_cast<double>(xs.size());
}

// Linear interpolation between closest ranks.
double quantile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

MetricsReport compute_metrics(const DecodeMetrics& m) {
  if (m.steps < 1) throw RangeError("compute_metrics: no steps recorded");
  MetricsReport r;
  r.steps = m.steps;
  r.hits = m.hits;
  r.acceptance_rate = m.acceptance_rate();
  r.skip_ratio = m.skip_sum / static_cast<double>(m.steps);
  r.kv_fraction = m.full_tokens == 0
                      ? 1.0
                      : static_cast<double>(m.kv_tokens_read) /
                            static_cast<double>(m.full_tokens);
  r.group_kv_fraction = m.group_full_tokens == 0
                            ? r.kv_fraction
                            : static_cast<double>(m.group_span_tokens) /
                                  static_cast<double>(m.group_full_tokens);
  if (!m.err_samples.empty()) {
    r.err_mean = mean_of(m.err_samples);
    r.err_p50 = quantile(m.err_samples, 0.50);
    r.err_p99 = quantile(m.err_samples, 0.99);
  }
  if (!m.delta_gaps.empty()) r.mean_gap = mean_of(m.delta_gaps);
  if (!m.band_mass_samples.empty())
    r.mean_band_mass = mean_of(m.band_mass_samples);
  if (!m.mass_bound_samples.empty()) {
    const auto held = std::count_if(
        m.mass_bound_samples.begin(), m.mass_bound_samples.end(),
        [](const MassBoundSample& s) { return s.lhs <= s.rhs + 1e-9; });
    r.mass_bound_hold_rate = static_cast<double>(held) /
                             static_cast<double>(m.mass_bound_samples.size());
  }
  r.cancellation_fallbacks = m.cancellation_fallbacks;
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  return nlohmann::json{
      {"schema_version", kReportSchemaVersion},
      {"steps", steps},
      {"hits", hits},
      {"acceptance_rate", acceptance_rate},
      {"skip_ratio", skip_ratio},
      {"kv_fraction", kv_fraction},
      {"group_kv_fraction", group_kv_fraction},
      {"err_mean", opt(err_mean)},
      {"err_p50", opt(err_p50)},
      {"err_p99", opt(err_p99)},
      {"mean_gap", opt(mean_gap)},
      {"mean_band_mass", opt(mean_band_mass)},
      {"mass_bound_hold_rate", opt(mass_bound_hold_rate)},
      {"cancellation_fallbacks", cancellation_fallbacks},
  };
}

bool break_even_gate(Position p, Position band, std::size_t window,
                     const ByteCostModel& costs) {
  const double saved = static_cast<double>(p) * costs.kv_bytes_per_token;
  const double spent =
      static_cast<double>(window) * costs.query_bytes +
      static_cast<double>(band) * costs.kv_bytes_per_token;
  return saved >= spent;
}

Position group_kv_span(std::span<const MatchResult> matches, Position m,
                       Position band) {
  if (matches.empty()) throw RangeError("group_kv_span: empty group");
  Position reusable = std::numeric_limits<Position>::max();
  for (const auto& match : matches) {
    const Position skip = match.hit ? std::max<Position>(match.p - band, 0) : 0;
    reusable = std::min(reusable, skip);
  }
  return m - reusable;
}

OverheadRatio aux_overhead_ratio(const EngineConfig& cfg, Position context,
                                 std::size_t dtype_bytes) {
  if (context < 1) throw RangeError("aux_overhead_ratio: L must be >= 1");
  if (dtype_bytes == 0)
    throw ConfigError("aux_overhead_ratio: dtype size must be positive");
  const double k = static_cast<double>(cfg.window);
  const double l = static_cast<double>(context);
  const double b = static_cast<double>(dtype_bytes);
  OverheadRatio out;
  // Each query head keeps K queries (d), K summaries (d_v) and two scalars
  // (position, log-mass); the cache holds keys and values per KV head.
  out.analytic = k * static_cast<double>(cfg.n_q_heads) *
                 static_cast<double>(cfg.dim + cfg.value_dim + 2) * b /
                 (l * static_cast<double>(cfg.n_kv_heads) *
                  static_cast<double>(cfg.dim + cfg.value_dim) * b);
  out.paper_formula = 0.05 * (k / 1024.0) * (120000.0 / l);
  return out;
}

SummaryRing::SummaryRing(std::size_t capacity) : entries_(capacity) {
  if (capacity == 0) throw ConfigError("summary ring: capacity must be >= 1");
}

void SummaryRing::push(Position pos, AttentionSummary summary,
                       double band_mass) {
  if (size_ > 0) {
    const auto& last = entries_[(head_ + entries_.size() - 1) % entries_.size()];
    if (pos <= last.position)
      throw RangeError("summary ring: position " + std::to_string(pos) +
                       " does not follow " + std::to_string(last.position));
  }
  entries_[head_] = Entry{pos, std::move(summary), band_mass};
  head_ = (head_ + 1) % entries_.size();
  if (size_ < entries_.size()) ++size_;
}

template <class T>
BasicDecoder<T>::BasicDecoder(EngineConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      costs_(cfg_.cost_model()),
      rope_(cfg_.dim, cfg_.rope_base,
            static_cast<Position>(cfg_.window) + 1),
      kv_(cfg_.n_layers, cfg_.n_kv_heads, cfg_.dim, cfg_.value_dim,
          cfg_.page_size) {
  traffic_.bytes_per_token = costs_.kv_bytes_per_token;
  traffic_.mode = cfg_.traffic_mode;
  heads_.reserve(cfg_.n_layers * cfg_.n_q_heads);
  for (std::size_t i = 0; i < cfg_.n_layers * cfg_.n_q_heads; ++i)
    heads_.push_back(HeadState{QueryRing<T>(cfg_.window, cfg_.dim),
                               SummaryRing(cfg_.window)});
}

template <class T>
typename BasicDecoder<T>::HeadState& BasicDecoder<T>::head_state(
    std::size_t layer, std::size_t head) {
  if (layer >= cfg_.n_layers || head >= cfg_.n_q_heads)
    throw RangeError("decoder: no query head " + std::to_string(head) +
                     " in layer " + std::to_string(layer));
  return heads_[layer * cfg_.n_q_heads + head];
}

template <class T>
const QueryRing<T>& BasicDecoder<T>::query_ring(std::size_t layer,
                                                std::size_t head) const {
  return const_cast<BasicDecoder*>(this)->head_state(layer, head).queries;
}

template <class T>
const SummaryRing& BasicDecoder<T>::summary_ring(std::size_t layer,
                                                 std::size_t head) const {
  return const_cast<BasicDecoder*>(this)->head_state(layer, head).summaries;
}

template <class T>
StepResult BasicDecoder<T>::decode_step(std::size_t layer,
                                        std::span<const double> q_pre,
                                        std::span<const double> k_pre,
                                        std::span<const double> v,
                                        Position m) {
  const std::size_t d = cfg_.dim;
  const std::size_t dv = cfg_.value_dim;
  if (layer >= cfg_.n_layers)
    throw RangeError("decode_step: layer " + std::to_string(layer) +
                     " out of range");
  if (q_pre.size() != cfg_.n_q_heads * d || k_pre.size() != cfg_.n_kv_heads * d ||
      v.size() != cfg_.n_kv_heads * dv)
    throw DimensionError("decode_step: tensor sizes do not match the head "
                         "configuration");
  if (m != kv_.size(layer, 0) + 1)
    throw RangeError("decode_step: expected position " +
                     std::to_string(kv_.size(layer, 0) + 1) + ", got " +
                     std::to_string(m));

  for (std::size_t g = 0; g < cfg_.n_kv_heads; ++g) {
    const auto k = rope_rotate(k_pre.subspan(g * d, d), m, rope_);
    kv_.append(layer, g, k, v.subspan(g * dv, dv));
  }

  const MatchConfig match_cfg{d, cfg_.tau_for_layer(layer), cfg_.window,
                              cfg_.delta_max, cfg_.space};
  const Position r = cfg_.band;
  const Position split = m - r;

  StepResult out;
  out.output.reserve(cfg_.n_q_heads);
  out.match.reserve(cfg_.n_q_heads);
  out.full_summary.reserve(cfg_.n_q_heads);
  DecodeMetrics& delta = out.metrics_delta;

  HeadVector q(d);
  for (std::size_t h = 0; h < cfg_.n_q_heads; ++h) {
    const std::size_t g = h / cfg_.group_size();
    HeadState& state = head_state(layer, h);
    for (std::size_t i = 0; i < d; ++i)
      q[i] = static_cast<double>(static_cast<T>(q_pre[h * d + i]));
    const HeadVector q_rot = rope_rotate(q, m, rope_);

    MatchResult match = match_query(std::span<const double>(q), m,
                                    state.queries, match_cfg, &rope_);
    ++delta.steps;
    delta.full_tokens += m;
    delta.match_bytes +=
        static_cast<double>(match.candidates_scanned) * costs_.query_bytes;
    if (match.hit && cfg_.roi_gate &&
        !break_even_gate(match.p, r, cfg_.window, costs_)) {
      match.hit = false;
      ++delta.gate_rejections;
    }
    if (match.hit && cfg_.refresh_interval > 0 &&
        m % cfg_.refresh_interval == 0) {
      match.hit = false;
      ++delta.refreshes;
    }

    AttentionSummary prefix_part;
    AttentionSummary full;
    AttentionSummary tail;
    const AttentionSummary* cached = nullptr;
    double cached_band_mass = 0.0;
    if (match.hit) {
      const auto& entry = state.summaries.at(match.slot);
      if (entry.position != match.p)
        throw RangeError("decoder: query and summary rings out of step");
      cached = &entry.summary;
      cached_band_mass = entry.band_mass;
      const TokenRange range = TokenRange::clipped(match.p - r + 1, m);
      const auto view = kv_.read_range(layer, g, range, &traffic_);
      const auto parts =
          summarize_split(q_rot, view.keys, view.values, range, split);
      prefix_part = merge(*cached, parts.head);
      full = merge(*cached, parts.whole);
      tail = parts.tail;
      ++delta.hits;
      const Position skipped = std::max<Position>(match.p - r, 0);
      delta.skip_sum += static_cast<double>(skipped) / static_cast<double>(m);
      delta.kv_tokens_read += range.size();
      delta.kv_bytes +=
          static_cast<double>(range.size()) * costs_.kv_bytes_per_token;
      delta.delta_gaps.push_back(static_cast<double>(m - match.p));
    } else {
      const TokenRange range{1, m};
      const auto view = kv_.read_range(layer, g, range, &traffic_);
      auto parts = summarize_split(q_rot, view.keys, view.values, range, split);
      prefix_part = std::move(parts.head);
      full = std::move(parts.whole);
      tail = std::move(parts.tail);
      delta.kv_tokens_read += m;
      delta.kv_bytes += static_cast<double>(m) * costs_.kv_bytes_per_token;
    }

    const double band_mass =
        tail.is_empty() ? 0.0 : std::exp(tail.lse - full.lse);
    delta.band_mass_samples.push_back(band_mass);
    HeadVector output = finalize(full);

    if (cfg_.oracle_mode) {
      const auto view = kv_.read_range(layer, g, TokenRange{1, m});
      const auto exact = attend_full(q_rot, view.keys, view.values, m);
      delta.err_samples.push_back(relative_error(output, exact.output));
      if (match.hit && cfg_.mass_bound_diagnostics) {
        const auto stored = state.queries.query(match.slot);
        const HeadVector q_then_pre(stored.begin(), stored.end());
        const HeadVector q_then = rope_rotate(q_then_pre, match.p, rope_);
        delta.mass_bound_samples.push_back(
            mass_bound_check(q_rot, q_then, view.keys, view.values, match.p, r,
                             *cached, cached_band_mass));
      }
    }

    rectify_append(layer, h, m, q, full, tail, prefix_part, band_mass, &delta);

    out.output.push_back(std::move(output));
    out.match.push_back(match);
    out.full_summary.push_back(std::move(full));
  }

  for (std::size_t g = 0; g < cfg_.n_kv_heads; ++g) {
    const auto group = std::span<const MatchResult>(out.match).subspan(
        g * cfg_.group_size(), cfg_.group_size());
    const Position span = group_kv_span(group, m, r);
    out.group_span.push_back(span);
    delta.group_span_tokens += span;
    delta.group_full_tokens += m;
  }

  metrics_.add(delta);
  return out;
}

template <class T>
void BasicDecoder<T>::rectify_append(std::size_t layer, std::size_t head,
                                     Position m, std::span<const double> q_pre,
                                     const AttentionSummary& full,
                                     const AttentionSummary& recent_band,
                                     const AttentionSummary& prefix_part,
                                     double band_mass, DecodeMetrics* delta) {
  HeadState& state = head_state(layer, head);
  if (cfg_.verify_downdate && delta != nullptr) {
    try {
      const auto removed = remove(full, recent_band);
      double err = 0.0;
      if (removed.is_empty() != prefix_part.is_empty()) {
        err = 1.0;
      } else if (!removed.is_empty()) {
        err = std::max(relative_error(removed.acc, prefix_part.acc),
                       std::abs(removed.lse - prefix_part.lse) /
                           std::max(1.0, std::abs(prefix_part.lse)));
      }
      delta->max_downdate_error = std::max(delta->max_downdate_error, err);
    } catch (const CancellationError&) {
      ++delta->cancellation_fallbacks;
    } catch (const MassExceeded&) {
      ++delta->cancellation_fallbacks;
    }
  }
  state.queries.push(m, q_pre);
  state.summaries.push(m, round_to<T>(prefix_part), band_mass);
}

template class BasicDecoder<float>;
template class BasicDecoder<double>;

}  // namespace mac
