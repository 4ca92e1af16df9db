#pragma once

// Synthetic query/key/value streams with tunable temporal redundancy, and
// the on-disk trace format (manifest.json + raw float32 tensors).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mac/attention_core.hpp"

namespace mac {

struct SyntheticSpec {
  Position seq_len = 8192;
  std::size_t dim = 64;
  std::size_t value_dim = 64;
  std::size_t n_layers = 1;
  std::size_t n_q_heads = 1;
  std::size_t n_kv_heads = 1;
  double rep_prob = 0.9;       ///< chance a query repeats an earlier one
  Position rep_gap_max = 512;  ///< repeats look back at most this far
  Position rep_gap_min = 1;    ///< ... and at least this far
  double noise_eps = 0.1;      ///< perturbation on repeats
  double key_corr = 0.8;       ///< key/query correlation a
  double key_gain = 5.0;       ///< scale of the query component of each key
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  /// Fields missing from `j` keep their values from `base`.
  static SyntheticSpec from_json(const nlohmann::json& j, SyntheticSpec base);
  static SyntheticSpec from_json(const nlohmann::json& j);
};

/// Named presets: redundant (alias default), independent, gapped, rep1.
SyntheticSpec preset(std::string_view name);
std::vector<std::string> preset_names();

/// Dense float32 tensors, layout [layer][token][head][dim].
struct Trace {
  std::size_t dim = 0;
  std::size_t value_dim = 0;
  std::size_t n_layers = 0;
  std::size_t n_q_heads = 0;
  std::size_t n_kv_heads = 0;
  Position seq_len = 0;
  std::vector<float> q_pre;
  std::vector<float> k_pre;
  std::vector<float> v;

  /// Rows of token m (1-based) across all heads of one layer.
  std::span<const float> q_row(std::size_t layer, Position m) const;
  std::span<const float> k_row(std::size_t layer, Position m) const;
  std::span<const float> v_row(std::size_t layer, Position m) const;

  bool operator==(const Trace&) const = default;
};

Trace gen_synthetic(const SyntheticSpec& spec);

inline constexpr int kTraceVersion = 1;
inline constexpr std::string_view kTraceDtype = "f32le";

void write_trace(const Trace& trace, const std::filesystem::path& dir);
Trace read_trace(const std::filesystem::path& dir);

}  // namespace mac
