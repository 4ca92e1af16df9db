#pragma once

// The match / amend / complete decode loop: per-head query and summary rings,
// band-rectified reuse, GQA group accounting, oracle comparison and the
// aggregate metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mac/attention_core.hpp"
#include "mac/kv_store.hpp"
#include "mac/match_engine.hpp"

namespace mac {

/// Byte costs behind the break-even condition.
struct ByteCostModel {
  double kv_bytes_per_token = 0.0;  ///< bytes read per cached token
  double query_bytes = 0.0;         ///< bytes read per ring candidate

  /// Keys + values of one token, and one query, at `elem_bytes` each.
  static ByteCostModel for_dims(std::size_t dim, std::size_t value_dim,
                                std::size_t elem_bytes = 4);
  void validate() const;
};

struct EngineConfig {
  std::size_t dim = 64;
  std::size_t value_dim = 64;
  std::size_t n_layers = 1;
  std::size_t n_q_heads = 1;
  std::size_t n_kv_heads = 1;
  std::size_t window = 1024;     ///< K
  Position band = 256;           ///< r
  double tau = 0.45;
  std::vector<double> layer_tau;  ///< optional per-layer override
  std::optional<Position> delta_max;
  MatchSpace space = MatchSpace::kPreRope;
  double rope_base = 10000.0;
  std::size_t page_size = 16;
  TrafficMode traffic_mode = TrafficMode::kLogical;
  std::optional<ByteCostModel> costs;  ///< defaults to fp32 dims
  bool oracle_mode = false;
  bool roi_gate = false;
  /// Force an exact recompute on every step with m % refresh_interval == 0.
  Position refresh_interval = 0;
  /// Cross-check remove(full, band) against the split prefix every step.
  bool verify_downdate = false;
  /// Collect the prefix-error bound diagnostic on hits (needs oracle_mode).
  bool mass_bound_diagnostics = false;

  void validate() const;
  double tau_for_layer(std::size_t layer) const;
  ByteCostModel cost_model() const;
  std::size_t group_size() const { return n_q_heads / n_kv_heads; }
};

/// One (lhs, rhs) pair of the rectified-prefix error bound.
struct MassBoundSample {
  double lhs = 0.0;
  double rhs = 0.0;
};

struct DecodeMetrics {
  std::int64_t steps = 0;  ///< head decisions
  std::int64_t hits = 0;
  double skip_sum = 0.0;   ///< sum of (p - r)+ / m, misses add 0
  std::int64_t kv_tokens_read = 0;
  std::int64_t full_tokens = 0;  ///< sum of m, what full attention reads
  double kv_bytes = 0.0;
  double match_bytes = 0.0;
  std::int64_t group_span_tokens = 0;  ///< sum of per-group shared KV spans
  std::int64_t group_full_tokens = 0;
  std::int64_t gate_rejections = 0;
  std::int64_t refreshes = 0;
  std::int64_t cancellation_fallbacks = 0;
  double max_downdate_error = 0.0;
  std::vector<double> err_samples;
  std::vector<double> band_mass_samples;
  std::vector<double> delta_gaps;
  std::vector<MassBoundSample> mass_bound_samples;

  double acceptance_rate() const {
    return steps == 0 ? 0.0 : static_cast<double>(hits) / steps;
  }
  void add(const DecodeMetrics& other);
};

struct MetricsReport {
  std::int64_t steps = 0;
  std::int64_t hits = 0;
  double acceptance_rate = 0.0;
  double skip_ratio = 0.0;
  double kv_fraction = 1.0;
  double group_kv_fraction = 1.0;
  std::optional<double> err_mean;
  std::optional<double> err_p50;
  std::optional<double> err_p99;
  std::optional<double> mean_gap;
  std::optional<double> mean_band_mass;
  std::optional<double> mass_bound_hold_rate;
  std::int64_t cancellation_fallbacks = 0;

  nlohmann::json to_json() const;
};

inline constexpr int kReportSchemaVersion = 1;

/// Aggregates raw counters into the reported rates. Requires steps >= 1.
MetricsReport compute_metrics(const DecodeMetrics& metrics);

/// True iff reusing the prefix up to p saves at least what the scan and the
/// band cost: p B_KV >= K B_q + r B_KV.
bool break_even_gate(Position p, Position band, std::size_t window,
                     const ByteCostModel& costs);

/// KV rows one shared-KV group must stream at step m: m - min_h (p_h - r)+,
/// where misses contribute 0 to the minimum.
Position group_kv_span(std::span<const MatchResult> matches, Position m,
                       Position band);

struct OverheadRatio {
  double analytic = 0.0;
  double paper_formula = 0.0;
};

/// Ring footprint relative to the KV cache at context length L.
OverheadRatio aux_overhead_ratio(const EngineConfig& cfg, Position context,
                                 std::size_t dtype_bytes);

/// Prefix-error bound diagnostic for a hit at p reused at m. `q_now` and
/// `q_then` are the post-RoPE queries at m and p, `cached` the stored
/// summary over [1, p - r] and `band_mass` its recorded band mass.
template <RowSource Keys, RowSource Values>
MassBoundSample mass_bound_check(std::span<const double> q_now,
                                 std::span<const double> q_then,
                                 const Keys& keys, const Values& values,
                                 Position p, Position band,
                                 const AttentionSummary& cached,
                                 double band_mass) {
  MassBoundSample out;
  const Position reused = p - band;
  if (reused < 1) return out;
  const TokenRange prefix{1, reused};
  const TokenRange fresh = TokenRange::clipped(reused + 1, p);
  const auto band_now = summarize(q_now, keys, values, fresh);
  const auto reuse = finalize(merge(cached, band_now));
  const auto truth =
      finalize(summarize(q_now, keys, values, TokenRange{1, p}));
  double diff = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    diff += (reuse[i] - truth[i]) * (reuse[i] - truth[i]);
  out.lhs = std::sqrt(diff);

  const double scale = logit_scale(q_now.size());
  double drift = 0.0;
  double max_then = kNegInf;
  std::vector<double> then_logits(static_cast<std::size_t>(reused));
  for (Position t = prefix.lo; t <= prefix.hi; ++t) {
    const auto k = keys.row(static_cast<std::size_t>(t - 1));
    const double now = dot(q_now, k) * scale;
    const double then = dot(q_then, k) * scale;
    drift = std::max(drift, std::abs(now - then));
    then_logits[static_cast<std::size_t>(t - 1)] = then;
    max_then = std::max(max_then, then);
  }
  double z = 0.0;
  double weighted_norm = 0.0;
  for (Position t = prefix.lo; t <= prefix.hi; ++t) {
    const double w =
        std::exp(then_logits[static_cast<std::size_t>(t - 1)] - max_then);
    const auto v = values.row(static_cast<std::size_t>(t - 1));
    double n2 = 0.0;
    for (const auto x : v) n2 += static_cast<double>(x) * x;
    z += w;
    weighted_norm += w * std::sqrt(n2);
  }
  out.rhs = std::expm1(drift) * (1.0 - band_mass) * (weighted_norm / z);
  return out;
}

/// Rectified prefix summaries aligned slot-for-slot with a QueryRing.
class SummaryRing {
 public:
  struct Entry {
    Position position = 0;
    AttentionSummary summary;  ///< covers [1, max(0, position - r)]
    double band_mass = 0.0;
  };

  explicit SummaryRing(std::size_t capacity);

  std::size_t capacity() const { return entries_.size(); }
  std::size_t size() const { return size_; }
  void push(Position pos, AttentionSummary summary, double band_mass);
  std::size_t slot_at(std::size_t i) const {
    return (head_ + entries_.size() - size_ + i) % entries_.size();
  }
  const Entry& at(std::size_t slot) const { return entries_[slot]; }

 private:
  std::vector<Entry> entries_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

struct StepResult {
  std::vector<HeadVector> output;           ///< per query head
  std::vector<MatchResult> match;           ///< per query head
  std::vector<AttentionSummary> full_summary;
  std::vector<Position> group_span;         ///< per KV head
  DecodeMetrics metrics_delta;
};

/// Decoder over one request. T is the storage precision of the KV cache,
/// the query ring and the summary ring; arithmetic is always double.
template <class T>
class BasicDecoder {
 public:
  explicit BasicDecoder(EngineConfig cfg);

  const EngineConfig& config() const { return cfg_; }
  const DecodeMetrics& metrics() const { return metrics_; }
  const TrafficCounter& traffic() const { return traffic_; }
  const KvStore<T>& kv() const { return kv_; }
  const QueryRing<T>& query_ring(std::size_t layer, std::size_t head) const;
  const SummaryRing& summary_ring(std::size_t layer, std::size_t head) const;

  /// Token m of `layer`. q_pre holds n_q_heads x dim pre-RoPE queries,
  /// k_pre n_kv_heads x dim pre-RoPE keys and v n_kv_heads x value_dim.
  StepResult decode_step(std::size_t layer, std::span<const double> q_pre,
                         std::span<const double> k_pre,
                         std::span<const double> v, Position m);

  /// Pushes (q_m, prefix_part) into the head's rings. `full` and
  /// `recent_band` are only used by the downdate cross-check.
  void rectify_append(std::size_t layer, std::size_t head, Position m,
                      std::span<const double> q_pre,
                      const AttentionSummary& full,
                      const AttentionSummary& recent_band,
                      const AttentionSummary& prefix_part, double band_mass,
                      DecodeMetrics* delta = nullptr);

 private:
  struct HeadState {
    QueryRing<T> queries;
    SummaryRing summaries;
  };

  HeadState& head_state(std::size_t layer, std::size_t head);

  EngineConfig cfg_;
  ByteCostModel costs_;
  RopeTable rope_;
  KvStore<T> kv_;
  TrafficCounter traffic_;
  std::vector<HeadState> heads_;  // [layer][q head]
  DecodeMetrics metrics_;
};

using Decoder = BasicDecoder<float>;
using ExactDecoder = BasicDecoder<double>;

extern template class BasicDecoder<float>;
extern template class BasicDecoder<double>;

}  // namespace mac
