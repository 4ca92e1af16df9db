#pragma once

// Exact attention math: rotary position embeddings, the streaming
// full-attention oracle, and the attention-summary algebra used by the
// reuse pipeline (merge, remove, finalize).

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mac/errors.hpp"

namespace mac {

/// 1-based token position in a sequence.
using Position = std::int64_t;

/// A single query, key, or value vector for one head.
using HeadVector = std::vector<double>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Default cancellation threshold for remove(), in the log domain.
inline constexpr double kCancelEpsilon = 1e-6;

/// Inclusive 1-based token interval; hi == lo - 1 denotes the empty range.
struct TokenRange {
  Position lo = 1;
  Position hi = 0;

  /// Builds [lo, hi] with lo clipped to 1; returns an empty range when the
  /// clipped interval has no tokens.
  static TokenRange clipped(Position lo, Position hi) {
    lo = lo < 1 ? 1 : lo;
    if (hi < lo) return TokenRange{lo, lo - 1};
    return TokenRange{lo, hi};
  }

  Position size() const { return hi >= lo ? hi - lo + 1 : 0; }
  bool empty() const { return hi < lo; }
  bool operator==(const TokenRange&) const = default;
};

/// Frequencies for the rotary embedding of an even head dimension d:
/// omega_j = base^(-2(j-1)/d) for j = 1..d/2, applied to consecutive pairs.
class RopeTable {
 public:
  explicit RopeTable(std::size_t dim, double base = 10000.0,
                     Position cached_deltas = 0);

  std::size_t dim() const { return dim_; }
  double base() const { return base_; }
  std::span<const double> freqs() const { return freqs_; }

  /// Rotates every pair (x[2j], x[2j+1]) by angle omega_j * delta. Negative
  /// deltas rotate backwards. `out` may alias `x`.
  void rotate_into(std::span<const double> x, Position delta,
                   std::span<double> out) const;

  /// x . R(delta) y, using the precomputed angle table when
  /// |delta| < cached_deltas.
  template <class T>
  double rotated_dot(std::span<const double> x, std::span<const T> y,
                     Position delta) const;

 private:
  std::size_t dim_;
  double base_;
  std::vector<double> freqs_;
  Position cached_deltas_ = 0;
  std::vector<double> cos_table_;  // [delta][j]
  std::vector<double> sin_table_;
};

template <class T>
double RopeTable::rotated_dot(std::span<const double> x, std::span<const T> y,
                              Position delta) const {
  // (R y)_{2j} = c y0 - s y1, (R y)_{2j+1} = s y0 + c y1
  const std::size_t half = freqs_.size();
  const Position mag = delta < 0 ? -delta : delta;
  const bool cached = mag < cached_deltas_;
  const double sign = delta < 0 ? -1.0 : 1.0;
  const double* ct = cached ? cos_table_.data() + mag * half : nullptr;
  const double* st = cached ? sin_table_.data() + mag * half : nullptr;
  double sum = 0.0;
  for (std::size_t j = 0; j < half; ++j) {
    double c, s;
    if (cached) {
      c = ct[j];
      s = sign * st[j];
    } else {
      const double angle = freqs_[j] * static_cast<double>(delta);
      c = std::cos(angle);
      s = std::sin(angle);
    }
    const double y0 = static_cast<double>(y[2 * j]);
    const double y1 = static_cast<double>(y[2 * j + 1]);
    sum += x[2 * j] * (c * y0 - s * y1) + x[2 * j + 1] * (s * y0 + c * y1);
  }
  return sum;
}

/// R(t) x for a non-negative absolute position t.
HeadVector rope_rotate(std::span<const double> x, Position t,
                       const RopeTable& table);

/// R(delta) x for any signed delta; used for relative-phase comparisons.
HeadVector rope_rotate_by_delta(std::span<const double> x, Position delta,
                                const RopeTable& table);

/// Energy-weighted mean of cos(omega_j * delta) over the frequency pairs of
/// x. Satisfies |x - R(delta) x|^2 = 2 |x|^2 (1 - avg_cos).
double avg_cos(std::span<const double> x, Position delta,
               const RopeTable& table);

/// Partial softmax-attention result over a token set, stored as the
/// normalized accumulator S/Z together with log Z. The empty summary has
/// lse = -inf, count = 0 and a zero accumulator.
struct AttentionSummary {
  HeadVector acc;
  double lse = kNegInf;
  std::int64_t count = 0;

  static AttentionSummary empty(std::size_t value_dim) {
    return AttentionSummary{HeadVector(value_dim, 0.0), kNegInf, 0};
  }

  bool is_empty() const { return count == 0; }
  bool operator==(const AttentionSummary&) const = default;
};

/// Row-major matrix view; row(i) is the i-th vector (0-based).
template <class T>
class DenseRows {
 public:
  using value_type = T;

  DenseRows() = default;
  DenseRows(const T* data, std::size_t rows, std::size_t dim)
      : data_(data), rows_(rows), dim_(dim) {}
  DenseRows(std::span<const T> data, std::size_t dim)
      : data_(data.data()), rows_(dim == 0 ? 0 : data.size() / dim), dim_(dim) {}

  std::size_t size() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::span<const T> row(std::size_t i) const {
    return {data_ + i * dim_, dim_};
  }

 private:
  const T* data_ = nullptr;
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
};

/// Anything that hands out fixed-width token rows by 0-based index.
template <class R>
concept RowSource = requires(const R& rows, std::size_t i) {
  typename R::value_type;
  { rows.size() } -> std::convertible_to<std::size_t>;
  { rows.dim() } -> std::convertible_to<std::size_t>;
  { rows.row(i) } -> std::convertible_to<std::span<const typename R::value_type>>;
};

/// Double-precision dot product with a fixed reduction order.
template <class T>
double dot(std::span<const double> a, std::span<const T> b) {
  const std::size_t n = a.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * static_cast<double>(b[i]);
    s1 += a[i + 1] * static_cast<double>(b[i + 1]);
    s2 += a[i + 2] * static_cast<double>(b[i + 2]);
    s3 += a[i + 3] * static_cast<double>(b[i + 3]);
  }
  for (; i < n; ++i) s0 += a[i] * static_cast<double>(b[i]);
  return (s0 + s1) + (s2 + s3);
}

inline double logit_scale(std::size_t dim) {
  return 1.0 / std::sqrt(static_cast<double>(dim));
}

/// Running-max softmax accumulator. Feeding tokens one at a time and
/// reading summary() at any point yields the summary of the tokens so far.
class OnlineSoftmax {
 public:
  explicit OnlineSoftmax(std::size_t value_dim) : acc_(value_dim, 0.0) {}

  template <class T>
  void add(double logit, std::span<const T> value) {
    if (logit > max_) {
      const double rescale = std::exp(max_ - logit);
      sum_ = sum_ * rescale + 1.0;
      for (std::size_t i = 0; i < acc_.size(); ++i)
        acc_[i] = acc_[i] * rescale + static_cast<double>(value[i]);
      max_ = logit;
    } else {
      const double w = std::exp(logit - max_);
      sum_ += w;
      for (std::size_t i = 0; i < acc_.size(); ++i)
        acc_[i] += w * static_cast<double>(value[i]);
    }
    ++count_;
  }

  std::int64_t count() const { return count_; }
  AttentionSummary summary() const;

 private:
  double max_ = kNegInf;
  double sum_ = 0.0;
  HeadVector acc_;
  std::int64_t count_ = 0;
};

namespace detail {

void check_query_dim(std::size_t query_dim, std::size_t key_dim);
void check_range(TokenRange range, std::size_t available, const char* what);

}  // namespace detail

/// Summary of the tokens in `range` (1-based over keys/values) under the
/// post-RoPE query q, with logits q.k / sqrt(d).
template <RowSource Keys, RowSource Values>
AttentionSummary summarize(std::span<const double> q, const Keys& keys,
                           const Values& values, TokenRange range) {
  detail::check_range(range, keys.size() < values.size() ? keys.size()
                                                         : values.size(),
                      "summarize");
  const std::size_t value_dim = values.dim();
  OnlineSoftmax acc(value_dim);
  if (range.empty()) return AttentionSummary::empty(value_dim);
  detail::check_query_dim(q.size(), keys.dim());
  const double scale = logit_scale(q.size());
  for (Position t = range.lo; t <= range.hi; ++t) {
    const auto i = static_cast<std::size_t>(t - 1);
    acc.add(dot(q, keys.row(i)) * scale, values.row(i));
  }
  return acc.summary();
}

/// One streaming pass over `range` that also snapshots the prefix ending at
/// `split` and accumulates the remainder separately.
struct SplitSummary {
  AttentionSummary head;   ///< [range.lo, split]
  AttentionSummary tail;   ///< [split + 1, range.hi]
  AttentionSummary whole;  ///< [range.lo, range.hi]; bit-identical to summarize()
};

template <RowSource Keys, RowSource Values>
SplitSummary summarize_split(std::span<const double> q, const Keys& keys,
                             const Values& values, TokenRange range,
                             Position split) {
  detail::check_range(range, keys.size() < values.size() ? keys.size()
                                                         : values.size(),
                      "summarize_split");
  const std::size_t value_dim = values.dim();
  OnlineSoftmax whole(value_dim);
  OnlineSoftmax tail(value_dim);
  SplitSummary out;
  if (range.empty()) {
    out.head = out.tail = out.whole = AttentionSummary::empty(value_dim);
    return out;
  }
  detail::check_query_dim(q.size(), keys.dim());
  const double scale = logit_scale(q.size());
  bool head_taken = false;
  if (split < range.lo) {
    out.head = AttentionSummary::empty(value_dim);
    head_taken = true;
  }
  for (Position t = range.lo; t <= range.hi; ++t) {
    const auto i = static_cast<std::size_t>(t - 1);
    const double logit = dot(q, keys.row(i)) * scale;
    const auto v = values.row(i);
    whole.add(logit, v);
    if (t > split) tail.add(logit, v);
    if (t == split) {
      out.head = whole.summary();
      head_taken = true;
    }
  }
  out.whole = whole.summary();
  if (!head_taken) out.head = out.whole;
  out.tail = tail.summary();
  return out;
}

/// Combines summaries of two disjoint token sets.
AttentionSummary merge(const AttentionSummary& a, const AttentionSummary& b);

/// Summary of a's tokens minus band's tokens (band must be a subset).
/// Throws CancellationError when the remainder would carry less than
/// ~eps_cancel of a's mass in the log domain, MassExceeded when band.lse >
/// a.lse.
AttentionSummary remove(const AttentionSummary& a,
                        const AttentionSummary& band,
                        double eps_cancel = kCancelEpsilon);

/// The attention output S/Z. Throws EmptySummary on an empty summary.
HeadVector finalize(const AttentionSummary& s);

struct FullAttention {
  HeadVector output;
  AttentionSummary summary;
};

/// Exact causal attention of q over tokens [1, m]. This is the fidelity
/// oracle for every error measurement.
template <RowSource Keys, RowSource Values>
FullAttention attend_full(std::span<const double> q, const Keys& keys,
                          const Values& values, Position m) {
  if (m < 1) throw RangeError("attend_full: m must be >= 1");
  if (static_cast<std::size_t>(m) > keys.size() ||
      static_cast<std::size_t>(m) > values.size())
    throw RangeError("attend_full: m = " + std::to_string(m) +
                     " exceeds stored tokens");
  FullAttention out;
  out.summary = summarize(q, keys, values, TokenRange{1, m});
  out.output = finalize(out.summary);
  return out;
}

/// Rounds the accumulator and log-mass to storage precision T (float for
/// single-precision storage, double for the pure 64-bit mode).
template <class T>
AttentionSummary round_to(const AttentionSummary& s) {
  AttentionSummary out = s;
  for (double& x : out.acc) x = static_cast<double>(static_cast<T>(x));
  out.lse = static_cast<double>(static_cast<T>(s.lse));
  return out;
}

/// Relative L2 error |approx - exact| / |exact| (absolute when exact = 0).
double relative_error(std::span<const double> approx,
                      std::span<const double> exact);

}  // namespace mac
