#include "mac/attention_core.hpp"

#include <algorithm>

namespace mac {

RopeTable::RopeTable(std::size_t dim, double base, Position cached_deltas)
    : dim_(dim), base_(base), cached_deltas_(std::max<Position>(cached_deltas, 0)) {
  if (dim == 0 || dim % 2 != 0)
    throw ConfigError("RoPE requires an even, positive head dimension (got " +
                      std::to_string(dim) + ")");
  if (!(base > 0.0)) throw ConfigError("RoPE base must be positive");
  freqs_.resize(dim / 2);
  for (std::size_t j = 0; j < freqs_.size(); ++j)
    freqs_[j] = std::pow(base, -2.0 * static_cast<double>(j) /
                                   static_cast<double>(dim));
  const std::size_t half = freqs_.size();
  cos_table_.resize(static_cast<std::size_t>(cached_deltas_) * half);
  sin_table_.resize(cos_table_.size());
  for (Position delta = 0; delta < cached_deltas_; ++delta) {
    for (std::size_t j = 0; j < half; ++j) {
      const double angle = freqs_[j] * static_cast<double>(delta);
      cos_table_[static_cast<std::size_t>(delta) * half + j] = std::cos(angle);
      sin_table_[static_cast<std::size_t>(delta) * half + j] = std::sin(angle);
    }
  }
}

void RopeTable::rotate_into(std::span<const double> x, Position delta,
                            std::span<double> out) const {
  if (x.size() % 2 != 0)
    throw DimensionError("rope: odd-length vector (" +
                         std::to_string(x.size()) + ")");
  if (x.size() != dim_ || out.size() != dim_)
    throw DimensionError("rope: expected length " + std::to_string(dim_) +
                         ", got " + std::to_string(x.size()));
  const double t = static_cast<double>(delta);
  for (std::size_t j = 0; j < freqs_.size(); ++j) {
    const double angle = freqs_[j] * t;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double x0 = x[2 * j];
    const double x1 = x[2 * j + 1];
    out[2 * j] = x0 * c - x1 * s;
    out[2 * j + 1] = x0 * s + x1 * c;
  }
}

HeadVector rope_rotate(std::span<const double> x, Position t,
                       const RopeTable& table) {
  if (t < 0) throw RangeError("rope_rotate: negative position");
  return rope_rotate_by_delta(x, t, table);
}

HeadVector rope_rotate_by_delta(std::span<const double> x, Position delta,
                                const RopeTable& table) {
  HeadVector out(x.size());
  table.rotate_into(x, delta, out);
  return out;
}

double avg_cos(std::span<const double> x, Position delta,
               const RopeTable& table) {
  if (x.size() != table.dim())
    throw DimensionError("avg_cos: expected length " +
                         std::to_string(table.dim()));
  const auto freqs = table.freqs();
  double energy = 0.0;
  double weighted = 0.0;
  for (std::size_t j = 0; j < freqs.size(); ++j) {
    const double e = x[2 * j] * x[2 * j] + x[2 * j + 1] * x[2 * j + 1];
    energy += e;
    weighted += std::cos(freqs[j] * static_cast<double>(delta)) * e;
  }
  if (energy == 0.0) throw DimensionError("avg_cos: zero vector");
  return weighted / energy;
}

AttentionSummary OnlineSoftmax::summary() const {
  if (count_ == 0) return AttentionSummary::empty(acc_.size());
  AttentionSummary s;
  s.acc.resize(acc_.size());
  const double inv = 1.0 / sum_;
  for (std::size_t i = 0; i < acc_.size(); ++i) s.acc[i] = acc_[i] * inv;
  s.lse = max_ + std::log(sum_);
  s.count = count_;
  return s;
}

namespace detail {

void check_query_dim(std::size_t query_dim, std::size_t key_dim) {
  if (query_dim != key_dim)
    throw DimensionError("query length " + std::to_string(query_dim) +
                         " does not match key length " +
                         std::to_string(key_dim));
}

void check_range(TokenRange range, std::size_t available, const char* what) {
  if (range.lo < 1 || range.hi < range.lo - 1)
    throw RangeError(std::string(what) + ": malformed range [" +
                     std::to_string(range.lo) + ", " +
                     std::to_string(range.hi) + "]");
  if (range.hi > static_cast<Position>(available))
    throw RangeError(std::string(what) + ": range end " +
                     std::to_string(range.hi) + " exceeds " +
                     std::to_string(available) + " stored tokens");
}

}  // namespace detail

AttentionSummary merge(const AttentionSummary& a, const AttentionSummary& b) {
  if (b.is_empty()) return a;
  if (a.is_empty()) return b;
  if (a.acc.size() != b.acc.size())
    throw DimensionError("merge: value dimensions differ");
  const double hi = std::max(a.lse, b.lse);
  const double lo = std::min(a.lse, b.lse);
  AttentionSummary out;
  out.lse = hi + std::log1p(std::exp(lo - hi));
  out.count = a.count + b.count;
  const double wa = std::exp(a.lse - out.lse);
  const double wb = std::exp(b.lse - out.lse);
  out.acc.resize(a.acc.size());
  for (std::size_t i = 0; i < out.acc.size(); ++i)
    out.acc[i] = a.acc[i] * wa + b.acc[i] * wb;
  return out;
}

AttentionSummary remove(const AttentionSummary& a,
                        const AttentionSummary& band, double eps_cancel) {
  if (band.is_empty()) return a;
  if (a.acc.size() != band.acc.size())
    throw DimensionError("remove: value dimensions differ");
  if (band.count > a.count)
    throw MassExceeded("remove: band covers more tokens than the summary");
  if (band.count == a.count) {
    if (std::abs(a.lse - band.lse) <= eps_cancel)
      return AttentionSummary::empty(a.acc.size());
    throw CancellationError(
        "remove: band covers every token but its mass differs from the "
        "summary");
  }
  if (band.lse > a.lse)
    throw MassExceeded("remove: band log-mass exceeds summary log-mass");
  const double gap = a.lse - band.lse;
  if (gap < eps_cancel)
    throw CancellationError(
        "remove: band carries nearly all of the mass; recompute instead");
  AttentionSummary out;
  out.lse = band.lse + std::log(std::expm1(gap));
  out.count = a.count - band.count;
  const double wa = std::exp(a.lse - out.lse);
  const double wb = std::exp(band.lse - out.lse);
  out.acc.resize(a.acc.size());
  for (std::size_t i = 0; i < out.acc.size(); ++i)
    out.acc[i] = a.acc[i] * wa - band.acc[i] * wb;
  return out;
}

HeadVector finalize(const AttentionSummary& s) {
  if (s.is_empty()) throw EmptySummary("finalize: summary covers no tokens");
  return s.acc;
}

double relative_error(std::span<const double> approx,
                      std::span<const double> exact) {
  if (approx.size() != exact.size())
    throw DimensionError("relative_error: length mismatch");
  double diff = 0.0;
  double norm = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    const double e = approx[i] - exact[i];
    diff += e * e;
    norm += exact[i] * exact[i];
  }
  if (norm == 0.0) return std::sqrt(diff);
  return std::sqrt(diff / norm);
}

}  // namespace mac
