#include "mac/match_engine.hpp"

#include <cmath>
#include <string>

namespace mac {

void MatchConfig::validate() const {
  if (dim == 0) throw ConfigError("match: head dimension must be >= 1");
  if (!(tau >= 0.0 && tau < 1.0))
    throw ConfigError("match: tau must lie in [0, 1), got " +
                      std::to_string(tau));
  if (window == 0) throw ConfigError("match: window K must be >= 1");
  if (delta_max && *delta_max < 1)
    throw ConfigError("match: delta_max must be >= 1 when set");
}

double threshold(std::size_t dim, double tau) {
  if (dim == 0) throw ConfigError("threshold: dimension must be >= 1");
  if (!(tau >= 0.0 && tau < 1.0))
    throw ConfigError("threshold: tau must lie in [0, 1)");
  return std::sqrt(2.0 * static_cast<double>(dim)) * (1.0 - tau);
}

template <class T>
QueryRing<T>::QueryRing(std::size_t capacity, std::size_t dim)
    : capacity_(capacity),
      dim_(dim),
      storage_(capacity * dim),
      positions_(capacity, 0),
      sq_norms_(capacity, 0.0) {
  if (capacity == 0) throw ConfigError("query ring: capacity must be >= 1");
}

template <class T>
std::optional<Position> QueryRing<T>::last_position() const {
  if (size_ == 0) return std::nullopt;
  return positions_[(head_ + capacity_ - 1) % capacity_];
}

template <class T>
std::optional<typename QueryRing<T>::Entry> QueryRing<T>::push(
    Position pos, std::span<const double> q) {
  if (q.size() != dim_)
    throw DimensionError("query ring: expected length " +
                         std::to_string(dim_) + ", got " +
                         std::to_string(q.size()));
  if (auto last = last_position(); last && pos <= *last)
    throw RangeError("query ring: position " + std::to_string(pos) +
                     " does not follow " + std::to_string(*last));

  std::optional<Entry> evicted;
  const std::size_t slot = head_;
  if (size_ == capacity_) {
    Entry e;
    e.position = positions_[slot];
    e.sq_norm = sq_norms_[slot];
    const auto old = query(slot);
    e.query.assign(old.begin(), old.end());
    evicted = std::move(e);
  } else {
    ++size_;
  }

  T* dst = storage_.data() + slot * dim_;
  HeadVector stored(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    dst[i] = static_cast<T>(q[i]);
    stored[i] = static_cast<double>(dst[i]);
  }
  positions_[slot] = pos;
  // Same reduction as the scan's cross term, so identical queries give an
  // exactly zero distance.
  sq_norms_[slot] = dot(std::span<const double>(stored),
                        std::span<const double>(stored));
  head_ = (head_ + 1) % capacity_;
  return evicted;
}

template <class T>
MatchResult match_query(std::span<const double> q, Position m,
                        const QueryRing<T>& ring, const MatchConfig& cfg,
                        const RopeTable* rope) {
  if (q.size() != ring.dim() || q.size() != cfg.dim)
    throw DimensionError("match_query: query length " +
                         std::to_string(q.size()) + " does not match ring/" +
                         "config dimension " + std::to_string(cfg.dim));
  if (cfg.space == MatchSpace::kPostRope && rope == nullptr)
    throw ConfigError("match_query: post-RoPE matching needs a RoPE table");

  MatchResult best;
  if (ring.empty()) return best;

  const double q_norm = dot(q, q);
  const double radius = threshold(cfg.dim, cfg.tau);
  const double radius_sq = radius * radius;

  bool have = false;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const std::size_t slot = ring.slot_at(i);
    const Position p = ring.position(slot);
    if (p >= m)
      throw RangeError("match_query: ring holds position " +
                       std::to_string(p) + " not before m = " +
                       std::to_string(m));
    if (cfg.delta_max && m - p > *cfg.delta_max) continue;
    ++best.candidates_scanned;
    const auto cand = ring.query(slot);
    const double cross = cfg.space == MatchSpace::kPreRope
                             ? dot(q, cand)
                             : rope->rotated_dot(q, cand, p - m);
    double d2 = q_norm + ring.sq_norm(slot) - 2.0 * cross;
    if (d2 < 0.0) d2 = 0.0;
    // Entries are visited oldest first, so <= keeps the most recent tie.
    if (!have || d2 <= best.sq_dist) {
      have = true;
      best.sq_dist = d2;
      best.p = p;
      best.slot = slot;
    }
  }
  best.hit = have && best.sq_dist < radius_sq;
  return best;
}

namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxIter = 10000;

double gamma_p_series(double a, double x) {
  double ap = a;
  double del = 1.0 / a;
  double sum = del;
  for (int n = 0; n < kMaxIter; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper tail Q(a, x) by the modified Lentz continued fraction.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gamma_p(double a, double x) {
  if (!(a > 0.0)) throw ConfigError("gamma_p: shape must be positive");
  if (x < 0.0) throw ConfigError("gamma_p: x must be non-negative");
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_fraction(a, x);
}

double chi2_cdf(double dof, double x) {
  if (!(dof >= 1.0)) throw ConfigError("chi2_cdf: dof must be >= 1");
  if (x < 0.0) throw ConfigError("chi2_cdf: x must be non-negative");
  return gamma_p(0.5 * dof, 0.5 * x);
}

double calibrate_tau(std::size_t dim, double alpha) {
  if (dim == 0) throw ConfigError("calibrate_tau: dimension must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("calibrate_tau: alpha must lie in (0, 1)");
  const double d = static_cast<double>(dim);

  // Invert the monotone CDF by bisection on x = d (1 - tau)^2.
  double lo = 0.0;
  double hi = d;
  while (chi2_cdf(d, hi) < alpha) hi *= 2.0;
  for (int i = 0; i < 400 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_cdf(d, mid) < alpha)
      lo = mid;
    else
      hi = mid;
  }
  const double x = 0.5 * (lo + hi);
  const double tau = 1.0 - std::sqrt(x / d);
  return tau < 0.0 ? 0.0 : tau;
}

template class QueryRing<float>;
template class QueryRing<double>;

template MatchResult match_query<float>(std::span<const double>, Position,
                                        const QueryRing<float>&,
                                        const MatchConfig&, const RopeTable*);
template MatchResult match_query<double>(std::span<const double>, Position,
                                         const QueryRing<double>&,
                                         const MatchConfig&, const RopeTable*);

}  // namespace mac
