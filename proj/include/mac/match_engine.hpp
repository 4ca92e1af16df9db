#pragma once

// Query matching: per-head ring of recent pre-RoPE queries, the L2
// nearest-neighbour scan with the dimension-aware acceptance radius, and the
// chi-square threshold calibration.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mac/attention_core.hpp"

namespace mac {

enum class MatchSpace {
  kPreRope,   ///< compare raw queries (default)
  kPostRope,  ///< compare R(m) q_m with R(p) q_p, i.e. q_m against R(p - m) q_p
};

struct MatchConfig {
  std::size_t dim = 64;
  double tau = 0.45;
  std::size_t window = 1024;
  std::optional<Position> delta_max;
  MatchSpace space = MatchSpace::kPreRope;

  void validate() const;
};

struct MatchResult {
  bool hit = false;
  Position p = 0;             ///< matched position, valid iff hit
  double sq_dist = 0.0;       ///< squared distance of the best candidate
  std::size_t candidates_scanned = 0;
  std::size_t slot = 0;       ///< ring slot of the best candidate
};

/// Acceptance radius sqrt(2d) (1 - tau) for dimension d.
double threshold(std::size_t dim, double tau);

/// Fixed-capacity FIFO of (position, query, |query|^2) for one
/// (request, layer, query-head). Slots are reused in insertion order, so a
/// slot index stays valid until K further pushes.
template <class T>
class QueryRing {
 public:
  struct Entry {
    Position position = 0;
    HeadVector query;
    double sq_norm = 0.0;
  };

  QueryRing(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  /// Appends q at `pos`, evicting and returning the oldest entry when full.
  std::optional<Entry> push(Position pos, std::span<const double> q);

  /// Slot written by the next push.
  std::size_t next_slot() const { return head_; }

  /// i-th live entry in insertion order (0 = oldest).
  std::size_t slot_at(std::size_t i) const {
    return (head_ + capacity_ - size_ + i) % capacity_;
  }
  Position position(std::size_t slot) const { return positions_[slot]; }
  std::span<const T> query(std::size_t slot) const {
    return {storage_.data() + slot * dim_, dim_};
  }
  double sq_norm(std::size_t slot) const { return sq_norms_[slot]; }
  std::optional<Position> last_position() const;

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::vector<T> storage_;
  std::vector<Position> positions_;
  std::vector<double> sq_norms_;
};

/// Scans the ring for the entry nearest to q (pre-RoPE query at position m)
/// and accepts it when its squared distance is below threshold(d, tau)^2.
/// Ties on distance resolve to the most recent position. `rope` is required
/// for MatchSpace::kPostRope and ignored otherwise.
template <class T>
MatchResult match_query(std::span<const double> q, Position m,
                        const QueryRing<T>& ring, const MatchConfig& cfg,
                        const RopeTable* rope = nullptr);

/// Chi-square CDF with `dof` degrees of freedom: P(dof/2, x/2).
double chi2_cdf(double dof, double x);

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

/// Threshold tau whose false-positive rate under the isotropic Gaussian null
/// is alpha: chi2_cdf(d, d (1 - tau)^2) = alpha. Clamped at 0 when alpha is
/// so large that the raw solution would be negative.
double calibrate_tau(std::size_t dim, double alpha);

extern template class QueryRing<float>;
extern template class QueryRing<double>;

}  // namespace mac
