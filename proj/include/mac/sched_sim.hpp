#pragma once

// Load-balancing model for the amend/complete stage: per-head band+tail
// spans cut into tiles and packed onto a fixed worker pool.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mac::sched {

struct WorkItem {
  std::size_t request = 0;
  std::size_t head = 0;
  std::int64_t span = 0;  ///< tokens
};

struct Plan {
  /// Tile counts handed to each worker.
  std::vector<std::vector<std::int64_t>> assignments;
  std::int64_t makespan = 0;
  std::int64_t total = 0;
  std::size_t workers = 0;
  std::int64_t tile = 0;
};

struct Baselines {
  std::int64_t perfect = 0;  ///< ceil(total / W)
  std::int64_t naive = 0;    ///< round-robin, items kept whole
};

std::int64_t tiles_of(std::int64_t span, std::int64_t tile);

/// Longest-processing-time packing. Items larger than the balanced share
/// ceil(total / W) are split into share-sized pieces, pieces are placed
/// largest first on the least-loaded worker. Never worse than round-robin.
Plan plan_lpt(std::span<const WorkItem> items, std::int64_t tile,
              std::size_t workers);

Baselines baselines(std::span<const WorkItem> items, std::int64_t tile,
                    std::size_t workers);

/// Best makespan when every item stays on one worker, by exhaustive search.
/// Meant for small instances.
std::int64_t optimal_whole_items(std::span<const WorkItem> items,
                                 std::int64_t tile, std::size_t workers);

/// n lognormal spans with log-space spread sigma and expected value
/// mean_span; sigma = 0 gives mean_span exactly.
std::vector<WorkItem> gen_skewed_spans(std::size_t n, double mean_span,
                                       double sigma, std::uint64_t seed);

struct SimRow {
  double sigma = 0.0;
  std::size_t workers = 0;
  std::int64_t tile = 0;
  std::uint64_t seed = 0;
  std::int64_t perfect = 0;
  std::int64_t lpt = 0;
  std::int64_t naive = 0;
  std::int64_t optimum = -1;  ///< -1 unless computed

  // an empty instance counts as perfectly balanced
  double lpt_over_perfect() const {
    return perfect == 0 ? 1.0 : static_cast<double>(lpt) / static_cast<double>(perfect);
  }
  double naive_over_perfect() const {
    return perfect == 0 ? 1.0 : static_cast<double>(naive) / static_cast<double>(perfect);
  }
};

SimRow simulate(std::size_t items, double mean_span, double sigma,
                std::int64_t tile, std::size_t workers, std::uint64_t seed,
                bool exact);

}  // namespace mac::sched
