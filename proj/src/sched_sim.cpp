#include "mac/sched_sim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include "mac/errors.hpp"

namespace mac::sched {

namespace {

void check(std::int64_t tile, std::size_t workers) {
  if (tile < 1) throw ConfigError("tile size must be >= 1");
  if (workers < 1) throw ConfigError("worker count must be >= 1");
}

std::vector<std::int64_t> tile_counts(std::span<const WorkItem> items,
                                      std::int64_t tile) {
  std::vector<std::int64_t> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    if (it.span < 0) throw ConfigError("work item span must be >= 0");
    out.push_back(tiles_of(it.span, tile));
  }
  return out;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

Plan round_robin(const std::vector<std::int64_t>& tiles, std::int64_t tile,
                 std::size_t workers) {
  Plan plan;
  plan.workers = workers;
  plan.tile = tile;
  plan.assignments.resize(workers);
  std::vector<std::int64_t> load(workers, 0);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i] == 0) continue;
    plan.assignments[i % workers].push_back(tiles[i]);
    load[i % workers] += tiles[i];
  }
  plan.total = std::accumulate(tiles.begin(), tiles.end(), std::int64_t{0});
  plan.makespan = *std::max_element(load.begin(), load.end());
  return plan;
}

}  // namespace

std::int64_t tiles_of(std::int64_t span, std::int64_t tile) {
  return span <= 0 ? 0 : ceil_div(span, tile);
}

Plan plan_lpt(std::span<const WorkItem> items, std::int64_t tile,
              std::size_t workers) {
  check(tile, workers);
  const auto tiles = tile_counts(items, tile);
  const std::int64_t total =
      std::accumulate(tiles.begin(), tiles.end(), std::int64_t{0});
  const auto w = static_cast<std::int64_t>(workers);
  const std::int64_t share = std::max<std::int64_t>(ceil_div(total, w), 1);

  std::vector<std::int64_t> pieces;
  for (std::int64_t t : tiles) {
    while (t > share) {
      pieces.push_back(share);
      t -= share;
    }
    if (t > 0) pieces.push_back(t);
  }
  std::stable_sort(pieces.begin(), pieces.end(), std::greater<>());

  Plan plan;
  plan.workers = workers;
  plan.tile = tile;
  plan.total = total;
  plan.assignments.resize(workers);
  std::vector<std::int64_t> load(workers, 0);
  for (std::int64_t piece : pieces) {
    const auto least = static_cast<std::size_t>(
        std::min_element(load.begin(), load.end()) - load.begin());
    load[least] += piece;
    plan.assignments[least].push_back(piece);
  }
  plan.makespan = *std::max_element(load.begin(), load.end());

  Plan fallback = round_robin(tiles, tile, workers);
  if (fallback.makespan < plan.makespan) return fallback;
  return plan;
}

Baselines baselines(std::span<const WorkItem> items, std::int64_t tile,
                    std::size_t workers) {
  check(tile, workers);
  const auto tiles = tile_counts(items, tile);
  Baselines b;
  const std::int64_t total =
      std::accumulate(tiles.begin(), tiles.end(), std::int64_t{0});
  b.perfect = ceil_div(total, static_cast<std::int64_t>(workers));
  b.naive = round_robin(tiles, tile, workers).makespan;
  return b;
}

std::int64_t optimal_whole_items(std::span<const WorkItem> items,
                                 std::int64_t tile, std::size_t workers) {
  check(tile, workers);
  auto tiles = tile_counts(items, tile);
  std::sort(tiles.begin(), tiles.end(), std::greater<>());
  const std::int64_t total =
      std::accumulate(tiles.begin(), tiles.end(), std::int64_t{0});
  const std::int64_t lower =
      std::max(ceil_div(total, static_cast<std::int64_t>(workers)),
               tiles.empty() ? std::int64_t{0} : tiles.front());
  std::int64_t best = round_robin(tiles, tile, workers).makespan;
  std::vector<std::int64_t> load(workers, 0);

  std::function<void(std::size_t, std::int64_t)> dfs =
      [&](std::size_t i, std::int64_t current) {
        if (current >= best || best == lower) return;
        if (i == tiles.size()) {
          best = current;
          return;
        }
        for (std::size_t k = 0; k < workers; ++k) {
          // Workers with equal load are interchangeable.
          bool seen = false;
          for (std::size_t j = 0; j < k && !seen; ++j)
            seen = load[j] == load[k];
          if (seen) continue;
          load[k] += tiles[i];
          dfs(i + 1, std::max(current, load[k]));
          load[k] -= tiles[i];
        }
      };
  dfs(0, 0);
  return best;
}

std::vector<WorkItem> gen_skewed_spans(std::size_t n, double mean_span,
                                       double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (!(mean_span >= 0.0)) throw ConfigError("mean span must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<WorkItem> items(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = normal(rng);
    items[i].head = i;
    items[i].span = std::llround(
        mean_span * std::exp(sigma * z - 0.5 * sigma * sigma));
  }
  return items;
}

SimRow simulate(std::size_t items, double mean_span, double sigma,
                std::int64_t tile, std::size_t workers, std::uint64_t seed,
                bool exact) {
  const auto spans = gen_skewed_spans(items, mean_span, sigma, seed);
  const auto base = baselines(spans, tile, workers);
  SimRow row;
  row.sigma = sigma;
  row.workers = workers;
  row.tile = tile;
  row.seed = seed;
  row.perfect = base.perfect;
  row.naive = base.naive;
  row.lpt = plan_lpt(spans, tile, workers).makespan;
  if (exact) {
    if (items > 12)
      throw ConfigError("exact optimum is limited to 12 items (got " +
                        std::to_string(items) + ")");
    row.optimum = optimal_whole_items(spans, tile, workers);
  }
  return row;
}

}  // namespace mac::sched
