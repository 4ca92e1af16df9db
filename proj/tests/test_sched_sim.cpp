#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mac/errors.hpp"
#include "mac/sched_sim.hpp"

using namespace mac::sched;

namespace {

std::vector<WorkItem> items_of(std::initializer_list<std::int64_t> spans) {
  std::vector<WorkItem> out;
  for (auto s : spans) out.push_back(WorkItem{0, out.size(), s});
  return out;
}

std::int64_t assigned(const Plan& p) {
  std::int64_t s = 0;
  for (const auto& w : p.assignments) s = std::accumulate(w.begin(), w.end(), s);
  return s;
}

}  // namespace

TEST_CASE("lpt examples") {
  const auto even = items_of({10, 10, 10, 10});
  CHECK(plan_lpt(even, 1, 2).makespan == 20);
  CHECK(baselines(even, 1, 2).perfect == 20);

  const auto odd = items_of({7, 5, 4, 4});
  CHECK(plan_lpt(odd, 1, 2).makespan == 11);
  CHECK(baselines(odd, 1, 2).perfect == 10);
  CHECK(optimal_whole_items(odd, 1, 2) == 11);

  const auto single = items_of({100});
  const auto p = plan_lpt(single, 1, 4);
  CHECK(p.makespan == 25);
  CHECK(assigned(p) == 100);
  CHECK(baselines(single, 1, 4).naive == 100);
}

TEST_CASE("tiles round up and are conserved") {
  const auto items = items_of({65, 64, 1, 0, 200});
  CHECK(tiles_of(65, 64) == 2);
  CHECK(tiles_of(0, 64) == 0);
  const auto p = plan_lpt(items, 64, 3);
  CHECK(p.total == 2 + 1 + 1 + 0 + 4);
  CHECK(assigned(p) == p.total);
  CHECK(p.makespan >= (p.total + 2) / 3);
}

TEST_CASE("baselines") {
  const auto uniform = items_of({8, 8, 8, 8, 8, 8});
  const auto b = baselines(uniform, 1, 3);
  CHECK(b.naive == b.perfect);

  const auto skew = items_of({500, 3, 2, 4, 1, 2, 3, 1});
  CHECK(baselines(skew, 1, 4).naive >= 500);
  CHECK(plan_lpt(skew, 1, 4).makespan == baselines(skew, 1, 4).perfect);

  CHECK_THROWS_AS(plan_lpt(skew, 0, 4), mac::ConfigError);
  CHECK_THROWS_AS(plan_lpt(skew, 1, 0), mac::ConfigError);
  CHECK_THROWS_AS(plan_lpt(items_of({-1}), 1, 2), mac::ConfigError);
}

TEST_CASE("dominance and the LPT ceiling against brute force") {
  std::mt19937_64 rng(51);
  std::uniform_int_distribution<int> n_items(1, 12), n_workers(1, 5);
  std::uniform_int_distribution<std::int64_t> span(0, 400);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<WorkItem> items(static_cast<std::size_t>(n_items(rng)));
    for (auto& it : items) it.span = span(rng);
    const auto w = static_cast<std::size_t>(n_workers(rng));
    const std::int64_t tile = trial % 3 == 0 ? 1 : 16;
    const auto lpt = plan_lpt(items, tile, w).makespan;
    const auto base = baselines(items, tile, w);
    const auto opt = optimal_whole_items(items, tile, w);
    CHECK(base.perfect <= lpt);
    CHECK(lpt <= base.naive);
    CHECK(base.perfect <= opt);
    const double ceiling = 4.0 / 3.0 - 1.0 / (3.0 * static_cast<double>(w));
    CHECK(static_cast<double>(lpt) <= ceiling * static_cast<double>(opt) + 1e-9);
  }
}

TEST_CASE("brute force matches a plain enumeration") {
  std::mt19937_64 rng(52);
  std::uniform_int_distribution<std::int64_t> span(1, 50);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<WorkItem> items(7);
    for (auto& it : items) it.span = span(rng);
    // every assignment of 7 items to 3 workers
    std::int64_t best = INT64_MAX;
    for (int code = 0; code < 2187; ++code) {
      std::int64_t load[3] = {0, 0, 0};
      int c = code;
      for (const auto& it : items) {
        load[c % 3] += it.span;
        c /= 3;
      }
      best = std::min(best, std::max({load[0], load[1], load[2]}));
    }
    CHECK(optimal_whole_items(items, 1, 3) == best);
  }
}

TEST_CASE("skewed spans") {
  const auto flat = gen_skewed_spans(64, 1000.0, 0.0, 3);
  for (const auto& it : flat) CHECK(it.span == 1000);
  CHECK(gen_skewed_spans(64, 1000.0, 0.3, 9)[17].span ==
        gen_skewed_spans(64, 1000.0, 0.3, 9)[17].span);
  const auto a = gen_skewed_spans(64, 1000.0, 0.3, 9);
  const auto b = gen_skewed_spans(64, 1000.0, 0.3, 9);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].span == b[i].span);

  // log-spans are N(ln 1000 - sigma^2/2, sigma^2)
  const double sigma = 0.3;
  const std::size_t n = 256;
  double sum = 0.0, sq = 0.0;
  double worst_mean = 0.0, worst_sd = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = gen_skewed_spans(n, 1000.0, sigma, seed);
    sum = sq = 0.0;
    for (const auto& it : s) {
      const double l = std::log(static_cast<double>(it.span));
      sum += l;
      sq += l * l;
    }
    const double mean = sum / n;
    const double sd = std::sqrt((sq - n * mean * mean) / (n - 1));
    worst_mean = std::max(worst_mean, std::abs(mean - (std::log(1000.0) - sigma * sigma / 2)) /
                                          (sigma / std::sqrt(static_cast<double>(n))));
    worst_sd = std::max(worst_sd, std::abs(sd - sigma) / (sigma / std::sqrt(2.0 * n)));
  }
  CHECK(worst_mean < 4.0);
  CHECK(worst_sd < 4.0);
  CHECK_THROWS_AS(gen_skewed_spans(4, 10.0, -0.1, 1), mac::ConfigError);
}

TEST_CASE("simulate rows") {
  const auto flat = simulate(64, 640.0, 0.0, 64, 8, 1, false);
  CHECK(flat.lpt_over_perfect() == 1.0);
  CHECK(flat.naive_over_perfect() == 1.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto row = simulate(256, 1024.0, 0.3, 64, 8, seed, false);
    CHECK(row.lpt_over_perfect() <= row.naive_over_perfect());
  }
  const auto small = simulate(10, 512.0, 0.3, 64, 3, 4, true);
  CHECK(small.optimum >= small.perfect);
  CHECK_THROWS_AS(simulate(13, 512.0, 0.3, 64, 3, 4, true), mac::ConfigError);
}
