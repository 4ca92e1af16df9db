#include "mac/bench.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include <fmt/format.h>

namespace mac {

EngineConfig config_for(const Trace& trace, EngineConfig base) {
  base.dim = trace.dim;
  base.value_dim = trace.value_dim;
  base.n_layers = trace.n_layers;
  base.n_q_heads = trace.n_q_heads;
  base.n_kv_heads = trace.n_kv_heads;
  return base;
}

namespace {

template <class T>
DecodeMetrics replay(const Trace& trace, const EngineConfig& cfg) {
  BasicDecoder<T> dec(config_for(trace, cfg));
  std::vector<double> q, k, v;
  auto widen = [](std::span<const float> src, std::vector<double>& dst) {
    dst.assign(src.begin(), src.end());
  };
  for (Position m = 1; m <= trace.seq_len; ++m) {
    for (std::size_t layer = 0; layer < trace.n_layers; ++layer) {
      widen(trace.q_row(layer, m), q);
      widen(trace.k_row(layer, m), k);
      widen(trace.v_row(layer, m), v);
      dec.decode_step(layer, q, k, v, m);
    }
  }
  return dec.metrics();
}

}  // namespace

DecodeMetrics run_trace(const Trace& trace, const EngineConfig& cfg,
                        bool exact) {
  return exact ? replay<double>(trace, cfg) : replay<float>(trace, cfg);
}

double fidelity_efficiency(double err_mean, double kv_fraction) {
  const double err = std::clamp(err_mean, 0.0, 1.0);
  return (1.0 - err) / kv_fraction;
}

void SweepGrid::validate() const {
  if (windows.empty() || bands.empty() || taus.empty() || seeds.empty())
    throw ConfigError("sweep: every grid axis needs at least one value");
  if (!(err_gate >= 0.0)) throw ConfigError("sweep: err gate must be >= 0");
}

std::vector<SweepRow> run_sweep(const SweepGrid& grid, EngineConfig base,
                                std::size_t threads) {
  grid.validate();
  base.oracle_mode = true;

  // One trace per seed, generated (or loaded) up front and shared.
  std::map<std::uint64_t, Trace> traces;
  if (grid.trace_dir) {
    const Trace loaded = read_trace(*grid.trace_dir);
    for (auto seed : grid.seeds) traces.emplace(seed, loaded);
  } else {
    for (auto seed : grid.seeds) {
      SyntheticSpec spec = grid.workload;
      spec.seed = seed;
      traces.emplace(seed, gen_synthetic(spec));
    }
  }

  std::vector<SweepRow> rows;
  rows.reserve(grid.cells());
  for (auto w : grid.windows)
    for (auto r : grid.bands)
      for (auto tau : grid.taus)
        for (auto seed : grid.seeds) {
          SweepRow row;
          row.window = w;
          row.band = r;
          row.tau = tau;
          row.seed = seed;
          rows.push_back(row);
        }
  for (const auto& row : rows) {
    EngineConfig cfg = base;
    cfg.window = row.window;
    cfg.band = row.band;
    cfg.tau = row.tau;
    cfg.layer_tau.clear();
    cfg.validate();
  }

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, rows.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      try {
        SweepRow& row = rows[i];
        EngineConfig cfg = base;
        cfg.window = row.window;
        cfg.band = row.band;
        cfg.tau = row.tau;
        cfg.layer_tau.clear();
        row.report = compute_metrics(run_trace(traces.at(row.seed), cfg));
        row.fidelity_efficiency =
            fidelity_efficiency(*row.report.err_mean, row.report.kv_fraction);
        row.pass = *row.report.err_mean <= grid.err_gate;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "window,band,tau,seed,acceptance,skip,kv_fraction,err_mean,"
         "fidelity_efficiency,pass\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6e},{:.6f},{}\n",
                       r.window, r.band, r.tau, r.seed,
                       r.report.acceptance_rate, r.report.skip_ratio,
                       r.report.kv_fraction, *r.report.err_mean,
                       r.fidelity_efficiency, r.pass ? 1 : 0);
  }
}

}  // namespace mac
