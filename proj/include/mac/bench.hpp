#pragma once

// Drivers shared by the CLI and the acceptance suite: replay a trace through
// the decoder, and evaluate (K, r, tau, seed) grids.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

#include "mac/decoder.hpp"
#include "mac/workload.hpp"

namespace mac {

/// Copies the trace's shapes into `base`.
EngineConfig config_for(const Trace& trace, EngineConfig base);

/// Decodes every token of every layer. `exact` selects 64-bit storage.
DecodeMetrics run_trace(const Trace& trace, const EngineConfig& cfg,
                        bool exact = false);

/// (1 - clamp(err, 0, 1)) / kv_fraction.
double fidelity_efficiency(double err_mean, double kv_fraction);

struct SweepGrid {
  std::vector<std::size_t> windows;
  std::vector<Position> bands;
  std::vector<double> taus;
  std::vector<std::uint64_t> seeds;
  SyntheticSpec workload;                   ///< used when trace_dir is unset
  std::optional<std::filesystem::path> trace_dir;
  double err_gate = 0.05;

  void validate() const;
  std::size_t cells() const {
    return windows.size() * bands.size() * taus.size() * seeds.size();
  }
};

struct SweepRow {
  std::size_t window = 0;
  Position band = 0;
  double tau = 0.0;
  std::uint64_t seed = 0;
  MetricsReport report;
  double fidelity_efficiency = 0.0;
  bool pass = false;
};

/// Evaluates every cell (oracle mode forced on). Cells run on `threads`
/// workers; rows come back in grid order (window, band, tau, seed).
std::vector<SweepRow> run_sweep(const SweepGrid& grid, EngineConfig base,
                                std::size_t threads = 0);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace mac
