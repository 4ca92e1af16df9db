// mac_bench: single runs, sweep grids, threshold calibration, scheduler
// simulation and trace generation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "mac/bench.hpp"
#include "mac/match_engine.hpp"
#include "mac/sched_sim.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

// Every value a flag may override; unset means "config file or default".
struct WorkloadFlags {
  std::optional<std::string> preset;
  std::optional<std::string> trace;
  std::optional<std::uint64_t> seed;
  std::optional<mac::Position> seq_len;
  std::optional<std::size_t> dim, value_dim, layers, q_heads, kv_heads;
  std::optional<double> rep_prob, noise_eps, key_corr, key_gain;
  std::optional<mac::Position> rep_gap_max, rep_gap_min;

  void attach(CLI::App& app, bool with_trace) {
    app.add_option("--synthetic,--preset", preset, "Workload preset")
        ->check(CLI::IsMember(mac::preset_names()));
    if (with_trace) app.add_option("--trace", trace, "Trace directory to replay");
    app.add_option("--seed", seed);
    app.add_option("--seq-len", seq_len);
    app.add_option("--dim", dim, "Head dimension");
    app.add_option("--value-dim", value_dim);
    app.add_option("--layers", layers);
    app.add_option("--q-heads", q_heads);
    app.add_option("--kv-heads", kv_heads);
    app.add_option("--rep-prob", rep_prob);
    app.add_option("--noise-eps", noise_eps);
    app.add_option("--rep-gap-max", rep_gap_max);
    app.add_option("--rep-gap-min", rep_gap_min);
    app.add_option("--key-corr", key_corr);
    app.add_option("--key-gain", key_gain);
  }

  mac::SyntheticSpec resolve(const json& file) const {
    const std::string name =
        preset.value_or(file.value("preset", std::string("redundant")));
    mac::SyntheticSpec s = mac::preset(name);
    if (file.contains("workload")) s = mac::SyntheticSpec::from_json(file["workload"], s);
    auto put = [](auto& field, const auto& flag) {
      if (flag) field = *flag;
    };
    put(s.seed, seed);
    put(s.seq_len, seq_len);
    put(s.dim, dim);
    if (dim && !value_dim && !(file.contains("workload") && file["workload"].contains("value_dim")))
      s.value_dim = *dim;
    put(s.value_dim, value_dim);
    put(s.n_layers, layers);
    put(s.n_q_heads, q_heads);
    put(s.n_kv_heads, kv_heads);
    put(s.rep_prob, rep_prob);
    put(s.noise_eps, noise_eps);
    put(s.rep_gap_max, rep_gap_max);
    put(s.rep_gap_min, rep_gap_min);
    put(s.key_corr, key_corr);
    put(s.key_gain, key_gain);
    s.validate();
    return s;
  }

  std::optional<fs::path> trace_dir(const json& file) const {
    if (trace) return fs::path(*trace);
    if (file.contains("trace")) return fs::path(file["trace"].get<std::string>());
    return std::nullopt;
  }
};

struct EngineFlags {
  std::optional<std::size_t> window;
  std::optional<mac::Position> band;
  std::optional<double> tau;
  std::vector<double> layer_tau;
  std::optional<mac::Position> delta_max;
  std::optional<std::string> space;
  std::optional<std::size_t> page_size;
  std::optional<mac::Position> refresh;
  bool oracle = false;
  bool exact = false;
  bool roi_gate = false;
  bool verify_downdate = false;
  bool mass_bound = false;

  void attach(CLI::App& app, bool single_point) {
    if (single_point) {
      app.add_option("--window", window, "Search window K");
      app.add_option("--band", band, "Rectification band r");
      app.add_option("--tau", tau, "Match threshold");
      app.add_option("--layer-tau", layer_tau, "Per-layer thresholds");
      app.add_flag("--oracle", oracle, "Compare against full attention");
      app.add_flag("--mass-bound", mass_bound, "Collect the prefix-error bound diagnostic");
    }
    app.add_option("--delta-max", delta_max, "Distance cap on matches");
    app.add_option("--space", space, "Match space")->check(CLI::IsMember({"pre_rope", "post_rope"}));
    app.add_option("--page-size", page_size);
    app.add_option("--refresh", refresh, "Exact recompute every N steps");
    app.add_flag("--exact", exact, "64-bit storage");
    app.add_flag("--roi-gate", roi_gate, "Treat unprofitable matches as misses");
    app.add_flag("--verify-downdate", verify_downdate);
  }

  mac::EngineConfig resolve(const json& file) const {
    mac::EngineConfig c;
    const json e = file.value("engine", json::object());
    c.window = e.value("window", c.window);
    c.band = e.value("band", c.band);
    c.tau = e.value("tau", c.tau);
    c.layer_tau = e.value("layer_tau", c.layer_tau);
    if (e.contains("delta_max")) c.delta_max = e["delta_max"].get<mac::Position>();
    std::string sp = e.value("space", std::string("pre_rope"));
    c.rope_base = e.value("rope_base", c.rope_base);
    c.page_size = e.value("page_size", c.page_size);
    c.refresh_interval = e.value("refresh_interval", c.refresh_interval);
    c.oracle_mode = e.value("oracle", false) || oracle;
    c.roi_gate = e.value("roi_gate", false) || roi_gate;
    c.verify_downdate = e.value("verify_downdate", false) || verify_downdate;
    c.mass_bound_diagnostics = e.value("mass_bound", false) || mass_bound;

    if (window) c.window = *window;
    if (band) c.band = *band;
    if (tau) c.tau = *tau;
    if (!layer_tau.empty()) c.layer_tau = layer_tau;
    if (delta_max) c.delta_max = *delta_max;
    if (space) sp = *space;
    if (page_size) c.page_size = *page_size;
    if (refresh) c.refresh_interval = *refresh;
    if (sp == "pre_rope")
      c.space = mac::MatchSpace::kPreRope;
    else if (sp == "post_rope")
      c.space = mac::MatchSpace::kPostRope;
    else
      throw mac::ConfigError("unknown match space '" + sp + "'");
    return c;
  }
};

json load_config(const std::optional<std::string>& path) {
  if (!path) return json::object();
  std::ifstream in(*path);
  if (!in) throw mac::ConfigError("cannot open config " + *path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw mac::ConfigError("config " + *path + " must hold a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw mac::ConfigError("bad config " + *path + ": " + e.what());
  }
}

// Runs `body` with output going to `path`, or stdout when unset.
template <class Body>
void with_output(const std::optional<std::string>& path, Body&& body) {
  if (!path || *path == "-") {
    body(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(*path, std::ios::trunc);
  if (!out) throw mac::TraceIoError("cannot open " + *path + " for writing");
  body(out);
  out.flush();
  if (!out) throw mac::TraceIoError("write failed for " + *path);
}

mac::Trace load_or_generate(const WorkloadFlags& wf, const json& file,
                            json& source) {
  if (const auto dir = wf.trace_dir(file)) {
    source = {{"kind", "trace"}, {"path", dir->string()}};
    return mac::read_trace(*dir);
  }
  const auto spec = wf.resolve(file);
  source = {{"kind", "synthetic"},
            {"preset", wf.preset.value_or(file.value("preset", std::string("redundant")))},
            {"spec", spec.to_json()}};
  return mac::gen_synthetic(spec);
}

template <class T>
std::vector<T> value_or(const std::vector<T>& flag, const json& file,
                        const char* key) {
  if (!flag.empty()) return flag;
  if (file.contains(key)) return file[key].get<std::vector<T>>();
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Match-amend-complete attention benchmark harness"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mac_bench 1");

  std::optional<std::string> config_path;
  std::optional<std::string> out_path;

  // run
  auto* run = app.add_subcommand("run", "Decode one stream and report metrics as JSON");
  WorkloadFlags run_wl;
  EngineFlags run_eng;
  run->add_option("--config", config_path, "JSON config; flags override it");
  run->add_option("--out", out_path, "Report path (default stdout)");
  run_wl.attach(*run, true);
  run_eng.attach(*run, true);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Evaluate a (K, r, tau, seed) grid as CSV");
  WorkloadFlags sweep_wl;
  EngineFlags sweep_eng;
  std::vector<std::size_t> windows;
  std::vector<mac::Position> bands;
  std::vector<double> taus;
  std::vector<std::uint64_t> seeds;
  std::optional<double> err_gate;
  std::size_t threads = 0;
  sweep->add_option("--config", config_path, "JSON config; flags override it");
  sweep->add_option("--out", out_path, "CSV path (default stdout)");
  sweep->add_option("--windows", windows)->delimiter(',');
  sweep->add_option("--bands", bands)->delimiter(',');
  sweep->add_option("--taus", taus)->delimiter(',');
  sweep->add_option("--seeds", seeds)->delimiter(',');
  sweep->add_option("--err-gate", err_gate);
  sweep->add_option("--threads", threads, "Worker threads (0 = all cores)");
  sweep_wl.attach(*sweep, true);
  sweep_eng.attach(*sweep, false);

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "Threshold for a target false-positive rate");
  std::size_t cal_dim = 0;
  double cal_alpha = 0.0;
  calibrate->add_option("--dim", cal_dim)->required();
  calibrate->add_option("--alpha", cal_alpha)->required();

  // sched-sim
  auto* sched = app.add_subcommand("sched-sim", "Tile scheduler makespans as CSV");
  std::size_t workers = 8;
  std::vector<double> sigmas{0.3};
  std::int64_t tile = 64;
  std::size_t items = 256;
  std::size_t n_seeds = 10;
  double mean_span = 4096.0;
  bool exact_opt = false;
  sched->add_option("--workers", workers);
  sched->add_option("--sigma", sigmas, "Log-space skew, comma separated")->delimiter(',');
  sched->add_option("--tile", tile);
  sched->add_option("--items", items);
  sched->add_option("--seeds", n_seeds, "Number of seeds, 0..N-1");
  sched->add_option("--mean-span", mean_span);
  sched->add_flag("--exact", exact_opt, "Also compute the whole-item optimum (<= 12 items)");
  sched->add_option("--out", out_path, "CSV path (default stdout)");

  // gen
  auto* gen = app.add_subcommand("gen", "Write a synthetic trace directory");
  WorkloadFlags gen_wl;
  std::string gen_out;
  gen->add_option("--config", config_path, "JSON config; flags override it");
  gen->add_option("--out", gen_out, "Trace directory")->required();
  gen_wl.attach(*gen, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) {
      const json file = load_config(config_path);
      auto cfg = run_eng.resolve(file);
      json source;
      const auto trace = load_or_generate(run_wl, file, source);
      cfg = mac::config_for(trace, cfg);
      cfg.validate();
      const auto report = mac::compute_metrics(mac::run_trace(trace, cfg, run_eng.exact));
      json out = report.to_json();
      out["source"] = source;
      out["config"] = {{"window", cfg.window},
                       {"band", cfg.band},
                       {"tau", cfg.tau},
                       {"space", cfg.space == mac::MatchSpace::kPreRope ? "pre_rope" : "post_rope"},
                       {"oracle", cfg.oracle_mode},
                       {"precision", run_eng.exact ? "f64" : "f32"}};
      with_output(out_path, [&](std::ostream& os) { os << out.dump(2) << '\n'; });
    } else if (*sweep) {
      const json file = load_config(config_path);
      mac::SweepGrid grid;
      const json axes = file.value("sweep", json::object());
      grid.windows = value_or(windows, axes, "windows");
      grid.bands = value_or(bands, axes, "bands");
      grid.taus = value_or(taus, axes, "taus");
      grid.seeds = value_or(seeds, axes, "seeds");
      grid.err_gate = err_gate.value_or(axes.value("err_gate", grid.err_gate));
      grid.trace_dir = sweep_wl.trace_dir(file);
      if (!grid.trace_dir) grid.workload = sweep_wl.resolve(file);
      grid.validate();
      const auto rows = mac::run_sweep(grid, sweep_eng.resolve(file), threads);
      with_output(out_path, [&](std::ostream& os) { mac::write_sweep_csv(os, rows); });
    } else if (*calibrate) {
      const double tau = mac::calibrate_tau(cal_dim, cal_alpha);
      std::cout << fmt::format("{:.12f}\n", tau);
    } else if (*sched) {
      if (exact_opt && items > 12)
        throw mac::ConfigError("--exact needs at most 12 items");
      with_output(out_path, [&](std::ostream& os) {
        os << "sigma,workers,tile,seed,perfect,lpt,naive,optimum,"
              "lpt_over_perfect,naive_over_perfect\n";
        for (double sigma : sigmas)
          for (std::uint64_t seed = 0; seed < n_seeds; ++seed) {
            const auto row = mac::sched::simulate(items, mean_span, sigma, tile,
                                                  workers, seed, exact_opt);
            os << fmt::format("{},{},{},{},{},{},{},{},{:.6f},{:.6f}\n", row.sigma,
                              row.workers, row.tile, row.seed, row.perfect, row.lpt,
                              row.naive, row.optimum, row.lpt_over_perfect(),
                              row.naive_over_perfect());
          }
      });
    } else if (*gen) {
      const json file = load_config(config_path);
      mac::write_trace(mac::gen_synthetic(gen_wl.resolve(file)), gen_out);
    }
  } catch (const mac::TraceIoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const mac::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
