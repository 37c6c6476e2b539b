#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "closedloop/closedloop.hpp"
#include "closedloop/io.hpp"

// Batch front-end: solve, pbs, compare, isi, sweep, equilibrium.
// Exit codes: 0 success, 1 validation or I/O error, 2 numerical failure, 3 comparison threshold.

namespace closedloop::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kInvalid = 1, kNumerical = 2, kThreshold = 3 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool raw = false;
  double rmse_threshold = 0.05;
  bool coefficients = false;
  std::string pbs_config;
  std::string param;
  std::vector<double> values;
  std::optional<double> symbol_duration;
};

/// Scenario with command-line overrides applied.
inline Scenario resolve_scenario(const std::string& path, const Options& opt) {
  Scenario s = load_scenario(path);
  if (opt.seed) {
    if (s.pbs) s.pbs->seed = *opt.seed;
    if (s.sequence && !s.sequence->bits) s.sequence->seed = *opt.seed;
  }
  if (opt.workers && s.pbs) s.pbs->n_workers = *opt.workers;
  return s;
}

inline double output_scale(const Scenario& s, const Options& opt) {
  return opt.raw ? 1.0 : 1.0 / static_cast<double>(s.channel.n_molecules);
}

inline json sidecar(const std::string& command, const Scenario& s, const Options& opt) {
  return json{{"command", command}, {"normalized", !opt.raw}, {"scenario", to_json(s)}};
}

inline std::vector<double> times(const TimeSeries& s) {
  std::vector<double> t(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) t[k] = s.time(k);
  return t;
}

inline fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out += suffix;
  return out;
}

inline void require_out(const Options& opt) {
  if (opt.out.empty()) throw ValidationError("--out", "output path required");
}

inline int cmd_solve(const Scenario& s, const Options& opt, std::ostream& log) {
  require_out(opt);
  const SpectralSolution sol = solve(s.channel, s.grid);
  const double scale = output_scale(s, opt);
  TimeSeries rx = rx_signal(sol, s.receiver);
  rx *= scale;
  const auto t = times(rx);
  io::write_csv(opt.out, {"t", "c_rx"}, {t, rx.values});

  json meta = sidecar("solve", s, opt);
  meta["columns"] = {"t", "c_rx"};
  if (opt.coefficients) {
    const int order = s.channel.truncation_order;
    std::vector<std::string> header{"t"};
    for (int n = -order; n <= order; ++n) {
      header.push_back("re_c[" + std::to_string(n) + "]");
      header.push_back("im_c[" + std::to_string(n) + "]");
    }
    std::vector<std::vector<double>> cols(header.size() - 1, std::vector<double>(sol.size()));
    for (std::size_t k = 0; k < sol.size(); ++k) {
      const auto& c = sol.coefficients(k);
      for (Eigen::Index i = 0; i < c.size(); ++i) {
        cols[static_cast<std::size_t>(2 * i)][k] = c(i).real() * scale;
        cols[static_cast<std::size_t>(2 * i + 1)][k] = c(i).imag() * scale;
      }
    }
    std::vector<std::span<const double>> spans{t};
    for (const auto& c : cols) spans.emplace_back(c);
    const fs::path coeff_path = with_suffix(opt.out, ".coeffs.csv");
    io::write_csv(coeff_path, header, spans);
    json cmeta = sidecar("solve", s, opt);
    cmeta["mode_order"] = "n = -N..N ascending";
    io::write_json(io::sidecar_path(coeff_path), cmeta);
    meta["coefficients"] = coeff_path.filename().string();
  }

  const double mass = sol.total_mass().values.back() * scale;
  const std::size_t ipk = rx.argmax();
  json summary{{"mass_at_t_end", mass},
               {"peak_value", rx[ipk]},
               {"peak_time", rx.time(ipk)},
               {"transient_time", transient_time(s.channel)}};
  if (s.channel.v_eff > 0 && s.receiver.center() >= s.channel.source.transmitter_position())
    summary["predicted_first_peak_time"] = peak_time(s.channel, s.receiver, 0.0);
  meta["summary"] = summary;
  io::write_json(io::sidecar_path(opt.out), meta);
  log << summary.dump() << "\n";
  return kOk;
}

inline PbsResult run_pbs(const Scenario& s, std::ostream& log) {
  if (!s.pbs) throw ValidationError("pbs", "scenario has no pbs block");
  for (const auto& w : pbs_warnings(*s.pbs, s.channel)) log << "warning: " << w << "\n";
  return pbs_run(s.channel, *s.pbs, s.receiver, s.grid);
}

inline int cmd_pbs(const Scenario& s, const Options& opt, std::ostream& log) {
  require_out(opt);
  PbsResult res = run_pbs(s, log);
  if (opt.raw) {
    const auto n = static_cast<double>(s.channel.n_molecules);
    res.rx *= n;
    res.survival *= n;
  }
  io::write_csv(opt.out, {"t", "c_rx_pbs", "alive_fraction"}, {times(res.rx), res.rx.values, res.survival.values});
  json meta = sidecar("pbs", s, opt);
  meta["columns"] = {"t", "c_rx_pbs", "alive_fraction"};
  meta["snapshots"] = json::array();
  for (std::size_t q = 0; q < res.snapshots.size(); ++q) {
    const auto& snap = res.snapshots[q];
    std::vector<double> x, y, z, alive;
    for (const auto& p : snap.particles) {
      x.push_back(p.x);
      y.push_back(p.y);
      z.push_back(p.z);
      alive.push_back(p.alive ? 1.0 : 0.0);
    }
    const fs::path sp = with_suffix(opt.out, ".snapshot_" + std::to_string(q) + ".csv");
    io::write_csv(sp, {"x", "y", "z", "alive"}, {x, y, z, alive});
    meta["snapshots"].push_back({{"time", snap.time}, {"file", sp.filename().string()}});
  }
  io::write_json(io::sidecar_path(opt.out), meta);
  log << json{{"final_rx", res.rx.values.back()}, {"final_alive", res.survival.values.back()}}.dump() << "\n";
  return kOk;
}

inline int cmd_compare(const Scenario& s, const Options& opt, std::ostream& log) {
  require_out(opt);
  const Scenario pbs_side = opt.pbs_config.empty() ? s : resolve_scenario(opt.pbs_config, opt);
  if (!same_grid(TimeSeries(s.grid), TimeSeries(pbs_side.grid)) || !(s.receiver == pbs_side.receiver))
    throw ValidationError("--pbs-config", "grid and receiver must match the solver scenario");

  TimeSeries analytic = rx_signal(solve(s.channel, s.grid), s.receiver);
  analytic *= 1.0 / static_cast<double>(s.channel.n_molecules);
  const PbsResult pbs = run_pbs(pbs_side, log);
  const double t_from = transient_time(s.channel);
  const auto rep = compare_series(analytic, pbs.rx, static_cast<double>(pbs_side.channel.n_molecules), t_from);
  const bool pass = rep.nrmse < opt.rmse_threshold;

  json report{{"nrmse", rep.nrmse},
              {"max_deviation", rep.max_deviation},
              {"band_fraction_3sigma", rep.band_fraction},
              {"max_mc_sigma", rep.max_sigma},
              {"samples", rep.samples},
              {"t_from", t_from},
              {"rmse_threshold", opt.rmse_threshold},
              {"pass", pass},
              {"scenario", to_json(s)},
              {"pbs_scenario", to_json(pbs_side)}};
  io::write_json(opt.out, report);
  const fs::path series = with_suffix(opt.out, ".series.csv");
  io::write_csv(series, {"t", "c_rx", "c_rx_pbs", "alive_fraction"},
                {times(analytic), analytic.values, pbs.rx.values, pbs.survival.values});
  io::write_json(io::sidecar_path(series), sidecar("compare", s, opt));
  log << json{{"nrmse", rep.nrmse}, {"band_fraction_3sigma", rep.band_fraction}, {"pass", pass}}.dump() << "\n";
  return pass ? kOk : kThreshold;
}

inline int cmd_isi(const Scenario& s, const Options& opt, std::ostream& log) {
  require_out(opt);
  if (!s.sequence) throw ValidationError("sequence", "scenario has no sequence block");
  const BitSequence seq = s.sequence->resolve();
  IsiDecomposition d = isi_decompose(s.channel, s.receiver, seq, s.grid, s.epsilon);
  const double scale = output_scale(s, opt);
  for (TimeSeries* ts : {&d.total, &d.desired, &d.channel, &d.inter_loop, &d.offset, &d.open, &d.closed_zero_mode,
                         &d.open_zero_mode, &d.single_shot, &d.single_shot_open})
    *ts *= scale;

  const auto t = times(d.total);
  io::write_csv(opt.out, {"t", "r", "r_d", "r_c", "r_i", "r_o"},
                {t, d.total.values, d.desired.values, d.channel.values, d.inter_loop.values, d.offset.values});
  const fs::path open_path = with_suffix(opt.out, ".open.csv");
  io::write_csv(open_path, {"t", "r_open", "c0", "c0_open"},
                {t, d.open.values, d.closed_zero_mode.values, d.open_zero_mode.values});
  const fs::path shot_path = with_suffix(opt.out, ".single_shot.csv");
  io::write_csv(shot_path, {"t", "c_rx", "c_rx_open"}, {times(d.single_shot), d.single_shot.values, d.single_shot_open.values});

  const double ones = seq.ones_fraction();
  const double width = s.receiver.kind == ReceiverKind::Interval ? s.receiver.width() : 1.0;
  json meta = sidecar("isi", s, opt);
  meta["columns"] = {"t", "r", "r_d", "r_c", "r_i", "r_o"};
  meta["open_reference"] = open_path.filename().string();
  meta["single_shot"] = shot_path.filename().string();
  meta["t_i"] = d.transition_time ? json(*d.transition_time) : json("not_reached");
  meta["epsilon"] = d.epsilon;
  meta["t_p"] = d.peak_time;
  meta["first_wrap_bound"] = d.first_wrap;
  meta["sequence"] = json(std::vector<int>(seq.bits.begin(), seq.bits.end()));
  meta["seed"] = s.sequence->bits ? json(nullptr) : json(s.sequence->seed);
  meta["ones_fraction"] = ones;
  if (!s.channel.damping.is_zero()) {
    const double r_eq = d.equilibrium * scale;
    const double adjusted = equilibrium_concentration(s.channel, seq.symbol_duration, ones) * scale;
    meta["r_eq"] = r_eq;
    meta["r_eq_receiver"] = r_eq * width;
    meta["r_eq_ones_adjusted"] = adjusted;
  }
  io::write_json(io::sidecar_path(opt.out), meta);
  for (const auto& p : {open_path, shot_path}) io::write_json(io::sidecar_path(p), sidecar("isi", s, opt));

  if (std::abs(ones - 0.5) > 0.1)
    log << "warning: ones fraction " << ones << " deviates from 1/2; see r_eq_ones_adjusted\n";
  log << json{{"t_i", meta["t_i"]}, {"r_eq", meta.value("r_eq", json(nullptr))}}.dump() << "\n";
  return kOk;
}

/// Applies a sweep parameter value to a copy of the scenario.
inline Scenario with_parameter(Scenario s, const std::string& param, double value) {
  if (param == "alpha") {
    // Below beta (e.g. 0) means no localized excess.
    s.channel.damping.alpha = std::max(value, s.channel.damping.beta);
  } else if (param == "beta") {
    s.channel.damping.beta = value;
  } else if (param == "T_S") {
    if (!s.sequence) throw ValidationError("--param", "T_S sweep needs a sequence block");
    s.sequence->symbol_duration = value;
  } else if (param == "x_rx") {
    if (s.receiver.kind == ReceiverKind::PointSample) {
      s.receiver.x_rx = value;
    } else {
      const double half = 0.5 * s.receiver.width();
      s.receiver = ReceiverSpec::interval(value - half, value + half);
    }
  } else if (param == "N") {
    if (value != std::floor(value)) throw ValidationError("--values", "N must be an integer");
    s.channel.truncation_order = static_cast<int>(value);
  } else {
    throw ValidationError("--param", "expected one of alpha, beta, T_S, x_rx, N");
  }
  if (auto issues = validate(s); !issues.empty()) throw ValidationError(std::move(issues));
  return s;
}

/// Closed-loop and open-loop received signals for one scenario: the OOK sequence when
/// present, otherwise a single release.
inline std::pair<TimeSeries, TimeSeries> received_pair(const Scenario& s) {
  if (s.sequence) {
    auto d = isi_decompose(s.channel, s.receiver, s.sequence->resolve(), s.grid, s.epsilon);
    return {std::move(d.total), std::move(d.open)};
  }
  TimeSeries r = rx_signal(solve(s.channel, s.grid), s.receiver);
  TimeSeries r_open = open_loop_reference(s.channel, s.receiver, s.grid).rx;
  return {std::move(r), std::move(r_open)};
}

inline int cmd_sweep(const Scenario& s, const Options& opt, std::ostream& log) {
  require_out(opt);
  if (opt.param.empty() || opt.values.empty())
    throw ValidationError("--param/--values", "sweep needs a parameter and at least one value");
  std::vector<Scenario> runs;
  for (double v : opt.values) runs.push_back(with_parameter(s, opt.param, v));

  const fs::path dir = opt.out;
  fs::create_directories(dir);
  const double scale = output_scale(s, opt);
  std::vector<std::pair<TimeSeries, TimeSeries>> results(runs.size());
  std::vector<std::exception_ptr> errors(runs.size());
  const std::size_t workers = std::max<std::size_t>(1, static_cast<std::size_t>(opt.workers.value_or(1)));
  {
    std::mutex m;
    std::size_t next = 0;
    auto worker = [&] {
      while (true) {
        std::size_t i = 0;
        {
          std::lock_guard lk(m);
          if (next >= runs.size()) return;
          i = next++;
        }
        try {
          results[i] = received_pair(runs[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, runs.size()); ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<double> vals, max_diff, max_open, successive;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    auto& [r, r_open] = results[i];
    r *= scale;
    r_open *= scale;
    const fs::path file = dir / (opt.param + "_" + std::to_string(i) + ".csv");
    io::write_csv(file, {"t", "r", "r_open"}, {times(r), r.values, r_open.values});
    json meta = sidecar("sweep", runs[i], opt);
    meta["parameter"] = opt.param;
    meta["value"] = opt.values[i];
    io::write_json(io::sidecar_path(file), meta);

    vals.push_back(opt.values[i]);
    max_diff.push_back(difference(r, r_open).max_abs());
    max_open.push_back(r_open.max_abs());
    successive.push_back(i == 0 || !same_grid(r, results[i - 1].first) ? std::nan("")
                                                                        : difference(r, results[i - 1].first).max_abs());
  }
  const fs::path summary = dir / "summary.csv";
  io::write_csv(summary, {"value", "max_abs_r_minus_open", "max_r_open", "max_abs_diff_previous"},
                {vals, max_diff, max_open, successive});
  json meta = sidecar("sweep", s, opt);
  meta["parameter"] = opt.param;
  meta["values"] = opt.values;
  io::write_json(io::sidecar_path(summary), meta);
  log << "wrote " << runs.size() << " runs to " << dir.string() << "\n";
  return kOk;
}

inline int cmd_equilibrium(const Scenario& s, const Options& opt, std::ostream& log) {
  std::optional<double> ts = opt.symbol_duration;
  if (!ts && s.sequence) ts = s.sequence->symbol_duration;
  if (!ts) throw ValidationError("--symbol-duration", "needs a sequence block or --symbol-duration");
  const double scale = output_scale(s, opt);
  const double r_eq = equilibrium_concentration(s.channel, *ts) * scale;
  const double width = s.receiver.kind == ReceiverKind::Interval ? s.receiver.width() : 1.0;
  json doc{{"r_eq", r_eq}, {"r_eq_receiver", r_eq * width}, {"symbol_duration", *ts}, {"normalized", !opt.raw}};
  if (s.sequence) {
    const double ones = s.sequence->resolve().ones_fraction();
    doc["ones_fraction"] = ones;
    doc["r_eq_ones_adjusted"] = equilibrium_concentration(s.channel, *ts, ones) * scale;
  }
  if (!opt.out.empty()) {
    json full = doc;
    full["scenario"] = to_json(s);
    io::write_json(opt.out, full);
  }
  log << doc.dump() << "\n";
  return kOk;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Closed-loop molecular channel solver, particle simulator and ISI analysis"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config, "Scenario JSON file")->required();
  app.add_option("--out", opt.out, "Output file (directory for sweep)");
  app.add_option("--seed", opt.seed, "Override sequence and particle seeds");
  app.add_option("--workers", opt.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--raw", opt.raw, "Report molecule counts instead of values normalized by N_P");
  app.add_flag("--normalized", [&opt](std::int64_t) { opt.raw = false; }, "Normalize by N_P (default)");
  app.add_option("--rmse-threshold", opt.rmse_threshold, "compare: maximum normalized RMSE");

  auto* solve_cmd = app.add_subcommand("solve", "Spectral solution at the receiver");
  solve_cmd->add_flag("--coefficients", opt.coefficients, "Also write the coefficient trajectory");
  auto* pbs_cmd = app.add_subcommand("pbs", "Particle-based simulation");
  auto* cmp_cmd = app.add_subcommand("compare", "Spectral solution against particle simulation");
  cmp_cmd->add_option("--pbs-config", opt.pbs_config, "Scenario for the particle side (default: --config)");
  auto* isi_cmd = app.add_subcommand("isi", "ISI decomposition of an OOK sequence");
  auto* sweep_cmd = app.add_subcommand("sweep", "Parameter sweep");
  sweep_cmd->add_option("--param", opt.param, "alpha, beta, T_S, x_rx or N")->required();
  sweep_cmd->add_option("--values", opt.values, "Values to sweep")->required()->delimiter(',');
  auto* eq_cmd = app.add_subcommand("equilibrium", "Equilibrium concentration");
  eq_cmd->add_option("--symbol-duration", opt.symbol_duration, "T_S when the scenario has no sequence");
  for (auto* sub : {solve_cmd, pbs_cmd, cmp_cmd, isi_cmd, sweep_cmd, eq_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    const Scenario s = resolve_scenario(opt.config, opt);
    if (solve_cmd->parsed()) return cmd_solve(s, opt, log);
    if (pbs_cmd->parsed()) return cmd_pbs(s, opt, log);
    if (cmp_cmd->parsed()) return cmd_compare(s, opt, log);
    if (isi_cmd->parsed()) return cmd_isi(s, opt, log);
    if (sweep_cmd->parsed()) return cmd_sweep(s, opt, log);
    if (eq_cmd->parsed()) return cmd_equilibrium(s, opt, log);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kInvalid;
}

}  // namespace closedloop::cli
