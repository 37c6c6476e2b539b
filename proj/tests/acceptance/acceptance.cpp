// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "closedloop/closedloop.hpp"
#include "closedloop/compare.hpp"
#include "../oracles.hpp"

using namespace closedloop;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt2(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt3(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

ChannelConfig reference_config() {
  ChannelConfig c;  // defaults: D 5e-3, v 0.1, L 6, N 100, r0 0.02, N_P 1e4
  c.damping = DampingProfile::two_level(0.05, 0.01, 3.0, 3.6);
  return c;
}

const ReceiverSpec kRx = ReceiverSpec::interval(1.5, 2.1);

std::vector<oracle::Complex> to_std(const CoefficientVector& v) { return {v.data(), v.data() + v.size()}; }

// 1. Padé propagation against RK4 of the coefficient ODE.
Outcome rk4_equivalence() {
  double worst = 0.0;
  const std::vector<double> times{1.0, 10.0, 50.0};
  for (int order : {8, 16}) {
    ChannelConfig c = reference_config();
    c.truncation_order = order;
    const auto ref = oracle::rk4_coefficients(c, to_std(point_source_coeffs(c)), times, 0.005);
    const auto sol = solve(c, TimeGrid{0.0, 1.0, 51});
    for (std::size_t i = 0; i < times.size(); ++i)
      worst = std::max(worst, oracle::relative_l2(to_std(sol.coefficients(static_cast<std::size_t>(times[i]))), ref[i]));
  }
  return {worst < 1e-8, fmt("max relative L2 error %.3e (N = 8, 16; t = 1, 10, 50 s)", worst)};
}

// 2. Spectral solution against the particle simulation.
Outcome pbs_agreement() {
  ChannelConfig c = reference_config();
  PbsConfig cfg;
  cfg.dt = 1e-3;
  cfg.t_end = 100.0;
  cfg.seed = 1;
  const TimeGrid g{0.0, 0.1, 1001};
  TimeSeries analytic = rx_signal(solve(c, g), kRx);
  analytic *= 1.0 / static_cast<double>(c.n_molecules);
  const PbsResult pbs = pbs_run(c, cfg, kRx, g);
  const auto rep = compare_series(analytic, pbs.rx, static_cast<double>(c.n_molecules), 1.0);
  return {rep.nrmse < 0.05 && rep.band_fraction >= 0.95,
          fmt2("NRMSE %.4f, %.4f of samples inside the 3-sigma band (t >= 1 s)", rep.nrmse, rep.band_fraction)};
}

// 3. Mass conservation, global-damping factorization, periodicity.
Outcome conservation() {
  ChannelConfig c = reference_config();
  const TimeGrid g{0.0, 1.0, 201};
  c.damping = DampingProfile::none(c.loop_length);
  const SpectralSolution free = solve(c, g);
  double mass_err = 0.0;
  for (double m : free.total_mass().values)
    mass_err = std::max(mass_err, std::abs(m - static_cast<double>(c.n_molecules)) / static_cast<double>(c.n_molecules));

  c.damping = DampingProfile::global(0.02, c.loop_length);
  const SpectralSolution damped = solve(c, g);
  double fact_err = 0.0;
  double period_err = 0.0;
  for (std::size_t k = 0; k < damped.size(); ++k) {
    const double f = std::exp(-0.02 * g.time(static_cast<std::int64_t>(k)));
    fact_err = std::max(fact_err, (damped.coefficients(k) - f * free.coefficients(k)).norm() / (f * free.coefficients(k).norm()));
  }
  ChannelConfig two = reference_config();
  const SpectralSolution sol = solve(two, g);
  // Relative to the field's peak at that time; c(0, t) itself is near zero while the pulse is away.
  std::vector<double> xs(601);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = two.loop_length * static_cast<double>(i) / 600.0;
  for (std::size_t k = 1; k < sol.size(); ++k) {
    const double a = sol.reconstruct(0.0, k);
    const double b = sol.reconstruct(two.loop_length, k);
    double scale = 0.0;
    for (double v : sol.field(xs, k)) scale = std::max(scale, std::abs(v));
    period_err = std::max(period_err, std::abs(a - b) / scale);
  }
  return {mass_err < 1e-10 && fact_err < 1e-10 && period_err < 1e-12,
          fmt3("mass %.2e, factorization %.2e, periodicity %.2e", mass_err, fact_err, period_err)};
}

// 4. Closed-form Fourier coefficients against adaptive quadrature.
Outcome fourier_coefficients() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double L = 6.0;
  double worst = 0.0;
  for (int draw = 0; draw < 50; ++draw) {
    const double beta = 0.1 * u(rng);
    const double alpha = beta + u(rng);
    double xa = L * u(rng);
    double xb = L * u(rng);
    if (xa > xb) std::swap(xa, xb);
    xb = std::max(xb, xa + 1e-3);
    const double xw = 1e-3 + (L - 2e-3) * u(rng);
    const auto p = DampingProfile::two_level(alpha, beta, xa, std::min(xb, L));
    for (int m = -25; m <= 25; ++m)
      worst = std::max(worst, std::abs(damping_fourier_coeff(p, L, m) - oracle::damping_coeff(p, L, m)));
    ChannelConfig c;
    c.truncation_order = 25;
    c.n_molecules = 1;
    c.loop_length = L;
    c.source = SourceSpec::distributed(xw);
    const auto s = distributed_source_coeffs(c);
    for (int n = -25; n <= 25; ++n)
      worst = std::max(worst, std::abs(s(n + 25) * L - oracle::box_coeff(xw, wavenumber(n, L))));
  }
  return {worst < 1e-12, fmt("max absolute error %.3e over 50 draws, |m| <= 25", worst)};
}

// 5. Peak-time formula against the grid argmax of the open-loop point signal.
Outcome peak_times() {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double dt = 1e-3;
  int ok = 0;
  int draws = 0;
  double worst = 0.0;
  while (draws < 10) {
    ChannelConfig c;
    c.d_eff = 1e-3 + 9e-3 * u(rng);
    c.v_eff = 0.05 + 0.15 * u(rng);
    const double d = 0.5 + 2.5 * u(rng);
    if (c.v_eff * d / c.d_eff <= 10.0) continue;
    ++draws;
    c.n_molecules = 1;
    // Damping tilts the pulse by exp(-beta t) and moves its argmax; the formula is for transport only.
    c.damping = DampingProfile::none(c.loop_length);
    const double tp = peak_time(c, 0.0, d, 0.0);
    // Enough modes that exp(-D k_max^2 t_p) is negligible.
    const double kmax = std::sqrt(40.0 / (c.d_eff * tp));
    c.truncation_order = static_cast<int>(std::ceil(kmax * c.loop_length / (2.0 * std::numbers::pi)));
    const double start = std::round((tp - 0.5) / dt) * dt;
    const TimeGrid g{start, dt, 1001};
    const auto open = open_loop_response(c, ReceiverSpec::point(d), g);
    const double t_arg = open.rx.time(open.rx.argmax());
    const double err = std::abs(t_arg - tp);
    worst = std::max(worst, err);
    if (err <= dt * (1.0 + 1e-9)) ++ok;
  }
  return {ok == 10, fmt2("%g/10 draws within one 1 ms step, worst |argmax - t_p| = %.2e s", ok, worst)};
}

struct IsiSetup {
  ChannelConfig c;
  BitSequence seq;
  TimeGrid grid{0.0, 0.5, 3201};
  IsiSetup() {
    c.damping = DampingProfile::two_level(0.01, 0.001, 3.0, 3.6);
    c.source = SourceSpec::distributed(0.3);
    seq = random_sequence(300, 5.0, 1);
  }
};

// First time |s| exceeds `level`, or +inf.
double onset(const TimeSeries& s, double level) {
  for (std::size_t k = 0; k < s.size(); ++k)
    if (std::abs(s[k]) > level) return s.time(k);
  return std::numeric_limits<double>::infinity();
}

// 6. ISI decomposition identity, causality and ordering.
Outcome isi_identity() {
  IsiSetup f;
  const auto d = isi_decompose(f.c, kRx, f.seq, f.grid, 0.8);
  const double scale = d.total.max_abs();
  double sum_err = 0.0;
  bool causal = true;
  // Conservative first-wrap bound for the first transmitted symbol: v t + 6 sqrt(2 D t) = L - x_rx_b + x_tx.
  const double x_tx = f.c.source.transmitter_position();
  const double path = f.c.loop_length - kRx.x_rx_b + x_tx;
  const double a = 6.0 * std::sqrt(2.0 * f.c.d_eff);
  const double s = (-a + std::sqrt(a * a + 4.0 * f.c.v_eff * path)) / (2.0 * f.c.v_eff);
  std::size_t first_one = 0;
  while (!f.seq.bits[first_one]) ++first_one;
  const double bound = f.seq.release_time(first_one) + s * s;
  for (std::size_t k = 0; k < d.total.size(); ++k) {
    const double sum = d.desired[k] + d.channel[k] + d.inter_loop[k] + d.offset[k];
    sum_err = std::max(sum_err, std::abs(sum - d.total[k]) / scale);
    if (d.total.time(k) < bound && (d.inter_loop[k] != 0.0 || d.offset[k] != 0.0)) causal = false;
  }
  const double level = 1e-3 * scale;
  const double t_c = onset(d.channel, level);
  const double t_i = onset(d.inter_loop, level);
  const double t_o = onset(d.offset, level);
  const bool ordered = t_c < t_i && t_i < t_o && std::isfinite(t_o);
  std::string detail = fmt("sum error %.2e, ", sum_err) + (causal ? "causal" : "NOT causal") +
                       fmt3(", onsets r_c %.1f s, r_i %.1f s, r_o %.1f s", t_c, t_i, t_o);
  return {sum_err < 1e-9 && causal && ordered, detail};
}

// 7. Localized damping drives the closed loop towards the open loop.
Outcome alpha_sweep() {
  IsiSetup f;
  f.seq = random_sequence(100, 5.0, 7);
  f.grid = TimeGrid{0.0, 0.5, 1201};
  std::vector<double> diffs;
  double open_peak = 0.0;
  for (double alpha : {0.0, 0.01, 0.1, 0.6}) {
    // alpha = 0 means no localized excess: the region damps at the background rate.
    f.c.damping = DampingProfile::two_level(std::max(alpha, 0.001), 0.001, 3.0, 3.6);
    const auto d = isi_decompose(f.c, kRx, f.seq, f.grid, 0.8);
    diffs.push_back(difference(d.total, d.open).max_abs());
    open_peak = d.open.max_abs();
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < diffs.size(); ++i) decreasing = decreasing && diffs[i] < diffs[i - 1];
  const double rel = diffs.back() / open_peak;
  std::string detail = "max|r - r_open| / max r_open:";
  for (double v : diffs) detail += fmt(" %.4f", v / open_peak);
  return {decreasing && rel < 0.05, detail};
}

// 8. Equilibrium mass balance and mean concentration.
Outcome equilibrium() {
  const double ts = 5.0;
  const auto seq = random_sequence(300, ts, 8, SequenceGenerator::Balanced);
  const TimeGrid g{0.0, 0.5, 3001};
  const long long stride = whole_steps(ts, g.dt);

  ChannelConfig c = reference_config();
  c.truncation_order = 50;
  const double n_p = static_cast<double>(c.n_molecules);
  TimeSeries mass = received_signal(solve(c, g).total_mass(), seq);
  double loss = 0.0;
  for (std::size_t p = 240; p < 300; ++p) {
    const auto k0 = static_cast<std::size_t>(stride * static_cast<long long>(p));
    const auto k1 = k0 + static_cast<std::size_t>(stride);
    const double injected_next = p + 1 < seq.bits.size() && seq.bits[p + 1] ? n_p : 0.0;
    loss += mass[k0] - (mass[k1] - injected_next);
  }
  loss /= 60.0;
  const double loss_rel = std::abs(loss / (0.5 * n_p) - 1.0);

  c.damping = DampingProfile::global(0.01, c.loop_length);
  TimeSeries zero = received_signal(solve(c, g).zero_mode(), seq);
  double mean = 0.0;
  const auto k_from = static_cast<std::size_t>(stride * 240);
  const auto k_to = static_cast<std::size_t>(stride * 300);
  for (std::size_t k = k_from; k < k_to; ++k) mean += zero[k];
  mean /= static_cast<double>(k_to - k_from);
  const double r_eq = equilibrium_concentration(c, ts);
  const double mean_rel = std::abs(mean / r_eq - 1.0);
  return {loss_rel < 0.05 && mean_rel < 0.05,
          fmt3("loss per interval %.1f (N_P/2 = %.0f), mean/r_eq - 1 = %.2e", loss, 0.5 * n_p, mean / r_eq - 1.0) +
              fmt(", loss deviation %.2e", loss_rel)};
}

// 9. Particle simulator physics.
Outcome pbs_physics() {
  std::vector<std::string> failed;
  ChannelConfig c = reference_config();
  const double r0 = c.pipe_radius;

  {  // area-uniform release: E[r^2] = r0^2 / 2
    PbsRng rng = worker_rng(91, 0);
    const auto pop = pbs_init(c, rng, 200000);
    double m2 = 0.0;
    for (const auto& p : pop) m2 += (p.y * p.y + p.z * p.z) / (r0 * r0);
    m2 /= static_cast<double>(pop.size());
    if (std::abs(m2 - 0.5) > 5.0 * std::sqrt(1.0 / 12.0 / 200000.0)) failed.push_back("disk moment");
  }
  {  // centerline advection without diffusion
    ChannelConfig a = c;
    a.damping = DampingProfile::none(a.loop_length);
    PbsConfig cfg;
    cfg.d_mol = 0.0;
    PbsRng rng = worker_rng(92, 0);
    Population pop(1);
    pop[0].hazard = 1.0;
    for (int i = 0; i < 10000; ++i) pbs_step(pop, a, cfg, rng);
    if (std::abs(pop[0].x_unwrapped - 2.0 * a.v_eff * 10.0) > 1e-12) failed.push_back("centerline advection");
  }
  {  // survival under global damping
    ChannelConfig a = c;
    a.n_molecules = 20000;
    a.damping = DampingProfile::global(0.05, a.loop_length);
    PbsConfig cfg;
    cfg.dt = 1e-2;
    cfg.t_end = 20.0;
    cfg.seed = 93;
    const auto res = pbs_run(a, cfg, kRx, TimeGrid{0.0, 1.0, 21});
    for (std::size_t k = 1; k < res.survival.size(); ++k) {
      const double p = std::exp(-0.05 * res.survival.time(k));
      if (std::abs(res.survival[k] - p) > 3.0 * std::sqrt(p * (1 - p) / 20000.0)) {
        failed.push_back("survival");
        break;
      }
    }
  }
  {  // unwrapped axial variance 2 D t
    ChannelConfig a = c;
    a.v_eff = 0.0;
    a.n_molecules = 20000;
    a.damping = DampingProfile::none(a.loop_length);
    PbsConfig cfg;
    cfg.dt = 1e-2;
    cfg.t_end = 10.0;
    cfg.seed = 94;
    cfg.snapshot_times = {10.0};
    const auto res = pbs_run(a, cfg, kRx, TimeGrid{0.0, 1.0, 11});
    const auto& ps = res.snapshots[0].particles;
    double mean = 0.0;
    double var = 0.0;
    for (const auto& p : ps) mean += p.x_unwrapped;
    const double n = static_cast<double>(ps.size());
    mean /= n;
    for (const auto& p : ps) var += (p.x_unwrapped - mean) * (p.x_unwrapped - mean);
    var /= n - 1;
    const double expected = 2.0 * a.d_eff * 10.0;
    if (std::abs(var - expected) > 5.0 * expected * std::sqrt(2.0 / (n - 1))) failed.push_back("diffusion variance");
  }
  {  // determinism
    ChannelConfig a = c;
    a.n_molecules = 2000;
    PbsConfig cfg;
    cfg.dt = 1e-2;
    cfg.t_end = 20.0;
    cfg.seed = 95;
    cfg.n_workers = 2;
    const TimeGrid g{0.0, 0.5, 41};
    if (pbs_run(a, cfg, kRx, g).rx.values != pbs_run(a, cfg, kRx, g).rx.values) failed.push_back("determinism");
  }
  std::string detail = "disk moment, centerline advection, survival, diffusion variance, determinism";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"1 spectral propagation vs RK4", rk4_equivalence},
      {"2 spectral vs particle simulation", pbs_agreement},
      {"3 conservation, factorization, periodicity", conservation},
      {"4 closed-form Fourier coefficients", fourier_coefficients},
      {"5 peak-time formula", peak_times},
      {"6 ISI decomposition identity and causality", isi_identity},
      {"7 localized damping approaches open loop", alpha_sweep},
      {"8 equilibrium mass balance", equilibrium},
      {"9 particle simulator physics", pbs_physics},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s [%s] %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
