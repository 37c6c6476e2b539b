#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "closedloop/errors.hpp"
#include "closedloop/model.hpp"
#include "closedloop/time_series.hpp"

// Particle-based Monte Carlo simulation of the 3D pipe: Brownian motion, laminar parabolic
// flow along x, specular radial walls, a periodic axial boundary and first-order degradation.
// Independent of the spectral solver; used to validate it.

namespace closedloop {

struct PbsConfig {
  double dt = 1e-3;     // s
  double t_end = 100.0;  // s
  std::uint64_t seed = 1;
  int n_workers = 1;
  std::optional<double> d_mol;  // molecular diffusion; defaults to the channel's d_eff
  std::vector<double> snapshot_times;

  bool operator==(const PbsConfig&) const = default;
};

inline double molecular_diffusion(const PbsConfig& p, const ChannelConfig& c) {
  return p.d_mol.value_or(c.d_eff);
}

inline std::vector<InvalidParameter> validate(const PbsConfig& p) {
  using detail::require;
  std::vector<InvalidParameter> out;
  require(out, std::isfinite(p.dt) && p.dt > 0, "pbs.dt", "dt > 0 violated");
  require(out, std::isfinite(p.t_end) && p.t_end > 0, "pbs.t_end", "t_end > 0 violated");
  require(out, p.n_workers >= 1, "pbs.workers", "workers >= 1 violated");
  if (p.d_mol) require(out, std::isfinite(*p.d_mol) && *p.d_mol >= 0, "pbs.d_mol", "d_mol >= 0 violated");
  for (double t : p.snapshot_times)
    require(out, t >= 0 && t <= p.t_end, "pbs.snapshot_times", "snapshot time outside [0, t_end]");
  return out;
}

/// Non-fatal step-size diagnostics.
inline std::vector<std::string> pbs_warnings(const PbsConfig& p, const ChannelConfig& c) {
  std::vector<std::string> out;
  if (c.v_eff * p.dt > c.loop_length / 1000.0)
    out.emplace_back("advection per step exceeds L/1000; reduce pbs.dt");
  if (std::max(c.damping.alpha, c.damping.beta) * p.dt > 0.01)
    out.emplace_back("degradation probability per step exceeds 1%; reduce pbs.dt");
  if (std::sqrt(2.0 * molecular_diffusion(p, c) * p.dt) > c.pipe_radius / 10.0)
    out.emplace_back("diffusion step exceeds r0/10; wall sampling is coarse");
  return out;
}

struct Particle {
  double x = 0.0;  // axial, wrapped to [0, L)
  double y = 0.0;
  double z = 0.0;
  double x_unwrapped = 0.0;
  // Remaining Exp(1) hazard; the particle degrades once the integrated rate exceeds it.
  double hazard = 0.0;
  bool alive = true;
};

using Population = std::vector<Particle>;
using PbsRng = std::mt19937_64;

/// Independent stream for one worker partition.
inline PbsRng worker_rng(std::uint64_t seed, std::uint64_t worker) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(worker), static_cast<std::uint32_t>(worker >> 32),
                    0x9e3779b9u};
  return PbsRng(seq);
}

/// `count` particles at the release site, area-uniform over the pipe cross section.
inline Population pbs_init(const ChannelConfig& c, PbsRng& rng, std::size_t count) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> hazard(1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  Population pop(count);
  for (auto& p : pop) {
    const double r = c.pipe_radius * std::sqrt(unit(rng));
    const double phi = two_pi * unit(rng);
    p.y = r * std::cos(phi);
    p.z = r * std::sin(phi);
    p.x = c.source.kind == SourceKind::Distributed ? c.source.release_width * unit(rng) : 0.0;
    p.x_unwrapped = p.x;
    p.hazard = hazard(rng);
    p.alive = true;
  }
  return pop;
}

/// Per-step constants shared by every particle.
struct StepParams {
  double dt = 0.0;
  double sigma = 0.0;  // sqrt(2 D dt)
  double v_eff = 0.0;
  double radius = 0.0;
  double loop_length = 0.0;
  DampingProfile damping;

  StepParams(const ChannelConfig& c, const PbsConfig& p)
      : dt(p.dt),
        sigma(std::sqrt(2.0 * molecular_diffusion(p, c) * p.dt)),
        v_eff(c.v_eff),
        radius(c.pipe_radius),
        loop_length(c.loop_length),
        damping(c.damping) {}
};

namespace detail {

// Mirrors the part of the move (y, z) -> (ny, nz) that leaves the disk of radius r0 about the
// wall tangent at the crossing point, repeating for chords that cross again. False if the
// path keeps bouncing (only for jumps much longer than the pipe diameter).
inline bool reflect_in_disk(double y, double z, double& ny, double& nz, double r0) {
  for (int bounce = 0; bounce < 16; ++bounce) {
    if (ny * ny + nz * nz <= r0 * r0) return true;
    const double dy = ny - y;
    const double dz = nz - z;
    const double a = dy * dy + dz * dz;
    const double b = 2.0 * (y * dy + z * dz);
    const double c = std::min(0.0, y * y + z * z - r0 * r0);
    const double s = (-b + std::sqrt(b * b - 4.0 * a * c)) / (2.0 * a);
    const double hy = y + s * dy;
    const double hz = z + s * dz;
    const double ux = hy / r0;
    const double uz = hz / r0;
    const double out = (ny - hy) * ux + (nz - hz) * uz;
    ny -= 2.0 * out * ux;
    nz -= 2.0 * out * uz;
    y = hy;
    z = hz;
  }
  return ny * ny + nz * nz <= r0 * r0;
}

}  // namespace detail

/// Advances one particle by one step: diffusion, advection at the pre-step radius,
/// specular reflection at the pipe wall, axial wrap, degradation at the post-move position.
inline void advance(Particle& p, const StepParams& s, PbsRng& rng,
                    std::normal_distribution<double>& normal) {
  if (!p.alive) return;
  const double r0 = s.radius;
  const double rel = (p.y * p.y + p.z * p.z) / (r0 * r0);
  const double vx = 2.0 * s.v_eff * (1.0 - rel);

  double dx = 0.0;
  double ny = p.y;
  double nz = p.z;
  for (int attempt = 0;; ++attempt) {
    dx = s.sigma * normal(rng);
    ny = p.y + s.sigma * normal(rng);
    nz = p.z + s.sigma * normal(rng);
    if (detail::reflect_in_disk(p.y, p.z, ny, nz, r0)) break;
    // Still outside after repeated bounces; draw a new increment.
    if (attempt > 1000) {
      ny = p.y;
      nz = p.z;
      break;
    }
  }
  p.y = ny;
  p.z = nz;

  const double move = dx + vx * s.dt;
  p.x_unwrapped += move;
  double x = p.x + move;
  x -= s.loop_length * std::floor(x / s.loop_length);
  if (x >= s.loop_length) x = 0.0;
  p.x = x;

  p.hazard -= damping_at(s.damping, p.x) * s.dt;
  if (p.hazard <= 0.0) p.alive = false;
}

/// One time step for a population.
inline void pbs_step(std::span<Particle> pop, const ChannelConfig& c, const PbsConfig& cfg, PbsRng& rng) {
  const StepParams s(c, cfg);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& p : pop) advance(p, s, rng, normal);
}

struct PbsSnapshot {
  double time = 0.0;
  Population particles;
};

struct PbsResult {
  TimeSeries rx;        // fraction of released particles inside the receiver interval
  TimeSeries survival;  // alive fraction
  std::vector<PbsSnapshot> snapshots;
};

namespace detail {

struct PbsPlan {
  long long out_offset = 0;  // steps before the first output sample
  long long out_stride = 0;  // steps between output samples
  long long total_steps = 0;
  std::vector<long long> snapshot_steps;
};

inline PbsPlan plan_pbs(const PbsConfig& cfg, const TimeGrid& out) {
  PbsPlan plan;
  plan.out_offset = whole_steps(out.t_start, cfg.dt);
  plan.out_stride = whole_steps(out.dt, cfg.dt);
  if (out.t_start < 0 || plan.out_offset < 0 || plan.out_stride < 1)
    throw GridMismatch("pbs_run: output grid is not aligned with pbs.dt");
  if (out.t_end() > cfg.t_end * (1.0 + 1e-12))
    throw GridMismatch("pbs_run: output grid extends beyond pbs.t_end");
  plan.total_steps = plan.out_offset + plan.out_stride * (out.n_samples - 1);
  for (double t : cfg.snapshot_times) {
    const long long s = whole_steps(t, cfg.dt);
    if (s < 0) throw GridMismatch("pbs_run: snapshot time is not a multiple of pbs.dt");
    plan.snapshot_steps.push_back(s);
  }
  return plan;
}

struct WorkerTally {
  std::vector<std::int64_t> in_rx;
  std::vector<std::int64_t> alive;
  std::vector<Population> snapshots;
};

inline void run_partition(const ChannelConfig& c, const PbsConfig& cfg, const ReceiverSpec& rx,
                          const PbsPlan& plan, std::size_t n_out, std::size_t count,
                          std::uint64_t worker, WorkerTally& tally) {
  PbsRng rng = worker_rng(cfg.seed, worker);
  Population pop = pbs_init(c, rng, count);
  const StepParams s(c, cfg);
  std::normal_distribution<double> normal(0.0, 1.0);

  tally.in_rx.assign(n_out, 0);
  tally.alive.assign(n_out, 0);
  tally.snapshots.assign(plan.snapshot_steps.size(), Population(count));

  // Particles are independent, so each one is carried through the whole run in turn.
  for (std::size_t i = 0; i < count; ++i) {
    Particle p = pop[i];
    std::size_t next_out = 0;
    for (long long step = 0; step <= plan.total_steps; ++step) {
      if (step > 0) advance(p, s, rng, normal);
      for (std::size_t q = 0; q < plan.snapshot_steps.size(); ++q)
        if (plan.snapshot_steps[q] == step) tally.snapshots[q][i] = p;
      if (next_out < n_out && step == plan.out_offset + plan.out_stride * static_cast<long long>(next_out)) {
        if (p.alive) {
          ++tally.alive[next_out];
          if (p.x >= rx.x_rx_a && p.x <= rx.x_rx_b) ++tally.in_rx[next_out];
        }
        ++next_out;
      }
      if (!p.alive) {
        // Nothing changes for a degraded particle; fill its later snapshots and stop.
        for (std::size_t q = 0; q < plan.snapshot_steps.size(); ++q)
          if (plan.snapshot_steps[q] > step) tally.snapshots[q][i] = p;
        break;
      }
    }
  }
}

}  // namespace detail

/// Simulates N_P particles and reports receiver occupancy and survival on `out`.
///
/// Deterministic for a fixed (seed, n_workers): worker w simulates a contiguous slice of
/// the population with its own stream.
inline PbsResult pbs_run(const ChannelConfig& c, const PbsConfig& cfg, const ReceiverSpec& rx,
                         const TimeGrid& out) {
  {
    auto issues = validate(c);
    for (auto& i : validate(cfg)) issues.push_back(i);
    for (auto& i : validate(rx, c.loop_length)) issues.push_back(i);
    for (auto& i : validate(out)) issues.push_back(i);
    if (rx.kind != ReceiverKind::Interval)
      issues.push_back({"receiver.kind", "particle simulation needs an interval receiver"});
    if (!issues.empty()) throw ValidationError(std::move(issues));
  }
  const auto plan = detail::plan_pbs(cfg, out);
  const auto n_out = static_cast<std::size_t>(out.n_samples);
  const auto total = static_cast<std::size_t>(c.n_molecules);
  const auto workers = static_cast<std::size_t>(cfg.n_workers);

  std::vector<detail::WorkerTally> tallies(workers);
  auto slice = [&](std::size_t w) { return total * w / workers; };
  if (workers == 1) {
    detail::run_partition(c, cfg, rx, plan, n_out, total, 0, tallies[0]);
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < workers; ++w)
      threads.emplace_back([&, w] {
        detail::run_partition(c, cfg, rx, plan, n_out, slice(w + 1) - slice(w), w, tallies[w]);
      });
  }

  PbsResult res{TimeSeries(out), TimeSeries(out), {}};
  const double norm = 1.0 / static_cast<double>(total);
  for (std::size_t k = 0; k < n_out; ++k) {
    std::int64_t in_rx = 0;
    std::int64_t alive = 0;
    for (const auto& t : tallies) {
      in_rx += t.in_rx[k];
      alive += t.alive[k];
    }
    res.rx[k] = static_cast<double>(in_rx) * norm;
    res.survival[k] = static_cast<double>(alive) * norm;
  }
  for (std::size_t q = 0; q < plan.snapshot_steps.size(); ++q) {
    PbsSnapshot snap{static_cast<double>(plan.snapshot_steps[q]) * cfg.dt, {}};
    for (auto& t : tallies) snap.particles.insert(snap.particles.end(), t.snapshots[q].begin(), t.snapshots[q].end());
    res.snapshots.push_back(std::move(snap));
  }
  return res;
}

}  // namespace closedloop
