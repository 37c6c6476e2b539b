#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "closedloop/errors.hpp"

namespace closedloop {

/// Two-level degradation rate: alpha on the closed interval [x_a, x_b], beta elsewhere.
struct DampingProfile {
  double alpha = 0.0;  // 1/s
  double beta = 0.0;   // 1/s
  double x_a = 0.0;    // m
  double x_b = 0.0;    // m

  static DampingProfile two_level(double alpha, double beta, double x_a, double x_b) {
    return {alpha, beta, x_a, x_b};
  }
  static DampingProfile localized(double alpha, double x_a, double x_b) {
    return {alpha, 0.0, x_a, x_b};
  }
  // The region is irrelevant when alpha == beta; it spans the whole loop.
  static DampingProfile global(double beta, double loop_length) {
    return {beta, beta, 0.0, loop_length};
  }
  static DampingProfile none(double loop_length) { return {0.0, 0.0, 0.0, loop_length}; }

  double region_width() const { return x_b - x_a; }
  bool is_uniform() const { return alpha == beta; }
  bool is_zero() const { return alpha == 0.0 && beta == 0.0; }

  bool operator==(const DampingProfile&) const = default;
};

/// Rate at axial position x.
inline double damping_at(const DampingProfile& p, double x) {
  return (x >= p.x_a && x <= p.x_b) ? p.alpha : p.beta;
}

/// Integral of the damping rate over one loop, beta*L + (alpha - beta)*(x_b - x_a).
inline double damping_integral(const DampingProfile& p, double loop_length) {
  return p.beta * loop_length + (p.alpha - p.beta) * p.region_width();
}

enum class SourceKind { Point, Distributed };

/// Instantaneous release at t = 0: a point at x = 0 or uniform over [0, release_width].
struct SourceSpec {
  SourceKind kind = SourceKind::Point;
  double release_width = 0.0;  // m, Distributed only

  static SourceSpec point() { return {SourceKind::Point, 0.0}; }
  static SourceSpec distributed(double width) { return {SourceKind::Distributed, width}; }

  /// Effective transmitter position used for peak-time estimates.
  double transmitter_position() const {
    return kind == SourceKind::Distributed ? 0.5 * release_width : 0.0;
  }

  bool operator==(const SourceSpec&) const = default;
};

enum class ReceiverKind { PointSample, Interval };

/// Transparent receiver: a sample point or an integration interval.
struct ReceiverSpec {
  ReceiverKind kind = ReceiverKind::Interval;
  double x_rx = 0.0;
  double x_rx_a = 0.0;
  double x_rx_b = 0.0;

  static ReceiverSpec point(double x) { return {ReceiverKind::PointSample, x, 0.0, 0.0}; }
  static ReceiverSpec interval(double a, double b) {
    return {ReceiverKind::Interval, 0.5 * (a + b), a, b};
  }

  double center() const { return kind == ReceiverKind::Interval ? 0.5 * (x_rx_a + x_rx_b) : x_rx; }
  double lower() const { return kind == ReceiverKind::Interval ? x_rx_a : x_rx; }
  double upper() const { return kind == ReceiverKind::Interval ? x_rx_b : x_rx; }
  /// Interval length; 0 for a point sample.
  double width() const { return kind == ReceiverKind::Interval ? x_rx_b - x_rx_a : 0.0; }

  bool operator==(const ReceiverSpec&) const = default;
};

/// Uniform sample times t_start + k*dt, k = 0..n_samples-1.
struct TimeGrid {
  double t_start = 0.0;
  double dt = 0.1;
  std::int64_t n_samples = 2;

  double time(std::int64_t k) const { return t_start + static_cast<double>(k) * dt; }
  double t_end() const { return time(n_samples - 1); }

  bool operator==(const TimeGrid&) const = default;
};

struct ChannelConfig {
  double d_eff = 5e-3;         // m^2/s
  double v_eff = 0.1;          // m/s
  double loop_length = 6.0;    // m
  int truncation_order = 100;  // N, positive Fourier modes
  double pipe_radius = 0.02;   // m, particle simulation only
  DampingProfile damping = DampingProfile::two_level(0.05, 0.01, 3.0, 3.6);
  SourceSpec source = SourceSpec::point();
  std::int64_t n_molecules = 10000;

  int mode_count() const { return 2 * truncation_order + 1; }

  bool operator==(const ChannelConfig&) const = default;
};

namespace detail {

inline void require(std::vector<InvalidParameter>& out, bool ok, std::string field,
                    std::string reason) {
  if (!ok) out.push_back({std::move(field), std::move(reason)});
}

inline bool finite(double v) { return std::isfinite(v); }

}  // namespace detail

/// Every violated invariant of the channel, damping and source; empty when valid.
inline std::vector<InvalidParameter> validate(const ChannelConfig& c) {
  using detail::finite;
  using detail::require;
  std::vector<InvalidParameter> out;
  require(out, finite(c.d_eff) && c.d_eff > 0, "channel.d_eff", "d_eff > 0 violated");
  require(out, finite(c.v_eff) && c.v_eff >= 0, "channel.v_eff", "v_eff >= 0 violated");
  require(out, finite(c.loop_length) && c.loop_length > 0, "channel.loop_length",
          "loop_length > 0 violated");
  require(out, finite(c.pipe_radius) && c.pipe_radius > 0, "channel.pipe_radius",
          "pipe_radius > 0 violated");
  require(out, c.truncation_order >= 1, "channel.truncation_order",
          "truncation_order >= 1 violated");
  require(out, c.n_molecules >= 1, "channel.n_molecules", "n_molecules >= 1 violated");

  const auto& d = c.damping;
  require(out, finite(d.alpha) && finite(d.beta) && d.alpha >= d.beta, "damping.alpha",
          "alpha >= beta violated");
  require(out, finite(d.beta) && d.beta >= 0, "damping.beta", "beta >= 0 violated");
  require(out, finite(d.x_a) && d.x_a >= 0, "damping.x_a", "x_a >= 0 violated");
  require(out, finite(d.x_b) && d.x_a < d.x_b, "damping.x_b", "x_a < x_b violated");
  require(out, finite(d.x_b) && d.x_b <= c.loop_length, "damping.x_b", "x_b <= L violated");

  if (c.source.kind == SourceKind::Distributed) {
    require(out, finite(c.source.release_width) && c.source.release_width > 0 &&
                     c.source.release_width < c.loop_length,
            "source.release_width", "0 < x_w < L violated");
  }
  return out;
}

inline std::vector<InvalidParameter> validate(const ReceiverSpec& rx, double loop_length) {
  using detail::require;
  std::vector<InvalidParameter> out;
  if (rx.kind == ReceiverKind::Interval) {
    require(out, rx.x_rx_a >= 0, "receiver.x_rx_a", "x_rx_a >= 0 violated");
    require(out, rx.x_rx_a < rx.x_rx_b, "receiver.x_rx_b", "x_rx_a < x_rx_b violated");
    require(out, rx.x_rx_b <= loop_length, "receiver.x_rx_b", "x_rx_b <= L violated");
  } else {
    require(out, rx.x_rx >= 0 && rx.x_rx <= loop_length, "receiver.x_rx",
            "0 <= x_rx <= L violated");
  }
  return out;
}

inline std::vector<InvalidParameter> validate(const TimeGrid& g) {
  using detail::require;
  std::vector<InvalidParameter> out;
  require(out, std::isfinite(g.t_start), "grid.t_start", "t_start must be finite");
  require(out, std::isfinite(g.dt) && g.dt > 0, "grid.dt", "dt > 0 violated");
  require(out, g.n_samples >= 2, "grid.n_samples", "n_samples >= 2 violated");
  return out;
}

/// Returns the config unchanged, or throws ValidationError listing all violations.
inline const ChannelConfig& validated(const ChannelConfig& c) {
  auto issues = validate(c);
  if (!issues.empty()) throw ValidationError(std::move(issues));
  return c;
}

}  // namespace closedloop
