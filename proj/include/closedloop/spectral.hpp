#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "closedloop/errors.hpp"
#include "closedloop/matrix_exp.hpp"
#include "closedloop/model.hpp"
#include "closedloop/time_series.hpp"

// Fourier-spectral solution of the periodic advection-diffusion-degradation equation
//
//   dc/dt = D c'' - v c' - f(x) c + s(x, t),   c(x + L, t) = c(x, t).
//
// The field is expanded in the 2N+1 modes exp(j k_n x), k_n = 2 pi n / L, n = -N..N.
// Every vector and matrix below is indexed in ascending mode order, entry i <-> n = i - N.

namespace closedloop {

using Complex = std::complex<double>;
using CoefficientVector = Eigen::VectorXcd;
using CouplingMatrix = Eigen::MatrixXcd;

inline double wavenumber(int n, double loop_length) {
  return 2.0 * std::numbers::pi * static_cast<double>(n) / loop_length;
}

struct WavenumberGrid {
  int order = 0;
  double loop_length = 0.0;
  std::vector<double> values;  // k_{-N} .. k_N

  double at(int n) const { return values[static_cast<std::size_t>(n + order)]; }
  std::size_t size() const { return values.size(); }
};

inline WavenumberGrid wavenumbers(int order, double loop_length) {
  WavenumberGrid g{order, loop_length, {}};
  g.values.resize(static_cast<std::size_t>(2 * order + 1));
  for (int n = -order; n <= order; ++n) g.values[static_cast<std::size_t>(n + order)] = wavenumber(n, loop_length);
  return g;
}

/// Fourier coefficient f_m = (1/L) * integral_0^L f(x) exp(-j k_m x) dx of the two-level profile.
inline Complex damping_fourier_coeff(const DampingProfile& p, double loop_length, int m) {
  const double contrast = p.alpha - p.beta;
  if (m == 0) return {p.beta + contrast * p.region_width() / loop_length, 0.0};
  if (m < 0) return std::conj(damping_fourier_coeff(p, loop_length, -m));
  const double k = wavenumber(m, loop_length);
  const double amplitude =
      contrast / (std::numbers::pi * static_cast<double>(m)) * std::sin(0.5 * k * p.region_width());
  return amplitude * std::polar(1.0, -0.5 * k * (p.x_a + p.x_b));
}

/// Dense coupling matrix of the coefficient ODE dc/dt = A c + s.
///
/// Diagonal: -D k_n^2 - j v k_n - f_0. Off-diagonal: -f_{n-m}, a Toeplitz band that
/// vanishes entirely for uniform damping.
inline CouplingMatrix assemble_matrix(const ChannelConfig& c) {
  const int order = c.truncation_order;
  const int size = c.mode_count();
  const double len = c.loop_length;

  std::vector<Complex> f(static_cast<std::size_t>(2 * size - 1));  // f_{d}, d = -2N..2N
  const int off = 2 * order;
  for (int d = 0; d <= 2 * order; ++d) {
    const Complex v = damping_fourier_coeff(c.damping, len, d);
    f[static_cast<std::size_t>(off + d)] = v;
    f[static_cast<std::size_t>(off - d)] = std::conj(v);
  }

  CouplingMatrix a(size, size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      a(i, j) = -f[static_cast<std::size_t>(off + i - j)];
    }
    const double k = wavenumber(i - order, len);
    a(i, i) = Complex(-c.d_eff * k * k - f[static_cast<std::size_t>(off)].real(), -c.v_eff * k);
  }
  return a;
}

/// Post-release coefficients of N_P molecules released at x = 0: (N_P / L) * [1, ..., 1].
inline CoefficientVector point_source_coeffs(const ChannelConfig& c) {
  const double amp = static_cast<double>(c.n_molecules) / c.loop_length;
  return CoefficientVector::Constant(c.mode_count(), Complex(amp, 0.0));
}

/// Post-release coefficients of N_P molecules spread uniformly over [0, x_w].
inline CoefficientVector distributed_source_coeffs(const ChannelConfig& c) {
  const int order = c.truncation_order;
  const double amp = static_cast<double>(c.n_molecules) / c.loop_length;
  const double width = c.source.release_width;
  CoefficientVector out(c.mode_count());
  out(order) = amp;
  for (int n = 1; n <= order; ++n) {
    // (1 - exp(-j th)) / (j th) written without cancellation for small th.
    const double th = wavenumber(n, c.loop_length) * width;
    const double half = std::sin(0.5 * th);
    const Complex phi(std::sin(th) / th, -2.0 * half * half / th);
    out(order + n) = amp * phi;
    out(order - n) = amp * std::conj(phi);
  }
  return out;
}

inline CoefficientVector source_coeffs(const ChannelConfig& c) {
  return c.source.kind == SourceKind::Point ? point_source_coeffs(c) : distributed_source_coeffs(c);
}

/// Coefficient vectors on a uniform time grid.
struct CoefficientTrajectory {
  TimeGrid grid;
  std::vector<CoefficientVector> states;
};

/// c(t_k) = exp(A t_k) c0 for each grid time, using one propagator exp(A dt) per step.
inline CoefficientTrajectory evolve(const CoefficientVector& initial, const CouplingMatrix& a,
                                    const TimeGrid& grid) {
  if (auto issues = validate(grid); !issues.empty()) throw ValidationError(std::move(issues));
  if (grid.t_start < 0) throw ValidationError("grid.t_start", "t_start >= 0 violated");
  if (a.rows() != a.cols() || a.rows() != initial.size())
    throw PropagatorFailure("evolve: matrix dimension does not match coefficient vector");

  const CouplingMatrix step = matrix_exponential(a * grid.dt);
  CoefficientTrajectory out{grid, {}};
  out.states.reserve(static_cast<std::size_t>(grid.n_samples));

  CoefficientVector c = grid.t_start > 0 ? CoefficientVector(matrix_exponential(a * grid.t_start) * initial)
                                         : initial;
  out.states.push_back(c);
  CoefficientVector next(c.size());
  for (std::int64_t k = 1; k < grid.n_samples; ++k) {
    next.noalias() = step * c;
    c.swap(next);
    out.states.push_back(c);
  }
  return out;
}

/// Smallest time after which pointwise values are free of the release transient,
/// (L / 2N)^2 / (2 D).
inline double transient_time(const ChannelConfig& c) {
  const double h = c.loop_length / (2.0 * c.truncation_order);
  return h * h / (2.0 * c.d_eff);
}

namespace detail {

constexpr double kRealnessTolerance = 1e-9;

inline double checked_real(Complex z, const CoefficientVector& c, const char* what) {
  if (std::abs(z.imag()) > kRealnessTolerance * c.norm())
    throw RealnessViolation(std::string(what) + ": imaginary residue " + std::to_string(z.imag()) +
                            " exceeds tolerance");
  return z.real();
}

// sum_n w_n c_n without conjugation.
inline Complex apply(const CoefficientVector& w, const CoefficientVector& c) {
  return (w.transpose() * c)(0);
}

}  // namespace detail

/// Basis values exp(j k_n x).
inline CoefficientVector basis_at(const WavenumberGrid& k, double x) {
  CoefficientVector e(static_cast<Eigen::Index>(k.size()));
  for (std::size_t i = 0; i < k.size(); ++i) e(static_cast<Eigen::Index>(i)) = std::polar(1.0, k.values[i] * x);
  return e;
}

/// Exact integrals of the basis over the receiver (or the basis itself for a point sample).
inline CoefficientVector receiver_weights(const WavenumberGrid& k, const ReceiverSpec& rx) {
  if (rx.kind == ReceiverKind::PointSample) return basis_at(k, rx.x_rx);
  CoefficientVector w(static_cast<Eigen::Index>(k.size()));
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double kn = k.values[i];
    w(static_cast<Eigen::Index>(i)) =
        kn == 0.0 ? Complex(rx.x_rx_b - rx.x_rx_a, 0.0)
                  : (std::polar(1.0, kn * rx.x_rx_b) - std::polar(1.0, kn * rx.x_rx_a)) / Complex(0.0, kn);
  }
  return w;
}

/// Closed-loop field: channel config plus the coefficient trajectory.
class SpectralSolution {
 public:
  SpectralSolution(ChannelConfig config, CoefficientTrajectory trajectory)
      : config_(std::move(config)),
        trajectory_(std::move(trajectory)),
        k_(closedloop::wavenumbers(config_.truncation_order, config_.loop_length)) {}

  const ChannelConfig& config() const { return config_; }
  const TimeGrid& grid() const { return trajectory_.grid; }
  const WavenumberGrid& wavenumbers() const { return k_; }
  std::size_t size() const { return trajectory_.states.size(); }
  const CoefficientVector& coefficients(std::size_t k) const { return trajectory_.states.at(k); }
  const CoefficientTrajectory& trajectory() const { return trajectory_; }

  /// c(x, t_k); throws RealnessViolation if the imaginary residue is not negligible.
  double reconstruct(double x, std::size_t k) const {
    const auto& c = coefficients(k);
    return detail::checked_real(detail::apply(basis_at(k_, x), c), c, "reconstruct");
  }

  std::vector<double> field(std::span<const double> xs, std::size_t k) const {
    std::vector<double> out;
    out.reserve(xs.size());
    for (double x : xs) out.push_back(reconstruct(x, k));
    return out;
  }

  /// Zero-mode coefficient c_0(t), the spatial mean concentration.
  TimeSeries zero_mode() const {
    TimeSeries out(grid());
    const auto i0 = static_cast<Eigen::Index>(config_.truncation_order);
    for (std::size_t k = 0; k < size(); ++k) out[k] = trajectory_.states[k](i0).real();
    return out;
  }

  /// L * c_0(t), the number of molecules in the loop.
  TimeSeries total_mass() const {
    TimeSeries out = zero_mode();
    out *= config_.loop_length;
    return out;
  }

 private:
  ChannelConfig config_;
  CoefficientTrajectory trajectory_;
  WavenumberGrid k_;
};

/// Assemble, initialize and evolve the closed-loop problem for a validated config.
inline SpectralSolution solve(const ChannelConfig& config, const TimeGrid& grid) {
  validated(config);
  return SpectralSolution(config, evolve(source_coeffs(config), assemble_matrix(config), grid));
}

/// Received signal: point sample c(x_rx, t) or the interval integral of c over the receiver.
inline TimeSeries rx_signal(const SpectralSolution& sol, const ReceiverSpec& rx) {
  if (auto issues = validate(rx, sol.config().loop_length); !issues.empty())
    throw ValidationError(std::move(issues));
  const CoefficientVector w = receiver_weights(sol.wavenumbers(), rx);
  TimeSeries out(sol.grid());
  for (std::size_t k = 0; k < sol.size(); ++k) {
    const auto& c = sol.coefficients(k);
    out[k] = detail::checked_real(detail::apply(w, c), c, "rx_signal");
  }
  return out;
}

/// Open-loop (unbounded channel) reference signals.
struct OpenLoopResponse {
  TimeSeries rx;         // receiver signal without recirculation
  // Zero mode over the physical loop window [0, L): (1/L) times the open-loop field integrated
  // over it. Molecules that have travelled past L no longer count.
  TimeSeries zero_mode;
  TimeSeries mass;    // surviving open-loop molecules anywhere on the line
  int extension = 0;     // loop-length multiple used for the computation
};

/// Extension factor floor((v t + 6 sqrt(2 D t)) / L) + 2, enough to exclude wrap-around up to t_end.
inline int default_extension_factor(const ChannelConfig& c, double t_end) {
  const double reach = c.v_eff * t_end + 6.0 * std::sqrt(2.0 * c.d_eff * std::max(t_end, 0.0));
  return static_cast<int>(std::floor(reach / c.loop_length)) + 2;
}

/// Solves the same problem on a loop of length M*L with M*N modes, geometry kept at
/// absolute coordinates, so that no molecule can wrap around within the grid horizon.
inline OpenLoopResponse open_loop_response(const ChannelConfig& config, const ReceiverSpec& rx,
                                           const TimeGrid& grid, int extension) {
  validated(config);
  if (extension < 2) throw ValidationError("extension", "extension factor M >= 2 violated");
  const double t_end = grid.t_end();
  const double reach = config.v_eff * t_end + 6.0 * std::sqrt(2.0 * config.d_eff * std::max(t_end, 0.0));
  if (!(reach < (extension - 1) * config.loop_length))
    throw HorizonTooLong("open_loop_response: horizon " + std::to_string(t_end) +
                         " s reaches around the extended loop for M = " + std::to_string(extension));

  ChannelConfig ext = config;
  ext.loop_length = extension * config.loop_length;
  ext.truncation_order = extension * config.truncation_order;
  if (config.damping.is_uniform()) ext.damping = DampingProfile::global(config.damping.beta, ext.loop_length);

  const SpectralSolution sol = solve(ext, grid);
  OpenLoopResponse out{rx_signal(sol, rx), rx_signal(sol, ReceiverSpec::interval(0.0, config.loop_length)),
                       sol.total_mass(), extension};
  out.zero_mode *= 1.0 / config.loop_length;
  return out;
}

inline OpenLoopResponse open_loop_response(const ChannelConfig& config, const ReceiverSpec& rx,
                                           const TimeGrid& grid) {
  return open_loop_response(config, rx, grid, default_extension_factor(config, grid.t_end()));
}

/// Time after which the whole open-loop cloud (to 8 standard deviations) has left the loop
/// window, and with it the receiver and the localized damping region; +inf without flow.
inline double open_loop_settle_time(const ChannelConfig& c, const ReceiverSpec& rx) {
  if (c.v_eff <= 0.0) return std::numeric_limits<double>::infinity();
  double far = std::max(rx.upper(), c.loop_length);
  if (!c.damping.is_uniform()) far = std::max(far, c.damping.x_b);
  // v t - 8 sqrt(2 D t) = far, solved for sqrt(t).
  const double spread = 8.0 * std::sqrt(2.0 * c.d_eff);
  const double s = (spread + std::sqrt(spread * spread + 4.0 * c.v_eff * far)) / (2.0 * c.v_eff);
  return s * s;
}

/// Open-loop reference over an arbitrarily long horizon.
///
/// The extended-loop solve only runs until the settle time; afterwards the receiver signal and
/// the window zero mode are zero and the surviving mass decays at the baseline rate beta, which
/// is exact for an unbounded channel once every molecule is downstream of the loop window.
inline OpenLoopResponse open_loop_reference(const ChannelConfig& config, const ReceiverSpec& rx,
                                            const TimeGrid& grid) {
  const double settle = open_loop_settle_time(config, rx);
  if (!(grid.t_end() > settle)) return open_loop_response(config, rx, grid);

  TimeGrid head = grid;
  head.n_samples = std::max<std::int64_t>(
      2, static_cast<std::int64_t>(std::ceil((settle - grid.t_start) / grid.dt)) + 1);
  OpenLoopResponse part = open_loop_response(config, rx, head);

  OpenLoopResponse out{TimeSeries(grid), TimeSeries(grid), TimeSeries(grid), part.extension};
  const std::size_t n_head = part.rx.size();
  const double last_mass = part.mass.values.back();
  const double last_t = part.mass.time(n_head - 1);
  for (std::size_t k = 0; k < out.rx.size(); ++k) {
    if (k < n_head) {
      out.rx[k] = part.rx[k];
      out.zero_mode[k] = part.zero_mode[k];
      out.mass[k] = part.mass[k];
    } else {
      out.mass[k] = last_mass * std::exp(-config.damping.beta * (out.mass.time(k) - last_t));
    }
  }
  return out;
}

}  // namespace closedloop
