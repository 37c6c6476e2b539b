#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "closedloop/model.hpp"

namespace closedloop {

/// Uniformly sampled real signal; values[k] belongs to time t_start + k*dt.
struct TimeSeries {
  double t_start = 0.0;
  double dt = 1.0;
  std::vector<double> values;

  TimeSeries() = default;
  TimeSeries(double start, double step, std::vector<double> v)
      : t_start(start), dt(step), values(std::move(v)) {}
  explicit TimeSeries(const TimeGrid& g)
      : t_start(g.t_start), dt(g.dt), values(static_cast<std::size_t>(g.n_samples), 0.0) {}

  std::size_t size() const { return values.size(); }
  double time(std::size_t k) const { return t_start + static_cast<double>(k) * dt; }
  double operator[](std::size_t k) const { return values[k]; }
  double& operator[](std::size_t k) { return values[k]; }

  TimeGrid grid() const { return {t_start, dt, static_cast<std::int64_t>(values.size())}; }

  double max_abs() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                    values.begin());
  }

  TimeSeries& operator*=(double s) {
    for (double& v : values) v *= s;
    return *this;
  }
};

inline bool same_grid(const TimeSeries& a, const TimeSeries& b) {
  return a.size() == b.size() && a.t_start == b.t_start && a.dt == b.dt;
}

/// Pointwise a - b; grids must match.
inline TimeSeries difference(const TimeSeries& a, const TimeSeries& b) {
  TimeSeries out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out.values[k] -= b.values[k];
  return out;
}

/// Integer number of steps in `span`, or -1 if span is not a whole multiple of dt.
inline long long whole_steps(double span, double dt, double rel_tol = 1e-9) {
  const double q = span / dt;
  const double r = std::round(q);
  if (std::abs(q - r) > rel_tol * std::max(1.0, std::abs(q))) return -1;
  return static_cast<long long>(r);
}

}  // namespace closedloop
