#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "closedloop/errors.hpp"
#include "closedloop/time_series.hpp"

namespace closedloop {

struct ComparisonReport {
  double nrmse = 0.0;          // RMSE / max|reference|
  double max_deviation = 0.0;  // max |candidate - reference|
  double band_fraction = 1.0;  // share of samples within the 3-sigma binomial band
  double max_sigma = 0.0;      // largest Monte Carlo standard error on the window
  std::size_t samples = 0;
};

/// Compares a Monte Carlo estimate of a normalized receiver fraction against a reference
/// curve on samples with t >= t_from. The band is 3 binomial standard errors of a fraction
/// p = reference estimated from `n_particles` independent particles, with p >= 1/n_particles.
inline ComparisonReport compare_series(const TimeSeries& reference, const TimeSeries& candidate,
                                       double n_particles, double t_from = 0.0) {
  if (!same_grid(reference, candidate)) throw GridMismatch("compare_series: series are not on one grid");
  ComparisonReport rep;
  double sq = 0.0;
  double peak = 0.0;
  std::size_t inside = 0;
  for (std::size_t k = 0; k < reference.size(); ++k) {
    if (reference.time(k) < t_from) continue;
    const double ref = reference[k];
    const double dev = std::abs(candidate[k] - ref);
    // A fraction below one particle cannot be resolved; floor p at 1/N so an empty receiver
    // is consistent with a vanishing reference.
    const double p = std::clamp(ref, 1.0 / n_particles, 1.0);
    const double sigma = std::sqrt(p * (1.0 - p) / n_particles);
    sq += dev * dev;
    peak = std::max(peak, std::abs(ref));
    rep.max_deviation = std::max(rep.max_deviation, dev);
    rep.max_sigma = std::max(rep.max_sigma, sigma);
    if (dev <= 3.0 * sigma) ++inside;
    ++rep.samples;
  }
  if (rep.samples == 0) return rep;
  const double rmse = std::sqrt(sq / static_cast<double>(rep.samples));
  rep.nrmse = peak > 0 ? rmse / peak : rmse;
  rep.band_fraction = static_cast<double>(inside) / static_cast<double>(rep.samples);
  return rep;
}

}  // namespace closedloop
