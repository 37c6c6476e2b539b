#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "closedloop/errors.hpp"
#include "closedloop/model.hpp"
#include "closedloop/spectral.hpp"
#include "closedloop/time_series.hpp"

namespace closedloop {

/// OOK bit sequence: bit p releases N_P molecules at t_start + p * symbol_duration if set.
struct BitSequence {
  std::vector<std::uint8_t> bits;
  double symbol_duration = 5.0;  // T_S, s
  double t_start = 0.0;          // t0, s

  double release_time(std::size_t p) const {
    return t_start + static_cast<double>(p) * symbol_duration;
  }
  std::size_t ones() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  double ones_fraction() const {
    return bits.empty() ? 0.0 : static_cast<double>(ones()) / static_cast<double>(bits.size());
  }
};

inline std::vector<InvalidParameter> validate(const BitSequence& s) {
  using detail::require;
  std::vector<InvalidParameter> out;
  require(out, !s.bits.empty(), "sequence.bits", "B >= 1 violated");
  require(out, std::all_of(s.bits.begin(), s.bits.end(), [](auto b) { return b <= 1; }),
          "sequence.bits", "bits must be 0 or 1");
  require(out, std::isfinite(s.symbol_duration) && s.symbol_duration > 0,
          "sequence.symbol_duration", "T_S > 0 violated");
  require(out, std::isfinite(s.t_start) && s.t_start >= 0, "sequence.t_start", "t0 >= 0 violated");
  return out;
}

enum class SequenceGenerator {
  Iid,       // independent fair bits
  Balanced,  // every aligned pair of symbols holds exactly one 1, in random order
};

/// Reproducible pseudo-random sequence (mt19937_64 seeded with `seed`).
inline BitSequence random_sequence(std::size_t length, double symbol_duration, std::uint64_t seed,
                                   SequenceGenerator gen = SequenceGenerator::Iid, double t_start = 0.0) {
  std::mt19937_64 rng(seed);
  BitSequence s{std::vector<std::uint8_t>(length, 0), symbol_duration, t_start};
  if (gen == SequenceGenerator::Iid) {
    for (auto& b : s.bits) b = static_cast<std::uint8_t>(rng() >> 63);
  } else {
    for (std::size_t p = 0; p + 1 < length; p += 2) {
      const auto first = static_cast<std::uint8_t>(rng() >> 63);
      s.bits[p] = first;
      s.bits[p + 1] = static_cast<std::uint8_t>(1 - first);
    }
    if (length % 2 == 1) s.bits.back() = static_cast<std::uint8_t>(rng() >> 63);
  }
  return s;
}

/// Arrival time of the first concentration peak for a downstream receiver,
/// t0 + (-D + sqrt(D^2 + d^2 v^2)) / v^2 with d = x_rx - x_tx.
inline double peak_time(const ChannelConfig& c, double x_tx, double x_rx, double t0) {
  const double d = x_rx - x_tx;
  if (d < 0) throw UpstreamUnsupported("peak_time: receiver lies upstream of the transmitter");
  if (!(c.v_eff > 0)) throw UpstreamUnsupported("peak_time: requires v_eff > 0");
  const double v2 = c.v_eff * c.v_eff;
  // Rationalized form of (-D + sqrt(D^2 + d^2 v^2)) / v^2; avoids cancellation when D >> d v.
  return t0 + d * d / (c.d_eff + std::sqrt(c.d_eff * c.d_eff + d * d * v2));
}

inline double peak_time(const ChannelConfig& c, const ReceiverSpec& rx, double t0) {
  return peak_time(c, c.source.transmitter_position(), rx.center(), t0);
}

/// r(t) = sum_p b_p c_RX(t - p T_S - t0) on the single-shot grid, which must start at 0.
inline TimeSeries received_signal(const TimeSeries& single_shot, const BitSequence& seq) {
  if (auto issues = validate(seq); !issues.empty()) throw ValidationError(std::move(issues));
  if (single_shot.t_start != 0.0) throw GridAlignment("received_signal: single-shot series must start at t = 0");
  const long long stride = whole_steps(seq.symbol_duration, single_shot.dt);
  const long long offset = whole_steps(seq.t_start, single_shot.dt);
  if (stride < 1 || offset < 0)
    throw GridAlignment("received_signal: T_S and t0 must be whole multiples of the grid step");

  TimeSeries r(single_shot.t_start, single_shot.dt, std::vector<double>(single_shot.size(), 0.0));
  const auto n = static_cast<long long>(single_shot.size());
  for (std::size_t p = 0; p < seq.bits.size(); ++p) {
    if (!seq.bits[p]) continue;
    const long long shift = offset + stride * static_cast<long long>(p);
    for (long long k = shift; k < n; ++k)
      r.values[static_cast<std::size_t>(k)] += single_shot.values[static_cast<std::size_t>(k - shift)];
  }
  return r;
}

/// Concentration (molecules per metre) at which the mean release per symbol, N_P * ones_fraction,
/// equals the mean loss T_S * r_eq * integral f(x) dx. The default fraction is 1/2.
inline double equilibrium_concentration(const ChannelConfig& c, double symbol_duration,
                                        double ones_fraction = 0.5) {
  if (c.damping.is_zero()) throw NoEquilibrium("equilibrium_concentration: no damping, no equilibrium");
  if (!(symbol_duration > 0)) throw ValidationError("symbol_duration", "T_S > 0 violated");
  const double loss = damping_integral(c.damping, c.loop_length);
  return static_cast<double>(c.n_molecules) * ones_fraction / (symbol_duration * loss);
}

/// Conservative earliest time after release at which molecules that went around the loop
/// (either direction) can reach the receiver: v t + 6 sqrt(2 D t) = shortest wrap path,
/// min(L - x_rx_b + x_tx, L + x_rx_a - x_w).
inline double first_wrap_time(const ChannelConfig& c, const ReceiverSpec& rx) {
  const double src_hi = c.source.kind == SourceKind::Distributed ? c.source.release_width : 0.0;
  const double upstream = c.loop_length - rx.upper() + c.source.transmitter_position();
  const double downstream = c.loop_length + rx.lower() - src_hi;
  const double path = std::max(0.0, std::min(upstream, downstream));
  const double a = 6.0 * std::sqrt(2.0 * c.d_eff);
  const double s = c.v_eff > 0 ? (-a + std::sqrt(a * a + 4.0 * c.v_eff * path)) / (2.0 * c.v_eff) : path / a;
  return s * s;
}

/// Transition time from inter-loop to offset ISI.
///
/// Smallest grid time t after which every sample satisfies
/// |(c0 - c0_open) / (rx - rx_open)| >= epsilon. Denominators below 1e-12 * max|rx| count as
/// satisfied after `first_wrap` and as violated before it. std::nullopt if never reached.
inline std::optional<double> transition_time(const TimeSeries& closed_zero, const TimeSeries& open_zero,
                                             const TimeSeries& closed_rx, const TimeSeries& open_rx,
                                             double epsilon, double first_wrap) {
  if (!(same_grid(closed_zero, open_zero) && same_grid(closed_zero, closed_rx) &&
        same_grid(closed_zero, open_rx)))
    throw GridMismatch("transition_time: series are not on one grid");
  if (!(epsilon > 0 && epsilon < 1)) throw ValidationError("epsilon", "0 < epsilon < 1 violated");

  const std::size_t n = closed_zero.size();
  const double floor = 1e-12 * closed_rx.max_abs();
  auto satisfied = [&](std::size_t k) {
    if (closed_zero.time(k) < first_wrap) return false;
    const double den = closed_rx[k] - open_rx[k];
    if (std::abs(den) <= floor) return true;
    return std::abs((closed_zero[k] - open_zero[k]) / den) >= epsilon;
  };
  std::size_t first = n;
  while (first > 0 && satisfied(first - 1)) --first;
  if (first == n) return std::nullopt;
  return closed_zero.time(first);
}

/// Received signal split into desired, channel ISI, inter-loop ISI and offset ISI.
struct IsiDecomposition {
  TimeSeries total;       // r
  TimeSeries desired;     // r_d
  TimeSeries channel;     // r_c
  TimeSeries inter_loop;  // r_i
  TimeSeries offset;      // r_o
  TimeSeries open;        // open-loop reference sum
  TimeSeries closed_zero_mode;  // sequence-level c_0(t)
  TimeSeries open_zero_mode;    // sequence-level open-loop zero mode over the loop window
  TimeSeries single_shot;       // c_RX(t) of one release at t = 0
  TimeSeries single_shot_open;
  std::optional<double> transition_time;
  double equilibrium = 0.0;   // r_eq, molecules per metre
  double epsilon = 0.8;
  double peak_time = 0.0;     // single-shot t_p relative to release
  double first_wrap = 0.0;    // single-shot wrap bound relative to release
};

/// Symbol-by-symbol ISI decomposition of an OOK transmission.
///
/// Each set bit contributes its shifted closed-loop response; the open-loop part is split
/// into desired (window [max(t0_p, t_p - T_S/2), t_p + T_S/2)) and channel ISI, the
/// closed-minus-open remainder into inter-loop ISI up to t_i and offset ISI after it.
/// The remainder of a symbol is zero before its wrap bound. t_i is evaluated once on the
/// sequence-level signals; for an interval receiver the receiver difference is divided by
/// the interval length so both ratio terms are concentrations.
inline IsiDecomposition isi_decompose(const ChannelConfig& config, const ReceiverSpec& rx,
                                      const BitSequence& seq, const TimeGrid& grid, double epsilon) {
  {
    auto issues = validate(config);
    for (auto& i : validate(rx, config.loop_length)) issues.push_back(i);
    for (auto& i : validate(seq)) issues.push_back(i);
    for (auto& i : validate(grid)) issues.push_back(i);
    if (grid.t_start < 0) issues.push_back({"grid.t_start", "t_start >= 0 violated"});
    if (!issues.empty()) throw ValidationError(std::move(issues));
  }
  const double dt = grid.dt;
  const long long grid_offset = whole_steps(grid.t_start, dt);
  const long long stride = whole_steps(seq.symbol_duration, dt);
  const long long seq_offset = whole_steps(seq.t_start, dt);
  if (grid_offset < 0 || stride < 1 || seq_offset < 0)
    throw GridAlignment("isi_decompose: t_start, T_S and t0 must be whole multiples of dt");

  // Single-shot responses on [0, t_end].
  const TimeGrid rel{0.0, dt, grid_offset + grid.n_samples};
  const SpectralSolution closed = solve(config, rel);
  const TimeSeries c_rx = rx_signal(closed, rx);
  const TimeSeries c_zero = closed.zero_mode();
  const OpenLoopResponse open = open_loop_reference(config, rx, rel);

  IsiDecomposition out;
  for (TimeSeries* s : {&out.total, &out.desired, &out.channel, &out.inter_loop, &out.offset, &out.open,
                        &out.closed_zero_mode, &out.open_zero_mode})
    *s = TimeSeries(grid);
  out.single_shot = c_rx;
  out.single_shot_open = open.rx;
  out.epsilon = epsilon;
  out.peak_time = peak_time(config, rx, 0.0);
  out.first_wrap = first_wrap_time(config, rx);
  out.equilibrium = config.damping.is_zero() ? std::numeric_limits<double>::infinity()
                                             : equilibrium_concentration(config, seq.symbol_duration);

  std::vector<long long> shifts;
  for (std::size_t p = 0; p < seq.bits.size(); ++p)
    if (seq.bits[p]) shifts.push_back(seq_offset + stride * static_cast<long long>(p));

  const auto n = static_cast<long long>(grid.n_samples);
  TimeSeries closed_sum(grid);
  TimeSeries open_sum(grid);
  for (long long shift : shifts) {
    for (long long k = std::max(0LL, shift - grid_offset); k < n; ++k) {
      const auto j = static_cast<std::size_t>(grid_offset + k - shift);
      const auto i = static_cast<std::size_t>(k);
      closed_sum[i] += c_rx[j];
      open_sum[i] += open.rx[j];
      out.closed_zero_mode[i] += c_zero[j];
      out.open_zero_mode[i] += open.zero_mode[j];
    }
  }
  out.total = closed_sum;
  out.open = open_sum;

  if (!shifts.empty()) {
    const double width = rx.kind == ReceiverKind::Interval ? rx.width() : 1.0;
    TimeSeries closed_conc = closed_sum;
    TimeSeries open_conc = open_sum;
    closed_conc *= 1.0 / width;
    open_conc *= 1.0 / width;
    const double wrap_abs = static_cast<double>(shifts.front()) * dt + out.first_wrap;
    out.transition_time = transition_time(out.closed_zero_mode, out.open_zero_mode, closed_conc, open_conc,
                                          epsilon, wrap_abs);
  }

  const double half = 0.5 * seq.symbol_duration;
  for (long long shift : shifts) {
    const double release = static_cast<double>(shift) * dt;
    const double t_peak = release + out.peak_time;
    const double win_lo = std::max(release, t_peak - half);
    const double win_hi = t_peak + half;
    for (long long k = std::max(0LL, shift - grid_offset); k < n; ++k) {
      const auto j = static_cast<std::size_t>(grid_offset + k - shift);
      const auto i = static_cast<std::size_t>(k);
      const double t = grid.time(k);
      // Before the wrap bound no molecule has gone around, so the closed response is the
      // open one; using it directly keeps the components summing exactly to r.
      const bool wrapped = rel.time(static_cast<std::int64_t>(j)) >= out.first_wrap;
      const double o = wrapped ? open.rx[j] : c_rx[j];
      if (t >= win_lo && t < win_hi)
        out.desired[i] += o;
      else
        out.channel[i] += o;
      if (!wrapped) continue;
      const double rem = c_rx[j] - o;
      if (!out.transition_time || t <= *out.transition_time)
        out.inter_loop[i] += rem;
      else
        out.offset[i] += rem;
    }
  }
  return out;
}

}  // namespace closedloop
