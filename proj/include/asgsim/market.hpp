#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "asgsim/common.hpp"
#include "asgsim/control.hpp"
#include "asgsim/rng.hpp"

// PJM RegD backtester. The 2-second regulation signal is gated by the
// deadband, rescaled into an LV frequency set point (+-1 Hz on the upstream
// nominal), tracked by the ASG controller, and the resulting converter power
// is ramp-limited and saturated at the rating. Credits follow the
// pay-for-performance formula C = M * rho * (RCCP + beta*RPCP) per 5-minute
// window, where M is the mileage actually moved by the device (normalized
// mileage scaled by the rating) and beta the RegD/RegA signal mileage ratio.

namespace asgsim::market {

inline constexpr double kSignalDt = 2.0;    // s between RegD samples
inline constexpr double kWindowSec = 300.0; // credit window length

struct RegSignalSeries {
  std::int64_t t0_epoch_s = 0;
  std::vector<double> regd;
  std::vector<double> rega; // empty when not provided

  void validate() const {
    if (t0_epoch_s % 2 != 0)
      throw config_error("reg signal: timestamps must align to 2 s");
    for (const double v : regd)
      if (!(std::abs(v) <= 1.0))
        throw config_error("reg signal: |regd| must be <= 1");
    for (const double v : rega)
      if (!(std::abs(v) <= 1.0))
        throw config_error("reg signal: |rega| must be <= 1");
    if (!rega.empty() && rega.size() != regd.size())
      throw config_error("reg signal: rega length mismatch");
  }
};

struct ClearingPrices {
  // Aligned to credit windows after broadcast; constant values replicate.
  std::vector<double> rccp; // $/MW
  std::vector<double> rpcp; // $/dMW

  static ClearingPrices constant(double rccp_v, double rpcp_v,
                                 std::size_t windows) {
    if (rccp_v < 0.0 || rpcp_v < 0.0)
      throw config_error("prices must be >= 0");
    ClearingPrices p;
    p.rccp.assign(windows, rccp_v);
    p.rpcp.assign(windows, rpcp_v);
    return p;
  }
};

struct RegulationConfig {
  double rating_mw = 2.0;
  double ramp_limit_mw_s = 0.05;   // required input, no paper value exists
  double deadband_fraction = 0.2;  // of the +-1 Hz span
  double rho = 0.76;               // PJM performance score
  double f_shift_max_hz = 1.0;     // LV set-point shift at |regd| = 1
  double sim_dt = 0.01;            // controller substep (s)

  void validate() const {
    if (!(rating_mw > 0.0)) throw config_error("market: rating must be > 0");
    if (!(ramp_limit_mw_s > 0.0))
      throw config_error("market: ramp limit must be > 0");
    if (!(deadband_fraction >= 0.0 && deadband_fraction < 1.0))
      throw config_error("market: deadband fraction must be in [0,1)");
    if (!(rho >= 0.0 && rho <= 1.0))
      throw config_error("market: rho must be in [0,1]");
    if (!(f_shift_max_hz > 0.0))
      throw config_error("market: f_shift_max must be > 0");
    if (!(sim_dt > 0.0 && sim_dt <= 0.015))
      throw config_error("market: sim_dt must be in (0, 15 ms]");
  }
};

/// Maps regd in [-1,1] onto the LV set point in pu, symmetric about 1.0
/// (regd = +1 -> 1 + 1/60 pu on a 60 Hz base). Out-of-range input is clamped.
inline double rescale_regd(double regd, double f_shift_max_hz = 1.0,
                           double f0_hz = 60.0) {
  require_finite(regd, "regd");
  const double r = clamp(regd, -1.0, 1.0);
  return 1.0 + r * f_shift_max_hz / f0_hz;
}

/// Sum of absolute sample-to-sample movements.
inline double mileage(std::span<const double> x) {
  if (x.size() < 2)
    throw std::invalid_argument("mileage needs at least 2 samples");
  double m = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) m += std::abs(x[k] - x[k - 1]);
  return m;
}

inline double mileage_ratio(double m_regd, double m_rega) {
  if (!(m_rega > 0.0))
    throw numeric_error("mileage ratio undefined for zero RegA mileage");
  return m_regd / m_rega;
}

/// Regulation credit for one window: M * rho * (RCCP + beta*RPCP).
inline double regulation_credit(double m_regd, double rho, double rccp,
                                double beta, double rpcp) {
  if (m_regd < 0.0 || rccp < 0.0 || beta < 0.0 || rpcp < 0.0)
    throw std::invalid_argument("regulation_credit: inputs must be >= 0");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw std::invalid_argument("regulation_credit: rho must be in [0,1]");
  return m_regd * rho * (rccp + beta * rpcp);
}

/// Simulates the device following the gated, rescaled RegD signal. Returns
/// the converter power on the 2-s grid (MW), after the ramp-rate clamp and
/// the +-rating saturation.
inline std::vector<double> simulate_regulation(const RegSignalSeries& sig,
                                               const RegulationConfig& cfg,
                                               const control::AsgParams& asg) {
  sig.validate();
  cfg.validate();
  asg.validate();

  const int substeps = std::max(1, static_cast<int>(std::lround(kSignalDt / cfg.sim_dt)));
  const double dt = kSignalDt / substeps;

  control::AsgState st;
  std::vector<double> out;
  out.reserve(sig.regd.size());
  double prev_mw = 0.0;
  for (std::size_t k = 0; k < sig.regd.size(); ++k) {
    const double r = sig.regd[k];
    const double gated = std::abs(r) <= cfg.deadband_fraction ? 0.0 : r;
    const double ref = rescale_regd(gated, cfg.f_shift_max_hz, asg.f0_hz);
    control::AsgOutput o;
    for (int i = 0; i < substeps; ++i) {
      control::AsgInputs in;
      in.f_mv = 1.0;
      in.f_lv_ref = ref;
      in.p_mea = st.p_mea;
      in.alpha = 1.0;
      o = control::asg_step(st, in, asg, dt);
    }
    double mw = o.p_ff * cfg.rating_mw;
    const double max_move = cfg.ramp_limit_mw_s * kSignalDt;
    mw = clamp(mw, prev_mw - max_move, prev_mw + max_move);
    mw = clamp(mw, -cfg.rating_mw, cfg.rating_mw);
    out.push_back(mw);
    prev_mw = mw;
  }
  return out;
}

/// Start epochs of the complete 5-minute windows the backtest will form.
inline std::vector<std::int64_t> window_starts(const RegSignalSeries& sig) {
  const std::int64_t step = static_cast<std::int64_t>(kSignalDt);
  const std::int64_t win = static_cast<std::int64_t>(kWindowSec);
  const std::size_t per_win = static_cast<std::size_t>(win / step);
  std::int64_t first = sig.t0_epoch_s;
  if (first % win != 0) first += win - (first % win);
  std::size_t i0 = static_cast<std::size_t>((first - sig.t0_epoch_s) / step);
  std::vector<std::int64_t> starts;
  while (i0 + per_win <= sig.regd.size()) {
    starts.push_back(sig.t0_epoch_s + static_cast<std::int64_t>(i0) * step);
    i0 += per_win;
  }
  return starts;
}

struct CreditWindow {
  std::int64_t start_epoch_s = 0;
  double m_regd_mw = 0.0; // device mileage over the window (MW)
  double beta = 0.0;      // RegD/RegA signal mileage ratio
  double credit = 0.0;    // $
};

struct MonthlyRevenue {
  int year = 0;
  int month = 0;
  double credit = 0.0; // $
  double per_mw = 0.0; // $/MW
  int windows = 0;
};

struct BacktestResult {
  std::vector<double> response_mw;
  std::vector<CreditWindow> windows;
  std::vector<MonthlyRevenue> monthly;
  int skipped_empty_months = 0;
};

namespace detail {
inline std::pair<int, int> civil_year_month(std::int64_t epoch_s) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{epoch_s}};
  const year_month_day ymd{floor<days>(tp)};
  return {static_cast<int>(ymd.year()),
          static_cast<int>(static_cast<unsigned>(ymd.month()))};
}
}  // namespace detail

/// End-to-end backtest: response simulation, per-window mileage and credits,
/// calendar-month aggregation. Windows align to wall-clock 5-minute
/// boundaries; leading samples before the first boundary and the partial
/// trailing window are dropped. RegA is required to form the mileage ratio.
inline BacktestResult backtest(const RegSignalSeries& sig,
                               const ClearingPrices& prices,
                               const RegulationConfig& cfg,
                               const control::AsgParams& asg) {
  if (sig.rega.empty())
    throw config_error("backtest: RegA series required for the mileage ratio");

  BacktestResult res;
  res.response_mw = simulate_regulation(sig, cfg, asg);

  const std::int64_t step = static_cast<std::int64_t>(kSignalDt);
  const std::int64_t win = static_cast<std::int64_t>(kWindowSec);
  const std::size_t per_win = static_cast<std::size_t>(win / step);

  std::int64_t first_boundary = sig.t0_epoch_s;
  if (first_boundary % win != 0)
    first_boundary += win - (first_boundary % win);
  std::size_t i0 =
      static_cast<std::size_t>((first_boundary - sig.t0_epoch_s) / step);

  std::size_t w = 0;
  while (i0 + per_win <= sig.regd.size()) {
    if (w >= prices.rccp.size())
      throw config_error("backtest: price series shorter than window count");
    std::span<const double> dev(res.response_mw.data() + i0, per_win);
    std::span<const double> rd(sig.regd.data() + i0, per_win);
    std::span<const double> ra(sig.rega.data() + i0, per_win);
    CreditWindow cw;
    cw.start_epoch_s = sig.t0_epoch_s + static_cast<std::int64_t>(i0) * step;
    cw.m_regd_mw = mileage(dev);
    const double m_ra = mileage(ra);
    cw.beta = m_ra > 0.0 ? mileage(rd) / m_ra : 0.0;
    cw.credit =
        regulation_credit(cw.m_regd_mw, cfg.rho, prices.rccp[w], cw.beta,
                          prices.rpcp[w]);
    res.windows.push_back(cw);
    i0 += per_win;
    ++w;
  }

  std::map<std::pair<int, int>, MonthlyRevenue> agg;
  for (const auto& cw : res.windows) {
    const auto ym = detail::civil_year_month(cw.start_epoch_s);
    auto& m = agg[ym];
    m.year = ym.first;
    m.month = ym.second;
    m.credit += cw.credit;
    m.windows += 1;
  }
  // Months touched by the data but without one complete window are omitted.
  if (!sig.regd.empty()) {
    const auto first = detail::civil_year_month(sig.t0_epoch_s);
    const auto last = detail::civil_year_month(
        sig.t0_epoch_s + static_cast<std::int64_t>(sig.regd.size() - 1) * step);
    for (auto ym = first; ym <= last;) {
      if (!agg.contains(ym)) ++res.skipped_empty_months;
      ym.second += 1;
      if (ym.second > 12) {
        ym.second = 1;
        ym.first += 1;
      }
    }
  }
  for (auto& [ym, m] : agg) {
    m.per_mw = m.credit / cfg.rating_mw;
    res.monthly.push_back(m);
  }
  return res;
}

struct SyntheticSpec {
  double tau_regd_s = 60.0;  // mean-reversion constants mimic a high-pass
  double tau_rega_s = 900.0; // vs low-pass filtered ACE split
  double stdev_regd = 0.30;
  double stdev_rega = 0.30;
};

/// Deterministic seeded stand-in for PJM archives: clipped
/// Ornstein-Uhlenbeck recursions for RegD (fast) and RegA (slow).
inline RegSignalSeries generate_synthetic_regd(std::uint64_t seed,
                                               double duration_s,
                                               const SyntheticSpec& spec = {},
                                               std::int64_t t0_epoch_s = 0) {
  if (duration_s <= 0.0 ||
      std::fmod(duration_s, kSignalDt) != 0.0)
    throw config_error("synthetic signal duration must be a multiple of 2 s");
  const std::size_t n = static_cast<std::size_t>(duration_s / kSignalDt);
  Rng rng(seed);
  RegSignalSeries s;
  s.t0_epoch_s = t0_epoch_s;
  s.regd.resize(n);
  s.rega.resize(n);
  double xd = 0.0, xa = 0.0;
  const double sd = spec.stdev_regd * std::sqrt(2.0 * kSignalDt / spec.tau_regd_s);
  const double sa = spec.stdev_rega * std::sqrt(2.0 * kSignalDt / spec.tau_rega_s);
  for (std::size_t k = 0; k < n; ++k) {
    xd += -xd * kSignalDt / spec.tau_regd_s + sd * rng.gaussian();
    xa += -xa * kSignalDt / spec.tau_rega_s + sa * rng.gaussian();
    xd = clamp(xd, -1.0, 1.0);
    xa = clamp(xa, -1.0, 1.0);
    s.regd[k] = xd;
    s.rega[k] = xa;
  }
  return s;
}

}  // namespace asgsim::market
