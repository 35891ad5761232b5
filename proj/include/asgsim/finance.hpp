#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "asgsim/common.hpp"

// Long-term valuation of the device: cash-flow schedule, NPV, IRR,
// cumulative cash flow and the IRR-vs-capital-cost curve.
//
// Timing convention, used everywhere: the investment is a negative cash flow
// at t = 0 and revenues arrive end-of-year at t = 1..T, so the first revenue
// year is discounted once. Revenue grows geometrically, revenue(t) =
// revenue0*(1+growth)^(t-1), and O&M is a fraction of the investment cost
// growing at the same rate.

namespace asgsim::finance {

struct FinanceAssumptions {
  double revenue0_per_mw = 81578.0; // first-year revenue ($/MW/yr)
  double growth = 0.06;             // annual revenue growth rate
  double om_rate = 0.02;            // O&M as fraction of investment cost
  double inv_cost_per_mva = 137500.0;
  int horizon_years = 15;
  double discount_rate = 0.06;
  double rating_mw = 2.0; // MW and MVA treated 1:1 for this device

  void validate() const {
    if (horizon_years < 1) throw config_error("finance: horizon must be >= 1");
    if (!(growth > -1.0)) throw config_error("finance: growth must be > -1");
    if (!(discount_rate > -1.0))
      throw config_error("finance: discount rate must be > -1");
    if (inv_cost_per_mva < 0.0)
      throw config_error("finance: investment cost must be >= 0");
    if (!(rating_mw > 0.0)) throw config_error("finance: rating must be > 0");
    if (om_rate < 0.0) throw config_error("finance: O&M rate must be >= 0");
  }
};

struct CashFlowSchedule {
  std::vector<double> cf; // cf[0..T], $ absolute
  double rating_mw = 1.0;
};

inline CashFlowSchedule build_schedule(const FinanceAssumptions& a) {
  a.validate();
  CashFlowSchedule s;
  s.rating_mw = a.rating_mw;
  s.cf.resize(static_cast<std::size_t>(a.horizon_years) + 1);
  s.cf[0] = -a.inv_cost_per_mva * a.rating_mw;
  for (int t = 1; t <= a.horizon_years; ++t) {
    const double g = std::pow(1.0 + a.growth, t - 1);
    const double revenue = a.revenue0_per_mw * a.rating_mw * g;
    const double om = a.om_rate * a.inv_cost_per_mva * a.rating_mw * g;
    s.cf[static_cast<std::size_t>(t)] = revenue - om;
  }
  return s;
}

/// NPV = sum_t cf[t] / (1+i)^t, t = 0..T.
inline double npv(const CashFlowSchedule& s, double i) {
  if (!(i > -1.0)) throw std::invalid_argument("npv: rate must be > -1");
  double acc = 0.0;
  double df = 1.0;
  for (std::size_t t = 0; t < s.cf.size(); ++t) {
    if (t > 0) df *= (1.0 + i);
    acc += s.cf[t] / df;
  }
  return acc;
}

/// Smallest rate in (-0.99, 10] with npv = 0, located by a bracket scan and
/// polished by bisection to |npv| < 1e-6*|cf[0]|.
inline double irr(const CashFlowSchedule& s) {
  bool pos = false, neg = false;
  for (const double v : s.cf) {
    if (v > 0.0) pos = true;
    if (v < 0.0) neg = true;
  }
  if (!pos || !neg)
    throw numeric_error("irr: cash flows have no sign change");

  const double lo_bound = -0.99, hi_bound = 10.0;
  const double step = 0.01;
  double lo = lo_bound;
  double f_lo = npv(s, lo);
  double hi = lo;
  double f_hi = f_lo;
  bool bracketed = false;
  for (double x = lo_bound + step; x <= hi_bound + 1e-12; x += step) {
    hi = x;
    f_hi = npv(s, hi);
    if (f_lo == 0.0) return lo;
    if ((f_lo > 0.0) != (f_hi > 0.0)) {
      bracketed = true;
      break;
    }
    lo = hi;
    f_lo = f_hi;
  }
  if (!bracketed) throw numeric_error("irr: no root in (-0.99, 10]");

  const double tol = 1e-6 * std::max(1.0, std::abs(s.cf[0]));
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f_mid = npv(s, mid);
    if (std::abs(f_mid) < tol && (hi - lo) < 1e-12 * std::max(1.0, std::abs(mid)))
      return mid;
    if ((f_lo > 0.0) != (f_mid > 0.0)) {
      hi = mid;
    } else {
      lo = mid;
      f_lo = f_mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Running undiscounted sum of the schedule.
inline std::vector<double> cumulative_cashflow(const CashFlowSchedule& s) {
  std::vector<double> cum(s.cf.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < s.cf.size(); ++t) {
    acc += s.cf[t];
    cum[t] = acc;
  }
  return cum;
}

/// First year with non-negative cumulative cash flow, or -1 if none.
inline int break_even_year(const CashFlowSchedule& s) {
  const std::vector<double> cum = cumulative_cashflow(s);
  for (std::size_t t = 0; t < cum.size(); ++t)
    if (cum[t] >= 0.0) return static_cast<int>(t);
  return -1;
}

/// IRR per capital-cost factor; O&M scales with the scaled investment.
inline std::vector<std::pair<double, double>> irr_vs_capital_cost(
    const FinanceAssumptions& a, const std::vector<double>& factors) {
  std::vector<std::pair<double, double>> curve;
  curve.reserve(factors.size());
  for (const double f : factors) {
    if (!(f > 0.0))
      throw std::invalid_argument("irr_vs_capital_cost: factors must be > 0");
    FinanceAssumptions scaled = a;
    scaled.inv_cost_per_mva = a.inv_cost_per_mva * f;
    curve.emplace_back(f, irr(build_schedule(scaled)));
  }
  return curve;
}

}  // namespace asgsim::finance
