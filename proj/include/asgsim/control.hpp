#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "asgsim/common.hpp"

// Reduced-order control model of an asynchronous grid connection (ASG):
// PI governor, amplified feed-forward of the upstream frequency deviation,
// symmetric power limit, first-order virtual-synchronous-machine swing block,
// and the droop response of the downstream LV units.
//
// Per-unit bases are kept separate on purpose: power is per-unit on the
// device rating, upstream frequency on f0 (60 Hz), LV-side frequency on the
// LV nominal (50 Hz).
//
// Sign convention: positive p_asg is power injected into the upstream bus.
// Raising the LV frequency above nominal curtails LV generation, so the
// upstream injection decreases; an upstream under-frequency event lowers the
// LV set point and produces injection.

namespace asgsim::control {

struct AsgParams {
  double droop_r = 0.02;    // feed-forward droop coefficient (pu/pu)
  double kp_gov = 421.0;    // governor proportional gain (pu power / pu freq)
  double ki_gov = 1287.0;   // governor integral gain (pu power / pu freq / s)
  double ta = 3.4;          // VSM time constant (s)
  double dp = 6.6;          // VSM damping (pu)
  double kpf = 0.4;         // LV droop gain (pu power / pu freq)
  double prop_gain = 8.0;   // LV reference shift per pu of upstream deviation;
                            // sized so the grid-code band covers the largest
                            // credible upstream excursion (2.5 Hz / ~0.3 Hz)
  double p_lim = 1.0;       // symmetric command limit (pu of rating)
  double deadband_hz = 0.2; // activation deadband half-width (Hz)
  double f0_hz = 60.0;      // upstream nominal frequency (Hz)
  double f_lv_hz = 50.0;    // LV nominal frequency (Hz)
  double band_lo_hz = 47.5; // LV grid-code band
  double band_hi_hz = 51.5;
  double p_rated_mw = 2.0;  // device rating (MW)

  double deadband_pu_lv() const { return deadband_hz / f_lv_hz; }
  double deadband_pu_mv() const { return deadband_hz / f0_hz; }
  double band_lo_pu() const { return band_lo_hz / f_lv_hz; }
  double band_hi_pu() const { return band_hi_hz / f_lv_hz; }

  void validate() const {
    require_finite(droop_r, "droop_r");
    require_finite(kp_gov, "kp_gov");
    require_finite(ki_gov, "ki_gov");
    if (droop_r == 0.0)
      throw config_error("asg: droop coefficient R must be nonzero");
    if (!(ta > 0.0)) throw config_error("asg: Ta must be > 0");
    if (!(p_lim > 0.0)) throw config_error("asg: Plim must be > 0");
    if (deadband_hz < 0.0) throw config_error("asg: deadband must be >= 0");
    if (p_rated_mw < 0.0) throw config_error("asg: Prated must be >= 0");
    if (kp_gov < 0.0 || ki_gov < 0.0)
      throw config_error("asg: governor gains must be >= 0");
    if (!(f0_hz > 0.0) || !(f_lv_hz > 0.0))
      throw config_error("asg: nominal frequencies must be > 0");
    if (!(band_lo_hz < f_lv_hz && f_lv_hz < band_hi_hz))
      throw config_error("asg: LV band must straddle the LV nominal");
  }
};

struct AsgState {
  double gov_integrator = 0.0; // accumulated integral term (pu power)
  double gov_prev_error = 0.0; // previous governor error, trapezoid memory (pu)
  double omega = 1.0;          // VSM speed state (pu of LV nominal)
  double f_lv = 1.0;           // LV frequency seen by the governor (pu)
  double p_mea = 0.0;          // last measured electric power (pu)
};

struct AsgInputs {
  double f_mv = 1.0;     // measured upstream frequency (pu of f0)
  double f_lv_ref = 1.0; // LV frequency set point (pu, normally 1.0)
  double p_mea = 0.0;    // measured electric active power (pu)
  double alpha = 1.0;    // share of droop-obeying LV units, in [0,1]
};

struct AsgOutput {
  double p_asg_mw = 0.0;   // signed injection at the upstream bus (MW)
  double p_asg_pu = 0.0;   // same, per-unit on the device rating
  double omega_star = 1.0; // LV frequency set point from the VSM (pu)
  double p_ff = 0.0;       // limited feed-forward power command (pu)
};

/// PI governor, Eq-style P_gov = Kpgov*e + integral(Kigov*e).
/// The integral term advances by the trapezoid rule; conditional integration
/// freezes it while the total output is saturated at +-Plim, and the returned
/// value is clamped to that band.
inline double governor_step(AsgState& s, double f_ref, double f_lv,
                            const AsgParams& p, double dt) {
  require_finite(f_ref, "governor f_ref");
  require_finite(f_lv, "governor f_lv");
  if (!(dt > 0.0)) throw std::invalid_argument("governor dt must be > 0");

  const double err = f_ref - f_lv;
  const double candidate =
      s.gov_integrator + p.ki_gov * dt * 0.5 * (s.gov_prev_error + err);
  const double unclamped = p.kp_gov * err + candidate;

  double out;
  if (std::abs(unclamped) <= p.p_lim) {
    s.gov_integrator = candidate;
    out = unclamped;
  } else {
    out = clamp(p.kp_gov * err + s.gov_integrator, -p.p_lim, p.p_lim);
  }
  s.gov_prev_error = err;
  return out;
}

/// Feed-forward summation: (1/R) * delta_f_mv + P_gov.
inline double feed_forward(double delta_f_mv, double p_gov,
                           const AsgParams& p) {
  require_finite(delta_f_mv, "delta_f_mv");
  require_finite(p_gov, "p_gov");
  return delta_f_mv / p.droop_r + p_gov;
}

/// Clamp the raw command to [-Plim, +Plim].
inline double apply_power_limit(double p_ff_raw, const AsgParams& p) {
  return clamp(p_ff_raw, -p.p_lim, p.p_lim);
}

/// Advances the first-order swing block
///   d(omega)/dt = (P_ff - P_mea - Dp*(omega-1)) / Ta
/// by one RK4 step with the power inputs held constant over dt. The returned
/// speed is clamped to the LV grid-code band.
inline double vsm_step(AsgState& s, double p_ff, double p_mea,
                       const AsgParams& p, double dt) {
  require_finite(p_ff, "vsm p_ff");
  require_finite(p_mea, "vsm p_mea");
  if (!(dt > 0.0)) throw std::invalid_argument("vsm dt must be > 0");
  if (dt > p.ta / 10.0)
    throw std::invalid_argument("vsm dt too large for Ta (need dt <= Ta/10)");

  const auto deriv = [&](double w) {
    return (p_ff - p_mea - p.dp * (w - 1.0)) / p.ta;
  };
  const double w = s.omega;
  const double k1 = deriv(w);
  const double k2 = deriv(w + 0.5 * dt * k1);
  const double k3 = deriv(w + 0.5 * dt * k2);
  const double k4 = deriv(w + dt * k3);
  double next = w + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  next = clamp(next, p.band_lo_pu(), p.band_hi_pu());
  s.omega = next;
  return next;
}

/// Droop response of the downstream units to the LV set point. Acts on the
/// full deviation once outside the deadband, zero strictly inside it.
inline double lv_droop_response(double omega_star, double alpha,
                                const AsgParams& p) {
  require_finite(omega_star, "omega_star");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("alpha must be within [0,1]");
  const double dw = omega_star - 1.0;
  if (std::abs(dw) < p.deadband_pu_lv()) return 0.0;
  return -p.kpf * alpha * dw;
}

/// Active power-to-frequency sensitivity (dP/P0)/(df/f0).
inline double compute_sensitivity(double delta_p, double p0, double delta_f,
                                  double f0) {
  require_finite(delta_p, "delta_p");
  require_finite(delta_f, "delta_f");
  if (!(p0 > 0.0)) throw std::invalid_argument("sensitivity p0 must be > 0");
  if (!(f0 > 0.0)) throw std::invalid_argument("sensitivity f0 must be > 0");
  if (delta_f == 0.0)
    throw std::invalid_argument("sensitivity undefined for delta_f = 0");
  return (delta_p / p0) / (delta_f / f0);
}

/// One control step: governor -> feed-forward -> limit -> VSM -> LV droop.
///
/// The upstream deviation enters twice, mirroring the block diagram: it is
/// amplified by 1/R into the power command, and it shifts the effective LV
/// reference (band-clamped) that the governor tracks, which is how the device
/// propagates an upstream event into the LV grid. Deviations strictly inside
/// the deadband (in Hz on the upstream base) are ignored; market-mode callers
/// apply their own gate on the regulation signal and move f_lv_ref directly.
inline AsgOutput asg_step(AsgState& s, const AsgInputs& in, const AsgParams& p,
                          double dt) {
  require_finite(in.f_mv, "f_mv");
  require_finite(in.f_lv_ref, "f_lv_ref");
  require_finite(in.p_mea, "p_mea");
  if (!(in.alpha >= 0.0 && in.alpha <= 1.0))
    throw std::invalid_argument("alpha must be within [0,1]");

  double df_mv = in.f_mv - 1.0;
  if (std::abs(df_mv) * p.f0_hz < p.deadband_hz) df_mv = 0.0;

  const double ref = clamp(in.f_lv_ref + p.prop_gain * df_mv, p.band_lo_pu(),
                           p.band_hi_pu());
  const double p_gov = governor_step(s, ref, s.f_lv, p, dt);
  const double p_ff = apply_power_limit(feed_forward(df_mv, p_gov, p), p);
  const double omega_star = vsm_step(s, p_ff, in.p_mea, p, dt);
  const double p_asg = lv_droop_response(omega_star, in.alpha, p);

  s.f_lv = omega_star;
  s.p_mea = p_asg;

  AsgOutput out;
  out.p_asg_pu = p_asg;
  out.p_asg_mw = p_asg * p.p_rated_mw;
  out.omega_star = omega_star;
  out.p_ff = p_ff;
  return out;
}

struct AsgTrajectory {
  std::vector<double> t;
  std::vector<double> p_asg_pu;
  std::vector<double> omega_star;
  std::vector<double> p_ff;
};

/// Drives the controller over sampled stimulus series, closing the power
/// measurement loop with the previous droop response.
inline AsgTrajectory run_asg(const AsgParams& p, std::span<const double> f_mv,
                             std::span<const double> f_lv_ref, double alpha,
                             double dt) {
  if (f_mv.size() != f_lv_ref.size())
    throw std::invalid_argument("run_asg: stimulus series length mismatch");
  p.validate();
  AsgState s;
  AsgTrajectory traj;
  traj.t.reserve(f_mv.size());
  traj.p_asg_pu.reserve(f_mv.size());
  traj.omega_star.reserve(f_mv.size());
  traj.p_ff.reserve(f_mv.size());
  for (std::size_t k = 0; k < f_mv.size(); ++k) {
    AsgInputs in;
    in.f_mv = f_mv[k];
    in.f_lv_ref = f_lv_ref[k];
    in.p_mea = s.p_mea;
    in.alpha = alpha;
    const AsgOutput out = asg_step(s, in, p, dt);
    traj.t.push_back(static_cast<double>(k) * dt);
    traj.p_asg_pu.push_back(out.p_asg_pu);
    traj.omega_star.push_back(out.omega_star);
    traj.p_ff.push_back(out.p_ff);
  }
  return traj;
}

}  // namespace asgsim::control
