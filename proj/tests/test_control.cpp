#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "asgsim/control.hpp"
#include "asgsim/rng.hpp"

using namespace asgsim;
using namespace asgsim::control;
using Catch::Approx;

namespace {

AsgParams table_params() {
  AsgParams p; // defaults carry the published model parameters
  return p;
}

// Independent small-step Euler oracle of the control chain, straight-line
// code on purpose: continuous feedback, forward-Euler integrals, same block
// semantics (deadband gate, reference propagation, limits, droop).
std::vector<double> euler_oracle_p_asg(const AsgParams& p, double alpha,
                                       double (*f_mv_of_t)(double),
                                       double t_end, double dt_sample,
                                       double dt_sub) {
  double integ = 0.0, omega = 1.0, p_mea = 0.0;
  const double band_lo = p.band_lo_hz / p.f_lv_hz;
  const double band_hi = p.band_hi_hz / p.f_lv_hz;
  const double db_lv = p.deadband_hz / p.f_lv_hz;
  std::vector<double> out;
  const int n_sample = static_cast<int>(std::llround(t_end / dt_sample));
  const int sub_per = static_cast<int>(std::llround(dt_sample / dt_sub));
  double p_asg = 0.0;
  for (int k = 0; k < n_sample; ++k) {
    for (int i = 0; i < sub_per; ++i) {
      const double t = k * dt_sample + i * dt_sub;
      double df = f_mv_of_t(t) - 1.0;
      if (std::abs(df) * p.f0_hz < p.deadband_hz) df = 0.0;
      double ref = 1.0 + p.prop_gain * df;
      if (ref < band_lo) ref = band_lo;
      if (ref > band_hi) ref = band_hi;
      const double err = ref - omega;
      double cand = integ + p.ki_gov * err * dt_sub;
      double pg = p.kp_gov * err + cand;
      if (std::abs(pg) <= p.p_lim) {
        integ = cand;
      } else {
        pg = p.kp_gov * err + integ;
        if (pg > p.p_lim) pg = p.p_lim;
        if (pg < -p.p_lim) pg = -p.p_lim;
      }
      double pff = df / p.droop_r + pg;
      if (pff > p.p_lim) pff = p.p_lim;
      if (pff < -p.p_lim) pff = -p.p_lim;
      omega += dt_sub * (pff - p_mea - p.dp * (omega - 1.0)) / p.ta;
      if (omega < band_lo) omega = band_lo;
      if (omega > band_hi) omega = band_hi;
      p_asg = std::abs(omega - 1.0) < db_lv ? 0.0 : -p.kpf * alpha * (omega - 1.0);
      p_mea = p_asg;
    }
    out.push_back(p_asg);
  }
  return out;
}

double ramp_stimulus(double t) {
  const double dip_hz = -0.3;
  const double ramp_s = 1.0;
  const double frac = t >= ramp_s ? 1.0 : t / ramp_s;
  return 1.0 + frac * dip_hz / 60.0;
}

}  // namespace

TEST_CASE("governor zero error produces zero output") {
  AsgParams p = table_params();
  AsgState s;
  REQUIRE(governor_step(s, 1.0, 1.0, p, 0.01) == 0.0);
  REQUIRE(s.gov_integrator == 0.0);
}

TEST_CASE("governor single trapezoid step from rest") {
  AsgParams p = table_params();
  AsgState s;
  // e = 0.001, first step: integral advances by Kigov*dt*(0+e)/2 = 0.0064350.
  const double out = governor_step(s, 1.001, 1.0, p, 0.01);
  REQUIRE(out == Approx(0.421 + 0.0064350).epsilon(1e-12));
  REQUIRE(s.gov_integrator == Approx(0.0064350).epsilon(1e-12));
  // Second step at the same error adds the full Kigov*e*dt = 0.012870.
  const double out2 = governor_step(s, 1.001, 1.0, p, 0.01);
  REQUIRE(out2 == Approx(0.421 + 0.0193050).epsilon(1e-12));
}

TEST_CASE("governor constant error matches the closed-form integral") {
  AsgParams p = table_params();
  p.p_lim = 10.0; // keep the check away from the limiter
  AsgState s;
  s.gov_prev_error = 0.001; // error already present before the window
  for (int k = 0; k < 100; ++k) governor_step(s, 1.001, 1.0, p, 0.01);
  // Trapezoid on a constant integrand is exact: Kigov*e*t = 1.287.
  REQUIRE(s.gov_integrator == Approx(1.287).epsilon(1e-12));

  AsgState cold; // without the seeded memory the first step counts half
  for (int k = 0; k < 100; ++k) governor_step(cold, 1.001, 1.0, p, 0.01);
  REQUIRE(cold.gov_integrator == Approx(1.287 - 0.5 * 0.012870).epsilon(1e-12));
  REQUIRE(cold.gov_integrator == Approx(1.287).epsilon(0.01));
}

TEST_CASE("governor anti-windup freezes the integrator while saturated") {
  AsgParams p = table_params();
  AsgState s;
  const double out = governor_step(s, 1.01, 1.0, p, 0.01); // Kp*e = 4.21 > Plim
  REQUIRE(out == p.p_lim);
  REQUIRE(s.gov_integrator == 0.0);
  for (int k = 0; k < 50; ++k) governor_step(s, 1.01, 1.0, p, 0.01);
  REQUIRE(s.gov_integrator == 0.0);
  REQUIRE(governor_step(s, 1.01, 1.0, p, 0.01) == p.p_lim);
}

TEST_CASE("governor rejects non-finite input and bad dt") {
  AsgParams p = table_params();
  AsgState s;
  REQUIRE_THROWS_AS(governor_step(s, std::nan(""), 1.0, p, 0.01),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(governor_step(s, 1.0, 1.0, p, 0.0), std::invalid_argument);
}

TEST_CASE("feed-forward amplifies the upstream deviation") {
  AsgParams p = table_params();
  REQUIRE(feed_forward(0.0, 0.0, p) == 0.0);
  REQUIRE(feed_forward(-0.004, 0.0, p) == Approx(-0.2).epsilon(1e-15));
  REQUIRE(feed_forward(0.01, 0.1, p) == Approx(0.6).epsilon(1e-15));
}

TEST_CASE("power limit clamps symmetrically") {
  AsgParams p = table_params();
  REQUIRE(apply_power_limit(0.3, p) == 0.3);
  REQUIRE(apply_power_limit(1.7, p) == 1.0);
  REQUIRE(apply_power_limit(-2.4, p) == -1.0);
}

TEST_CASE("vsm equilibrium is a fixed point") {
  AsgParams p = table_params();
  AsgState s;
  REQUIRE(vsm_step(s, 0.2, 0.2, p, 0.01) == 1.0);
  REQUIRE(s.omega == 1.0);
}

TEST_CASE("vsm steady state and time constant match the linear ODE") {
  AsgParams p = table_params();
  AsgState s;
  const double dp_step = 0.1;
  const double dt = 0.01;
  const double t_end = 5.0 * p.ta / p.dp; // ~2.58 s
  const int n = static_cast<int>(t_end / dt);
  double max_rel = 0.0;
  for (int k = 1; k <= n; ++k) {
    const double w = vsm_step(s, dp_step, 0.0, p, dt);
    const double t = k * dt;
    const double exact = 1.0 + dp_step / p.dp * (1.0 - std::exp(-p.dp * t / p.ta));
    max_rel = std::max(max_rel, std::abs(w - exact) / (dp_step / p.dp));
  }
  REQUIRE(max_rel < 1e-7); // RK4 on the closed-form response
  const double dw_ss = dp_step / p.dp;
  REQUIRE(std::abs((s.omega - 1.0) - dw_ss) < 0.01 * dw_ss);
}

TEST_CASE("vsm clamps to the LV grid-code band") {
  AsgParams p = table_params();
  AsgState s;
  for (int k = 0; k < 2000; ++k) vsm_step(s, 1.0, 0.0, p, 0.01);
  REQUIRE(s.omega == Approx(p.band_hi_pu()));
}

TEST_CASE("vsm rejects an oversized step") {
  AsgParams p = table_params();
  AsgState s;
  REQUIRE_THROWS_AS(vsm_step(s, 0.0, 0.0, p, 0.4), std::invalid_argument);
}

TEST_CASE("lv droop deadband and gain") {
  AsgParams p = table_params();
  REQUIRE(lv_droop_response(1.0 + 0.1 / 50.0, 1.0, p) == 0.0); // 0.1 Hz inside
  REQUIRE(lv_droop_response(1.0, 0.7, p) == 0.0);
  const double r = lv_droop_response(1.01, 1.0, p); // +0.5 Hz on 50 Hz
  REQUIRE(std::abs(r) == Approx(0.004).epsilon(1e-12));
  REQUIRE(r < 0.0); // over-frequency absorbs
}

TEST_CASE("lv droop is linear in alpha outside the deadband") {
  AsgParams p = table_params();
  Rng rng(7);
  for (int k = 0; k < 200; ++k) {
    const double dw = (rng.uniform() - 0.5) * 0.08;
    const double alpha = rng.uniform();
    const double full = lv_droop_response(1.0 + dw, 1.0, p);
    const double scaled = lv_droop_response(1.0 + dw, alpha, p);
    REQUIRE(scaled == Approx(alpha * full).margin(1e-15));
  }
}

TEST_CASE("sensitivity reproduces the grid-code figures") {
  REQUIRE(compute_sensitivity(-4.0, 100.0, 0.12, 60.0) == Approx(-20.0));
  REQUIRE(compute_sensitivity(0.0, 100.0, 0.12, 60.0) == 0.0);
  REQUIRE(compute_sensitivity(10.0, 100.0, 0.12, 60.0) == Approx(50.0));
  REQUIRE_THROWS_AS(compute_sensitivity(1.0, 100.0, 0.0, 60.0),
                    std::invalid_argument);
}

TEST_CASE("asg_step equilibrium is exact") {
  AsgParams p = table_params();
  AsgState s;
  AsgInputs in; // all nominal
  for (int k = 0; k < 100; ++k) {
    const AsgOutput out = asg_step(s, in, p, 0.005);
    REQUIRE(out.p_asg_pu == 0.0);
    REQUIRE(out.omega_star == 1.0);
    REQUIRE(out.p_ff == 0.0);
  }
  REQUIRE(s.gov_integrator == 0.0);
  REQUIRE(s.omega == 1.0);
}

TEST_CASE("asg_step tracks the small-step Euler oracle on an MV ramp") {
  AsgParams p = table_params();
  const double dt = 0.005, t_end = 10.0;
  const int n = static_cast<int>(t_end / dt);
  std::vector<double> f_mv(n), f_ref(n, 1.0);
  for (int k = 0; k < n; ++k) f_mv[k] = ramp_stimulus(k * dt);
  const AsgTrajectory traj = run_asg(p, f_mv, f_ref, 1.0, dt);

  const std::vector<double> oracle =
      euler_oracle_p_asg(p, 1.0, ramp_stimulus, t_end, dt, 1e-5);
  REQUIRE(oracle.size() == traj.p_asg_pu.size());
  double acc = 0.0, peak = 0.0;
  for (std::size_t k = 0; k < oracle.size(); ++k) {
    const double d = oracle[k] - traj.p_asg_pu[k];
    acc += d * d;
    peak = std::max(peak, std::abs(oracle[k]));
  }
  const double rms = std::sqrt(acc / oracle.size());
  REQUIRE(peak > 0.015); // the event produces a real response
  REQUIRE(rms < 0.02 * peak);

  // Responds (injection, under-frequency) within 2 s of the event.
  const int k2s = static_cast<int>(2.0 / dt);
  REQUIRE(traj.p_asg_pu[k2s] > 0.01);
  // Saturation bound from the grid-code band times the droop gain.
  const double cap = p.kpf * (1.0 - p.band_lo_pu()) + 1e-12;
  for (const double v : traj.p_asg_pu) REQUIRE(std::abs(v) <= cap);
}

TEST_CASE("asg_step with alpha = 0 never responds") {
  AsgParams p = table_params();
  const double dt = 0.005;
  const int n = 2000;
  std::vector<double> f_mv(n), f_ref(n, 1.0);
  for (int k = 0; k < n; ++k) f_mv[k] = ramp_stimulus(k * dt);
  const AsgTrajectory traj = run_asg(p, f_mv, f_ref, 0.0, dt);
  for (const double v : traj.p_asg_pu) REQUIRE(v == 0.0);
}

TEST_CASE("asg_step is deterministic") {
  AsgParams p = table_params();
  const double dt = 0.005;
  const int n = 1000;
  std::vector<double> f_mv(n), f_ref(n);
  Rng rng(3);
  for (int k = 0; k < n; ++k) {
    f_mv[k] = 1.0 + (rng.uniform() - 0.5) * 0.02;
    f_ref[k] = 1.0 + (rng.uniform() - 0.5) * 0.02;
  }
  const AsgTrajectory a = run_asg(p, f_mv, f_ref, 0.8, dt);
  const AsgTrajectory b = run_asg(p, f_mv, f_ref, 0.8, dt);
  REQUIRE(std::memcmp(a.p_asg_pu.data(), b.p_asg_pu.data(),
                      a.p_asg_pu.size() * sizeof(double)) == 0);
  REQUIRE(std::memcmp(a.omega_star.data(), b.omega_star.data(),
                      a.omega_star.size() * sizeof(double)) == 0);
}

TEST_CASE("command saturation holds on random input sequences") {
  AsgParams p = table_params();
  Rng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    AsgState s;
    for (int k = 0; k < 2000; ++k) {
      AsgInputs in;
      in.f_mv = 1.0 + (rng.uniform() - 0.5) * 0.04;
      in.f_lv_ref = 1.0 + (rng.uniform() - 0.5) * 0.06;
      in.p_mea = s.p_mea;
      in.alpha = rng.uniform();
      const AsgOutput out = asg_step(s, in, p, 0.005);
      REQUIRE(std::abs(out.p_ff) <= p.p_lim);
    }
  }
}

TEST_CASE("set points inside the deadband never produce a response") {
  AsgParams p = table_params();
  Rng rng(13);
  AsgState s;
  for (int k = 0; k < 4000; ++k) {
    AsgInputs in;
    in.f_mv = 1.0; // no upstream event
    in.f_lv_ref = 1.0 + (rng.uniform() - 0.5) * p.deadband_pu_lv();
    in.p_mea = s.p_mea;
    in.alpha = 1.0;
    const AsgOutput out = asg_step(s, in, p, 0.005);
    REQUIRE(out.p_asg_pu == 0.0);
  }
}

TEST_CASE("halving dt converges at first order or better") {
  AsgParams p = table_params();
  const auto run_at = [&](double dt) {
    const int n = static_cast<int>(8.0 / dt);
    std::vector<double> f_mv(n, 1.0 - 0.3 / 60.0); // event active from t = 0
    std::vector<double> f_ref(n, 1.0);
    return run_asg(p, f_mv, f_ref, 1.0, dt);
  };
  const AsgTrajectory c = run_at(0.008);
  const AsgTrajectory m = run_at(0.004);
  const AsgTrajectory f = run_at(0.002);
  const auto rms_diff = [](const AsgTrajectory& a, const AsgTrajectory& b,
                           int stride_a, int stride_b) {
    double acc = 0.0;
    int n = 0;
    for (std::size_t k = 0; k * stride_a < a.omega_star.size() &&
                            k * stride_b < b.omega_star.size();
         ++k) {
      const double d =
          a.omega_star[k * stride_a] - b.omega_star[k * stride_b];
      acc += d * d;
      ++n;
    }
    return std::sqrt(acc / n);
  };
  const double e_coarse = rms_diff(c, m, 1, 2);
  const double e_fine = rms_diff(m, f, 1, 2);
  REQUIRE(e_fine < e_coarse);
  REQUIRE(e_coarse / e_fine > 1.8); // at least first-order convergence
}
