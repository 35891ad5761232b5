#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "asgsim/common.hpp"
#include "asgsim/control.hpp"

// Multi-machine RMS simulation of a small transmission system (classical
// machine model behind X'd, first-order governor/turbine, constant-impedance
// loads, algebraic network solve) with the ASG attached as a controllable
// power injection. Defaults reproduce the Anderson-Fouad 9-bus system at
// 60 Hz on a 100 MVA base.

namespace asgsim::grid {

using cplx = std::complex<double>;

struct Bus {
  int id = 0;
  double base_kv = 230.0;
};

struct Branch {
  int from = 0, to = 0;
  double r = 0.0, x = 0.0;
  double b_half = 0.0; // total line charging / 2, pu
};

struct Generator {
  int bus = 0;
  double p_mw = 0.0;  // dispatch (MW); ignored for the slack machine
  double v_set = 1.0; // voltage set point (pu)
  double h_s = 5.0;   // inertia constant (s, on system base)
  double d_pu = 0.0;  // damping (pu)
  double xdp = 0.1;   // transient reactance (pu)
  double rg = 0.05;   // governor droop (pu, on system base)
  double tt_s = 0.5;  // turbine time constant (s)
  bool slack = false;
};

struct Load {
  int bus = 0;
  double p_mw = 0.0;
  double q_mvar = 0.0;
};

struct GridModel {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<Load> loads;
  double f0_hz = 60.0;
  double s_base_mva = 100.0;

  int bus_index(int id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return static_cast<int>(i);
    throw config_error("grid: unknown bus id " + std::to_string(id));
  }

  double total_load_mw() const {
    double p = 0.0;
    for (const auto& l : loads) p += l.p_mw;
    return p;
  }

  void validate() const {
    if (buses.empty()) throw config_error("grid: no buses");
    for (std::size_t i = 0; i < buses.size(); ++i)
      for (std::size_t j = i + 1; j < buses.size(); ++j)
        if (buses[i].id == buses[j].id)
          throw config_error("grid: duplicate bus id");
    bool slack = false;
    for (const auto& g : generators) {
      bus_index(g.bus);
      if (!(g.h_s > 0.0)) throw config_error("grid: machine H must be > 0");
      if (!(g.xdp > 0.0)) throw config_error("grid: machine X'd must be > 0");
      if (!(g.rg > 0.0)) throw config_error("grid: governor droop must be > 0");
      if (!(g.tt_s > 0.0)) throw config_error("grid: turbine Tt must be > 0");
      slack = slack || g.slack;
    }
    if (!slack) throw config_error("grid: no slack machine");
    for (const auto& l : loads) bus_index(l.bus);

    // Connectivity over branches.
    const std::size_t n = buses.size();
    std::vector<std::vector<int>> adj(n);
    for (const auto& b : branches) {
      const int i = bus_index(b.from), j = bus_index(b.to);
      adj[static_cast<std::size_t>(i)].push_back(j);
      adj[static_cast<std::size_t>(j)].push_back(i);
    }
    std::vector<bool> seen(n, false);
    std::queue<int> q;
    q.push(0);
    seen[0] = true;
    std::size_t count = 1;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (const int v : adj[static_cast<std::size_t>(u)])
        if (!seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = true;
          ++count;
          q.push(v);
        }
    }
    if (count != n) throw config_error("grid: network is not connected");
  }
};

/// Anderson-Fouad 9-bus system. Machine electrical constants are the
/// published ones; governor droop/lag and damping are documented toolkit
/// defaults chosen to give a sub-300 mHz dip for the 4.5 MW load step.
inline GridModel build_ieee9() {
  GridModel m;
  m.buses = {{1, 16.5}, {2, 18.0}, {3, 13.8}, {4, 230.0}, {5, 230.0},
             {6, 230.0}, {7, 230.0}, {8, 230.0}, {9, 230.0}};
  m.branches = {
      {1, 4, 0.0, 0.0576, 0.0},      {2, 7, 0.0, 0.0625, 0.0},
      {3, 9, 0.0, 0.0586, 0.0},      {4, 5, 0.010, 0.085, 0.088},
      {4, 6, 0.017, 0.092, 0.079},   {5, 7, 0.032, 0.161, 0.153},
      {6, 9, 0.039, 0.170, 0.179},   {7, 8, 0.0085, 0.072, 0.0745},
      {8, 9, 0.0119, 0.1008, 0.1045}};
  m.generators = {
      {1, 71.6, 1.040, 23.64, 1.0, 0.0608, 0.40, 6.0, true},
      {2, 163.0, 1.025, 6.40, 1.0, 0.1198, 0.40, 6.0, false},
      {3, 85.0, 1.025, 3.01, 1.0, 0.1813, 0.40, 6.0, false}};
  m.loads = {{5, 125.0, 50.0}, {6, 90.0, 30.0}, {8, 100.0, 35.0}};
  return m;
}

namespace detail {

inline Eigen::MatrixXcd build_ybus(const GridModel& m) {
  const Eigen::Index n = static_cast<Eigen::Index>(m.buses.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& b : m.branches) {
    const Eigen::Index i = m.bus_index(b.from);
    const Eigen::Index j = m.bus_index(b.to);
    const cplx zs(b.r, b.x);
    const cplx ys = 1.0 / zs;
    const cplx ysh(0.0, b.b_half);
    y(i, i) += ys + ysh;
    y(j, j) += ys + ysh;
    y(i, j) -= ys;
    y(j, i) -= ys;
  }
  return y;
}

}  // namespace detail

struct PowerFlowResult {
  Eigen::VectorXcd v;           // bus voltages (pu)
  std::vector<cplx> gen_emf;    // internal EMF behind X'd
  std::vector<double> gen_pm0;  // initial mechanical power (pu)
  double mismatch = 0.0;
  int iterations = 0;
};

/// Newton-Raphson power flow (polar), mismatch < 1e-8 pu, flat start.
/// Machine internal states are back-computed so the dynamic model starts at
/// an exact equilibrium.
inline PowerFlowResult solve_power_flow(const GridModel& m) {
  m.validate();
  const std::size_t n = m.buses.size();
  const Eigen::MatrixXcd y = detail::build_ybus(m);

  // Bus classification: one slack, PV at generator buses, PQ elsewhere.
  std::vector<int> kind(n, 0); // 0 = PQ, 1 = PV, 2 = slack
  std::vector<double> p_spec(n, 0.0), q_spec(n, 0.0), v_sched(n, 1.0);
  for (const auto& g : m.generators) {
    const int i = m.bus_index(g.bus);
    kind[static_cast<std::size_t>(i)] = g.slack ? 2 : 1;
    v_sched[static_cast<std::size_t>(i)] = g.v_set;
    p_spec[static_cast<std::size_t>(i)] += g.p_mw / m.s_base_mva;
  }
  for (const auto& l : m.loads) {
    const int i = m.bus_index(l.bus);
    p_spec[static_cast<std::size_t>(i)] -= l.p_mw / m.s_base_mva;
    q_spec[static_cast<std::size_t>(i)] -= l.q_mvar / m.s_base_mva;
  }

  std::vector<double> th(n, 0.0), vm(n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    if (kind[i] != 0) vm[i] = v_sched[i];

  std::vector<int> ang_idx, mag_idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (kind[i] != 2) ang_idx.push_back(static_cast<int>(i));
    if (kind[i] == 0) mag_idx.push_back(static_cast<int>(i));
  }
  const Eigen::Index nu = static_cast<Eigen::Index>(ang_idx.size() + mag_idx.size());

  const auto calc_pq = [&](std::size_t i, double& p, double& q) {
    p = 0.0;
    q = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double g = y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)).real();
      const double b = y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)).imag();
      const double t = th[i] - th[k];
      p += vm[i] * vm[k] * (g * std::cos(t) + b * std::sin(t));
      q += vm[i] * vm[k] * (g * std::sin(t) - b * std::cos(t));
    }
  };

  PowerFlowResult res;
  double max_mis = 0.0;
  int it = 0;
  for (; it < 50; ++it) {
    Eigen::VectorXd mis(nu);
    std::vector<double> pc(n), qc(n);
    for (std::size_t i = 0; i < n; ++i) calc_pq(i, pc[i], qc[i]);
    Eigen::Index r = 0;
    max_mis = 0.0;
    for (const int i : ang_idx) {
      mis(r) = p_spec[static_cast<std::size_t>(i)] - pc[static_cast<std::size_t>(i)];
      max_mis = std::max(max_mis, std::abs(mis(r)));
      ++r;
    }
    for (const int i : mag_idx) {
      mis(r) = q_spec[static_cast<std::size_t>(i)] - qc[static_cast<std::size_t>(i)];
      max_mis = std::max(max_mis, std::abs(mis(r)));
      ++r;
    }
    if (max_mis < 1e-8) break;

    Eigen::MatrixXd jac(nu, nu);
    const auto gij = [&](std::size_t i, std::size_t j) {
      return y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)).real();
    };
    const auto bij = [&](std::size_t i, std::size_t j) {
      return y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)).imag();
    };
    Eigen::Index rr = 0;
    for (const int ii : ang_idx) {
      const std::size_t i = static_cast<std::size_t>(ii);
      Eigen::Index cc = 0;
      for (const int jj : ang_idx) {
        const std::size_t j = static_cast<std::size_t>(jj);
        if (i == j)
          jac(rr, cc) = -qc[i] - bij(i, i) * vm[i] * vm[i];
        else
          jac(rr, cc) = vm[i] * vm[j] *
                        (gij(i, j) * std::sin(th[i] - th[j]) -
                         bij(i, j) * std::cos(th[i] - th[j]));
        ++cc;
      }
      for (const int jj : mag_idx) {
        const std::size_t j = static_cast<std::size_t>(jj);
        if (i == j)
          jac(rr, cc) = pc[i] / vm[i] + gij(i, i) * vm[i];
        else
          jac(rr, cc) = vm[i] * (gij(i, j) * std::cos(th[i] - th[j]) +
                                 bij(i, j) * std::sin(th[i] - th[j]));
        ++cc;
      }
      ++rr;
    }
    for (const int ii : mag_idx) {
      const std::size_t i = static_cast<std::size_t>(ii);
      Eigen::Index cc = 0;
      for (const int jj : ang_idx) {
        const std::size_t j = static_cast<std::size_t>(jj);
        if (i == j)
          jac(rr, cc) = pc[i] - gij(i, i) * vm[i] * vm[i];
        else
          jac(rr, cc) = -vm[i] * vm[j] *
                        (gij(i, j) * std::cos(th[i] - th[j]) +
                         bij(i, j) * std::sin(th[i] - th[j]));
        ++cc;
      }
      for (const int jj : mag_idx) {
        const std::size_t j = static_cast<std::size_t>(jj);
        if (i == j)
          jac(rr, cc) = qc[i] / vm[i] - bij(i, i) * vm[i];
        else
          jac(rr, cc) = vm[i] * (gij(i, j) * std::sin(th[i] - th[j]) -
                                 bij(i, j) * std::cos(th[i] - th[j]));
        ++cc;
      }
      ++rr;
    }

    const Eigen::VectorXd dx = jac.partialPivLu().solve(mis);
    if (!dx.allFinite())
      throw numeric_error("power flow: singular Jacobian");
    Eigen::Index c = 0;
    for (const int i : ang_idx) th[static_cast<std::size_t>(i)] += dx(c++);
    for (const int i : mag_idx) vm[static_cast<std::size_t>(i)] += dx(c++);
    if (*std::min_element(vm.begin(), vm.end()) < 0.1)
      throw numeric_error("power flow did not converge (voltage collapse)");
  }
  if (max_mis >= 1e-8)
    throw numeric_error("power flow did not converge in 50 iterations");

  res.mismatch = max_mis;
  res.iterations = it;
  res.v.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    res.v(static_cast<Eigen::Index>(i)) = std::polar(vm[i], th[i]);

  // Back-compute machine internals: E = V + jX'd I, Pm = Pe at t = 0.
  for (const auto& g : m.generators) {
    const std::size_t i = static_cast<std::size_t>(m.bus_index(g.bus));
    cplx s_inj = res.v(static_cast<Eigen::Index>(i)) *
                 std::conj((y * res.v)(static_cast<Eigen::Index>(i)));
    for (const auto& l : m.loads)
      if (static_cast<std::size_t>(m.bus_index(l.bus)) == i)
        s_inj += cplx(l.p_mw, l.q_mvar) / m.s_base_mva;
    const cplx ig = std::conj(s_inj / res.v(static_cast<Eigen::Index>(i)));
    const cplx e = res.v(static_cast<Eigen::Index>(i)) + cplx(0.0, g.xdp) * ig;
    res.gen_emf.push_back(e);
    res.gen_pm0.push_back((e * std::conj(ig)).real());
  }
  return res;
}

struct DisturbanceSpec {
  int bus = 6;
  double delta_p_mw = 4.5;
  double t_apply_s = 1.0;
};

struct AsgPlacement {
  control::AsgParams params;
  int bus = 5;
  double alpha = 1.0;
  double filter_tc_s = 0.05;
  // The aggregated behind-the-meter response does not hold indefinitely:
  // the delivered support washes out first-order with this constant, giving
  // the finite-energy support pulse of an FFR device. <= 0 disables it.
  double washout_tc_s = 5.0;
  // Optional output slew limit of the delivered support, per-unit of
  // rating per second; <= 0 disables it.
  double slew_pu_per_s = 0.0;
};

struct SimResult {
  double dt = 0.0;
  double t_apply = 0.0;
  std::vector<double> t;
  std::vector<int> bus_ids;
  std::vector<std::vector<double>> bus_freq_hz; // [bus][step]
  std::vector<double> asg_p_mw;                 // delivered injection at the ASG bus
  std::vector<std::vector<double>> gen_delta_rad;
  std::vector<std::vector<double>> gen_omega_pu;
  bool unstable = false;
  double t_unstable = 0.0;
};

/// Bus frequency from an angle series: f = f0 + (dtheta/dt)/(2*pi), wrapped
/// differences, then a first-order low-pass with time constant filter_tc.
inline std::vector<double> bus_frequency_estimate(std::span<const double> angle,
                                                  double dt, double f0,
                                                  double filter_tc) {
  if (angle.size() < 3)
    throw std::invalid_argument("frequency estimate needs >= 3 samples");
  if (!(dt > 0.0)) throw std::invalid_argument("frequency estimate dt > 0");
  std::vector<double> f(angle.size(), f0);
  const double a = filter_tc > 0.0 ? std::min(1.0, dt / filter_tc) : 1.0;
  double est = f0;
  for (std::size_t k = 1; k < angle.size(); ++k) {
    const double dth = std::remainder(angle[k] - angle[k - 1], 2.0 * std::numbers::pi);
    const double raw = f0 + dth / (2.0 * std::numbers::pi * dt);
    est += a * (raw - est);
    f[k] = est;
  }
  return f;
}

/// Fixed-step RMS run. Classical machines integrate with RK4 (network solved
/// at every stage); the ASG is a sampled controller updated once per step
/// from the filtered frequency at its bus, injecting through a constant
/// current source over the step.
inline SimResult run(const GridModel& m, const DisturbanceSpec& dist,
                     const std::optional<AsgPlacement>& asg, double dt,
                     double horizon) {
  m.validate();
  if (!(dt > 0.0 && dt <= 0.010))
    throw config_error("grid run: dt must be in (0, 10 ms]");
  if (!(dist.t_apply_s >= 0.0 && dist.t_apply_s < horizon))
    throw config_error("grid run: disturbance time outside horizon");

  const PowerFlowResult pf = solve_power_flow(m);
  const std::size_t n = m.buses.size();
  const std::size_t ng = m.generators.size();
  const double ws = 2.0 * std::numbers::pi * m.f0_hz;

  // Dynamic admittance matrix: network + constant-Z loads + machine shunts.
  Eigen::MatrixXcd ydyn = detail::build_ybus(m);
  for (const auto& l : m.loads) {
    const Eigen::Index i = m.bus_index(l.bus);
    const cplx s(l.p_mw / m.s_base_mva, l.q_mvar / m.s_base_mva);
    ydyn(i, i) += std::conj(s) / std::norm(pf.v(i));
  }
  std::vector<Eigen::Index> gbus(ng);
  std::vector<cplx> yg(ng);
  for (std::size_t g = 0; g < ng; ++g) {
    gbus[g] = m.bus_index(m.generators[g].bus);
    yg[g] = 1.0 / cplx(0.0, m.generators[g].xdp);
    ydyn(gbus[g], gbus[g]) += yg[g];
  }
  Eigen::MatrixXcd ypost = ydyn;
  {
    const Eigen::Index i = m.bus_index(dist.bus);
    ypost(i, i) += dist.delta_p_mw / m.s_base_mva / std::norm(pf.v(i));
  }
  const Eigen::PartialPivLU<Eigen::MatrixXcd> lu_pre(ydyn);
  const Eigen::PartialPivLU<Eigen::MatrixXcd> lu_post(ypost);

  // Machine states.
  std::vector<double> delta(ng), omega(ng, 1.0), pm(ng), pm_ref(ng), emag(ng);
  for (std::size_t g = 0; g < ng; ++g) {
    delta[g] = std::arg(pf.gen_emf[g]);
    emag[g] = std::abs(pf.gen_emf[g]);
    pm[g] = pf.gen_pm0[g];
    pm_ref[g] = pf.gen_pm0[g];
  }

  const Eigen::Index asg_bus =
      asg ? static_cast<Eigen::Index>(m.bus_index(asg->bus)) : 0;
  control::AsgState asg_state;
  double asg_cmd_mw = 0.0;  // delivered command after washout/slew
  double washout_state = 0.0;
  double f_est = m.f0_hz;   // filtered frequency at the ASG bus
  const double filt_a =
      asg && asg->filter_tc_s > 0.0 ? std::min(1.0, dt / asg->filter_tc_s) : 1.0;

  const std::size_t steps = static_cast<std::size_t>(std::llround(horizon / dt));
  SimResult out;
  out.dt = dt;
  out.t_apply = dist.t_apply_s;
  out.bus_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.bus_ids[i] = m.buses[i].id;
  std::vector<std::vector<double>> bus_angle(n);
  for (auto& v : bus_angle) v.reserve(steps + 1);
  out.asg_p_mw.reserve(steps + 1);
  out.gen_delta_rad.resize(ng);
  out.gen_omega_pu.resize(ng);
  out.t.reserve(steps + 1);

  Eigen::VectorXcd ivec(static_cast<Eigen::Index>(n));
  Eigen::VectorXcd v = pf.v;

  struct Deriv {
    std::vector<double> ddelta, domega, dpm;
  };
  const auto network_solve = [&](const std::vector<double>& dl, double t,
                                 const cplx& i_asg) -> Eigen::VectorXcd {
    ivec.setZero();
    for (std::size_t g = 0; g < ng; ++g)
      ivec(gbus[g]) += std::polar(emag[g], dl[g]) * yg[g];
    if (i_asg != cplx(0.0, 0.0)) ivec(asg_bus) += i_asg;
    return t >= dist.t_apply_s ? lu_post.solve(ivec) : lu_pre.solve(ivec);
  };
  const auto eval = [&](const std::vector<double>& dl,
                        const std::vector<double>& om,
                        const std::vector<double>& pmv, double t,
                        const cplx& i_asg, Eigen::VectorXcd& vout) -> Deriv {
    vout = network_solve(dl, t, i_asg);
    Deriv d;
    d.ddelta.resize(ng);
    d.domega.resize(ng);
    d.dpm.resize(ng);
    for (std::size_t g = 0; g < ng; ++g) {
      const cplx e = std::polar(emag[g], dl[g]);
      const cplx ig = (e - vout(gbus[g])) * yg[g];
      const double pe = (e * std::conj(ig)).real();
      const auto& gen = m.generators[g];
      d.ddelta[g] = ws * (om[g] - 1.0);
      d.domega[g] = (pmv[g] - pe - gen.d_pu * (om[g] - 1.0)) / (2.0 * gen.h_s);
      d.dpm[g] = (pm_ref[g] + (1.0 - om[g]) / gen.rg - pmv[g]) / gen.tt_s;
    }
    return d;
  };

  std::vector<double> d1(ng), o1(ng), p1(ng);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;

    // Delivered ASG power via a constant current source at the last voltage.
    cplx i_asg(0.0, 0.0);
    double delivered_mw = 0.0;
    if (asg && asg_cmd_mw != 0.0) {
      const double p_pu = asg_cmd_mw / m.s_base_mva;
      i_asg = p_pu / std::conj(v(asg_bus));
    }
    v = network_solve(delta, t, i_asg);
    if (i_asg != cplx(0.0, 0.0))
      delivered_mw = (v(asg_bus) * std::conj(i_asg)).real() * m.s_base_mva;

    out.t.push_back(t);
    for (std::size_t i = 0; i < n; ++i)
      bus_angle[i].push_back(std::arg(v(static_cast<Eigen::Index>(i))));
    out.asg_p_mw.push_back(delivered_mw);
    for (std::size_t g = 0; g < ng; ++g) {
      out.gen_delta_rad[g].push_back(delta[g]);
      out.gen_omega_pu[g].push_back(omega[g]);
    }

    // Loss-of-synchronism guard on pairwise machine angles.
    for (std::size_t a = 0; a < ng && !out.unstable; ++a)
      for (std::size_t b = a + 1; b < ng; ++b)
        if (std::abs(std::remainder(delta[a] - delta[b], 2.0 * std::numbers::pi)) >
            std::numbers::pi * 0.999) {
          out.unstable = true;
          out.t_unstable = t;
        }
    if (out.unstable || k == steps) break;

    // Sampled ASG controller: filtered local frequency -> next command.
    if (asg) {
      if (k > 0) {
        const std::size_t ai = static_cast<std::size_t>(asg_bus);
        const double dth = std::remainder(
            bus_angle[ai][k] - bus_angle[ai][k - 1], 2.0 * std::numbers::pi);
        const double f_raw = m.f0_hz + dth / (2.0 * std::numbers::pi * dt);
        f_est += filt_a * (f_raw - f_est);
      }
      control::AsgInputs in;
      in.f_mv = f_est / m.f0_hz;
      in.f_lv_ref = 1.0;
      in.p_mea = asg_state.p_mea;
      in.alpha = asg->alpha;
      const control::AsgOutput o = control::asg_step(asg_state, in, asg->params, dt);
      double cmd_pu = o.p_asg_pu;
      if (asg->washout_tc_s > 0.0) {
        washout_state += dt / asg->washout_tc_s * (cmd_pu - washout_state);
        cmd_pu -= washout_state;
      }
      if (asg->slew_pu_per_s > 0.0) {
        const double prev_pu = asg->params.p_rated_mw > 0.0
                                   ? asg_cmd_mw / asg->params.p_rated_mw
                                   : 0.0;
        const double move = asg->slew_pu_per_s * dt;
        cmd_pu = clamp(cmd_pu, prev_pu - move, prev_pu + move);
      }
      asg_cmd_mw = cmd_pu * asg->params.p_rated_mw;
    }

    // RK4 over the machine states; the ASG current is held over the step.
    Eigen::VectorXcd vtmp;
    const Deriv ka = eval(delta, omega, pm, t, i_asg, vtmp);
    for (std::size_t g = 0; g < ng; ++g) {
      d1[g] = delta[g] + 0.5 * dt * ka.ddelta[g];
      o1[g] = omega[g] + 0.5 * dt * ka.domega[g];
      p1[g] = pm[g] + 0.5 * dt * ka.dpm[g];
    }
    const Deriv kb = eval(d1, o1, p1, t + 0.5 * dt, i_asg, vtmp);
    for (std::size_t g = 0; g < ng; ++g) {
      d1[g] = delta[g] + 0.5 * dt * kb.ddelta[g];
      o1[g] = omega[g] + 0.5 * dt * kb.domega[g];
      p1[g] = pm[g] + 0.5 * dt * kb.dpm[g];
    }
    const Deriv kc = eval(d1, o1, p1, t + 0.5 * dt, i_asg, vtmp);
    for (std::size_t g = 0; g < ng; ++g) {
      d1[g] = delta[g] + dt * kc.ddelta[g];
      o1[g] = omega[g] + dt * kc.domega[g];
      p1[g] = pm[g] + dt * kc.dpm[g];
    }
    const Deriv kd = eval(d1, o1, p1, t + dt, i_asg, vtmp);
    for (std::size_t g = 0; g < ng; ++g) {
      delta[g] += dt / 6.0 *
                  (ka.ddelta[g] + 2.0 * kb.ddelta[g] + 2.0 * kc.ddelta[g] +
                   kd.ddelta[g]);
      omega[g] += dt / 6.0 *
                  (ka.domega[g] + 2.0 * kb.domega[g] + 2.0 * kc.domega[g] +
                   kd.domega[g]);
      pm[g] += dt / 6.0 *
               (ka.dpm[g] + 2.0 * kb.dpm[g] + 2.0 * kc.dpm[g] + kd.dpm[g]);
    }
  }

  out.bus_freq_hz.resize(n);
  const double tc = asg ? asg->filter_tc_s : 0.05;
  for (std::size_t i = 0; i < n; ++i)
    out.bus_freq_hz[i] = bus_frequency_estimate(bus_angle[i], dt, m.f0_hz, tc);
  return out;
}

struct ResponseMetrics {
  double t_nadir_s = 0.0;       // from disturbance application
  double f_nadir_hz = 0.0;
  double delta_t_nadir_s = 0.0; // vs base case
  double pct_change = 0.0;      // delta_t / t_nadir_base * 100
  double delta_e_kwh = 0.0;     // integral of the ASG injection
};

namespace detail {

struct Nadir {
  double t_rel = 0.0;
  double f = 0.0;
};

inline Nadir find_nadir(const SimResult& r, int bus_id) {
  std::size_t bi = r.bus_ids.size();
  for (std::size_t i = 0; i < r.bus_ids.size(); ++i)
    if (r.bus_ids[i] == bus_id) bi = i;
  if (bi == r.bus_ids.size())
    throw std::invalid_argument("metrics: unknown bus id");
  const auto& f = r.bus_freq_hz[bi];
  std::size_t k0 = 0;
  while (k0 < r.t.size() && r.t[k0] <= r.t_apply) ++k0;
  if (k0 + 2 >= f.size())
    throw numeric_error("metrics: window too short after disturbance");
  std::size_t kmin = k0;
  for (std::size_t k = k0; k < f.size(); ++k)
    if (f[k] < f[kmin]) kmin = k;
  if (kmin <= k0 || kmin + 1 >= f.size())
    throw numeric_error("metrics: no interior post-disturbance minimum");

  // Parabolic refinement around the discrete minimum.
  const double fm = f[kmin - 1], f0 = f[kmin], fp = f[kmin + 1];
  const double den = fm - 2.0 * f0 + fp;
  double h = 0.0;
  if (den > 1e-300) h = 0.5 * (fm - fp) / den;
  h = clamp(h, -0.5, 0.5);
  Nadir nd;
  nd.t_rel = r.t[kmin] + h * r.dt - r.t_apply;
  nd.f = f0 - 0.25 * (fm - fp) * h;
  return nd;
}

}  // namespace detail

/// Nadir timing/depth at the metrics bus plus injected energy, referenced to
/// a base-case run on the same grid and time grid.
inline ResponseMetrics compute_metrics(const SimResult& result,
                                       const SimResult& base, int bus_id = 6) {
  if (result.t.size() != base.t.size() || result.dt != base.dt ||
      result.t_apply != base.t_apply)
    throw std::invalid_argument("metrics: runs are not on the same time grid");
  const detail::Nadir nr = detail::find_nadir(result, bus_id);
  const detail::Nadir nb = detail::find_nadir(base, bus_id);
  ResponseMetrics mtr;
  mtr.t_nadir_s = nr.t_rel;
  mtr.f_nadir_hz = nr.f;
  mtr.delta_t_nadir_s = nr.t_rel - nb.t_rel;
  mtr.pct_change = mtr.delta_t_nadir_s / nb.t_rel * 100.0;
  double e_mws = 0.0;
  for (std::size_t k = 1; k < result.t.size(); ++k) {
    if (result.t[k] <= result.t_apply) continue;
    e_mws += 0.5 * (result.asg_p_mw[k] + result.asg_p_mw[k - 1]) * result.dt;
  }
  mtr.delta_e_kwh = e_mws * (1000.0 / 3600.0);
  return mtr;
}

}  // namespace asgsim::grid
