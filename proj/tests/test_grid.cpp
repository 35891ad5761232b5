#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <numbers>
#include <optional>
#include <vector>

#include "asgsim/grid.hpp"
#include "asgsim/rng.hpp"

using namespace asgsim;
using namespace asgsim::grid;
using Catch::Approx;

namespace {

AsgPlacement placement(double rating_mw) {
  AsgPlacement p;
  p.params.p_rated_mw = rating_mw;
  return p;
}

DisturbanceSpec load_step() { return DisturbanceSpec{6, 4.5, 1.0}; }

}  // namespace

TEST_CASE("default model matches the benchmark inventory") {
  const GridModel m = build_ieee9();
  m.validate();
  REQUIRE(m.buses.size() == 9);
  REQUIRE(m.generators.size() == 3);
  REQUIRE(m.loads.size() == 3);
  REQUIRE(m.total_load_mw() == Approx(315.0));
  double bus6 = 0.0;
  for (const auto& l : m.loads)
    if (l.bus == 6) bus6 = l.p_mw;
  REQUIRE(0.05 * bus6 == Approx(4.5)); // the 5 % step used throughout
}

TEST_CASE("splitting the network is rejected") {
  GridModel m = build_ieee9();
  std::erase_if(m.branches,
                [](const Branch& b) { return b.from == 1 && b.to == 4; });
  REQUIRE_THROWS_AS(m.validate(), config_error);
}

TEST_CASE("missing slack is rejected") {
  GridModel m = build_ieee9();
  m.generators[0].slack = false;
  REQUIRE_THROWS_AS(m.validate(), config_error);
}

TEST_CASE("power flow converges tightly on the default case") {
  const GridModel m = build_ieee9();
  const PowerFlowResult pf = solve_power_flow(m);
  REQUIRE(pf.mismatch < 1e-8);
  REQUIRE(pf.iterations < 10);
  // Slack picks up the balance: production within sane machine limits.
  const Eigen::MatrixXcd y = [&] {
    Eigen::MatrixXcd yy = Eigen::MatrixXcd::Zero(9, 9);
    for (const auto& b : m.branches) {
      const auto i = m.bus_index(b.from), j = m.bus_index(b.to);
      const cplx ys = 1.0 / cplx(b.r, b.x);
      yy(i, i) += ys + cplx(0, b.b_half);
      yy(j, j) += ys + cplx(0, b.b_half);
      yy(i, j) -= ys;
      yy(j, i) -= ys;
    }
    return yy;
  }();
  const cplx s_slack = pf.v(0) * std::conj((y * pf.v)(0));
  REQUIRE(s_slack.real() * 100.0 > 0.0);
  REQUIRE(s_slack.real() * 100.0 < 250.0);
  // Total generation covers load plus positive losses.
  double gen = 0.0;
  for (int i = 0; i < 9; ++i) gen += (pf.v(i) * std::conj((y * pf.v)(i))).real();
  REQUIRE(gen * 100.0 > 0.0);
  REQUIRE(gen * 100.0 < 15.0); // losses only, loads are in the injections
}

TEST_CASE("zero load and zero dispatch solve flat") {
  GridModel m = build_ieee9();
  m.loads.clear();
  for (auto& b : m.branches) b.b_half = 0.0;
  for (auto& g : m.generators) {
    g.p_mw = 0.0;
    g.v_set = 1.0;
  }
  const PowerFlowResult pf = solve_power_flow(m);
  for (int i = 0; i < 9; ++i) {
    REQUIRE(std::abs(pf.v(i)) == Approx(1.0).margin(1e-9));
    REQUIRE(std::arg(pf.v(i)) == Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("an infeasible loading fails to converge") {
  GridModel m = build_ieee9();
  for (auto& l : m.loads) {
    l.p_mw *= 10.0;
    l.q_mvar *= 10.0;
  }
  REQUIRE_THROWS_AS(solve_power_flow(m), numeric_error);
}

TEST_CASE("without a disturbance the frequency holds at nominal") {
  const GridModel m = build_ieee9();
  DisturbanceSpec none = load_step();
  none.delta_p_mw = 0.0;
  const SimResult r = run(m, none, std::nullopt, 0.005, 20.0);
  REQUIRE(!r.unstable);
  for (const auto& series : r.bus_freq_hz)
    for (const double f : series) REQUIRE(std::abs(f - 60.0) < 1e-3);
}

TEST_CASE("the load step dips the frequency to a unique interior nadir") {
  const GridModel m = build_ieee9();
  const SimResult base = run(m, load_step(), std::nullopt, 0.005, 60.0);
  REQUIRE(!base.unstable);
  const auto& f6 = base.bus_freq_hz[5];
  const double fmin = *std::min_element(f6.begin(), f6.end());
  REQUIRE(fmin < 59.95);  // visibly below nominal
  REQUIRE(fmin > 59.5);   // but a bounded excursion
  REQUIRE(f6.back() > fmin + 0.02); // recovers after the nadir
  const ResponseMetrics self = compute_metrics(base, base, 6);
  REQUIRE(self.delta_t_nadir_s == 0.0);
  REQUIRE(self.t_nadir_s > 2.0);
  REQUIRE(self.t_nadir_s < 40.0);
}

TEST_CASE("asg support delays and lifts the nadir") {
  const GridModel m = build_ieee9();
  const SimResult base = run(m, load_step(), std::nullopt, 0.005, 60.0);
  const SimResult sup = run(m, load_step(), placement(10.0), 0.005, 60.0);
  const ResponseMetrics mtr = compute_metrics(sup, base, 6);
  REQUIRE(mtr.delta_t_nadir_s > 0.0);
  REQUIRE(mtr.f_nadir_hz >= compute_metrics(base, base, 6).f_nadir_hz);
  REQUIRE(mtr.delta_e_kwh > 0.0);
}

TEST_CASE("zero-rating support is bit-identical to the base case") {
  const GridModel m = build_ieee9();
  const SimResult base = run(m, load_step(), std::nullopt, 0.005, 30.0);
  const SimResult zero = run(m, load_step(), placement(0.0), 0.005, 30.0);
  REQUIRE(base.t.size() == zero.t.size());
  for (std::size_t b = 0; b < base.bus_freq_hz.size(); ++b)
    REQUIRE(std::memcmp(base.bus_freq_hz[b].data(), zero.bus_freq_hz[b].data(),
                        base.bus_freq_hz[b].size() * sizeof(double)) == 0);
  REQUIRE(std::memcmp(base.asg_p_mw.data(), zero.asg_p_mw.data(),
                      base.asg_p_mw.size() * sizeof(double)) == 0);
  for (std::size_t g = 0; g < base.gen_omega_pu.size(); ++g)
    REQUIRE(std::memcmp(base.gen_omega_pu[g].data(), zero.gen_omega_pu[g].data(),
                        base.gen_omega_pu[g].size() * sizeof(double)) == 0);
}

TEST_CASE("frequency estimate on synthetic angles") {
  const double f0 = 60.0, dt = 0.005;
  std::vector<double> flat(100, 0.7);
  const auto f_flat = bus_frequency_estimate(flat, dt, f0, 0.05);
  for (const double f : f_flat) REQUIRE(f == Approx(60.0).margin(1e-12));

  // theta = 2*pi*0.5*t: +0.5 Hz after the filter settles.
  std::vector<double> ramp(1000);
  for (std::size_t k = 0; k < ramp.size(); ++k)
    ramp[k] = 2.0 * std::numbers::pi * 0.5 * static_cast<double>(k) * dt;
  const auto f_ramp = bus_frequency_estimate(ramp, dt, f0, 0.05);
  REQUIRE(f_ramp.back() == Approx(60.5).margin(1e-4));

  // Filtering reduces the noise of the difference quotient.
  Rng rng(4);
  std::vector<double> noisy(2000);
  for (std::size_t k = 0; k < noisy.size(); ++k)
    noisy[k] = ramp[k % ramp.size()] + 1e-4 * rng.gaussian();
  const auto raw = bus_frequency_estimate(noisy, dt, f0, 0.0);
  const auto smooth = bus_frequency_estimate(noisy, dt, f0, 0.05);
  const auto var_about = [&](const std::vector<double>& f) {
    double acc = 0.0;
    for (std::size_t k = 500; k < 1000; ++k) {
      const double d = f[k] - 60.5;
      acc += d * d;
    }
    return acc / 500.0;
  };
  REQUIRE(var_about(smooth) < 0.5 * var_about(raw));
  REQUIRE_THROWS_AS(bus_frequency_estimate(std::vector<double>{0.0, 0.1}, dt,
                                           f0, 0.05),
                    std::invalid_argument);
}

TEST_CASE("metric energy integral matches the analytic triangle area") {
  SimResult r;
  r.dt = 0.01;
  r.t_apply = 0.0;
  SimResult base = r;
  const std::size_t n = 3001; // 30 s
  std::vector<double> dip(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * r.dt;
    r.t.push_back(t);
    base.t.push_back(t);
    // Triangular 10 MW peak over 10 s starting at t = 1.
    double p = 0.0;
    if (t >= 1.0 && t <= 6.0) p = (t - 1.0) * 2.0;
    if (t > 6.0 && t <= 11.0) p = (11.0 - t) * 2.0;
    r.asg_p_mw.push_back(p);
    base.asg_p_mw.push_back(0.0);
    dip[k] = 60.0 - 0.2 * std::exp(-((t - 8.0) * (t - 8.0)) / 8.0);
  }
  r.bus_ids = {6};
  base.bus_ids = {6};
  r.bus_freq_hz = {dip};
  base.bus_freq_hz = {dip};
  const ResponseMetrics mtr = compute_metrics(r, base, 6);
  REQUIRE(mtr.delta_e_kwh == Approx(50.0 * 1000.0 / 3600.0).epsilon(1e-9));
  REQUIRE(mtr.delta_t_nadir_s == 0.0);
  REQUIRE(mtr.t_nadir_s == Approx(8.0).margin(0.01));
}

TEST_CASE("monotone series has no interior nadir") {
  SimResult r;
  r.dt = 0.01;
  r.t_apply = 0.0;
  r.bus_ids = {6};
  std::vector<double> f;
  for (int k = 0; k < 500; ++k) {
    r.t.push_back(k * 0.01);
    r.asg_p_mw.push_back(0.0);
    f.push_back(60.0 - 0.001 * k);
  }
  r.bus_freq_hz = {f};
  REQUIRE_THROWS_AS(compute_metrics(r, r, 6), numeric_error);
}

TEST_CASE("power balance holds at sampled steps") {
  const GridModel m = build_ieee9();
  const PowerFlowResult pf = solve_power_flow(m);
  // Residual of the algebraic network equations at the power-flow point:
  // injected machine/load powers reproduce Y*V to solver precision.
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(9, 9);
  for (const auto& b : m.branches) {
    const auto i = m.bus_index(b.from), j = m.bus_index(b.to);
    const cplx ys = 1.0 / cplx(b.r, b.x);
    y(i, i) += ys + cplx(0, b.b_half);
    y(j, j) += ys + cplx(0, b.b_half);
    y(i, j) -= ys;
    y(j, i) -= ys;
  }
  double total = 0.0;
  for (int i = 0; i < 9; ++i)
    total += (pf.v(i) * std::conj((y * pf.v)(i))).real();
  double spec = 0.0;
  for (const auto& g : m.generators) {
    const auto bi = m.bus_index(g.bus);
    spec += (pf.v(bi) * std::conj((y * pf.v)(bi))).real();
  }
  // Net bus injections at non-machine buses equal the (negative) loads.
  for (const auto& l : m.loads) {
    const auto bi = m.bus_index(l.bus);
    const double p_inj = (pf.v(bi) * std::conj((y * pf.v)(bi))).real();
    REQUIRE(p_inj == Approx(-l.p_mw / 100.0).margin(1e-6));
  }
  REQUIRE(total == Approx(spec - 3.15).margin(1e-6));
}

TEST_CASE("halving the step barely moves the nadir metrics") {
  const GridModel m = build_ieee9();
  const SimResult b1 = run(m, load_step(), std::nullopt, 0.005, 40.0);
  const SimResult b2 = run(m, load_step(), std::nullopt, 0.0025, 40.0);
  const auto n1 = compute_metrics(b1, b1, 6);
  const auto n2 = compute_metrics(b2, b2, 6);
  REQUIRE(std::abs(n1.t_nadir_s - n2.t_nadir_s) < 0.01 * n1.t_nadir_s);
  REQUIRE(std::abs(n1.f_nadir_hz - n2.f_nadir_hz) < 1e-4);
}

TEST_CASE("support sweep produces strictly ordered trends") {
  const GridModel m = build_ieee9();
  const SimResult base = run(m, load_step(), std::nullopt, 0.005, 60.0);
  double prev_dt = 0.0, prev_e = 0.0, prev_f = 0.0;
  bool first = true;
  for (const double rating : {2.0, 5.0, 10.0}) {
    const SimResult r = run(m, load_step(), placement(rating), 0.005, 60.0);
    const ResponseMetrics mtr = compute_metrics(r, base, 6);
    if (!first) {
      REQUIRE(mtr.delta_t_nadir_s > prev_dt);
      REQUIRE(mtr.delta_e_kwh > prev_e);
      REQUIRE(mtr.f_nadir_hz >= prev_f);
    } else {
      REQUIRE(mtr.delta_t_nadir_s > 0.0);
      REQUIRE(mtr.delta_e_kwh > 0.0);
    }
    prev_dt = mtr.delta_t_nadir_s;
    prev_e = mtr.delta_e_kwh;
    prev_f = mtr.f_nadir_hz;
    first = false;
  }
}
