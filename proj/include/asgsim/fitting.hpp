#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "asgsim/common.hpp"

// RMSD objective and derivative-free recovery of the ASG parameter vector
// theta = (Kpgov, Kigov, Ta, Dp, Kpf) against a reference trajectory.

namespace asgsim::fitting {

inline constexpr std::size_t kThetaDim = 5;
using Theta = std::array<double, kThetaDim>;

/// Root-mean-square deviation between two equally long series.
inline double rmsd(std::span<const double> y_exp, std::span<const double> y_sim) {
  if (y_exp.size() != y_sim.size())
    throw std::invalid_argument("rmsd: series length mismatch");
  if (y_exp.empty()) throw std::invalid_argument("rmsd: empty series");
  double acc = 0.0;
  for (std::size_t k = 0; k < y_exp.size(); ++k) {
    const double d = y_exp[k] - y_sim[k];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(y_exp.size()));
}

struct FitProblem {
  // Simulates the model at a trial theta; must return a series matching the
  // reference length. Throwing (or returning non-finite values) marks the
  // trial as infeasible.
  std::function<std::vector<double>(const Theta&)> simulate;
  std::vector<double> reference;
  Theta lower{};
  Theta upper{};

  void validate() const {
    if (!simulate) throw std::invalid_argument("fit: no simulator");
    if (reference.empty()) throw std::invalid_argument("fit: empty reference");
    for (std::size_t i = 0; i < kThetaDim; ++i) {
      if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) ||
          !(lower[i] < upper[i]))
        throw std::invalid_argument("fit: bounds must be finite with lower < upper");
    }
  }
};

struct FitOptions {
  int max_evals_per_start = 4000;
  int restarts = 3; // perturbed-simplex restarts after the first search
  double f_tol = 1e-14;
  double x_tol = 1e-12;
};

struct FitResult {
  Theta theta{};
  double rmsd = std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

namespace detail {

inline Theta project(Theta x, const FitProblem& p) {
  for (std::size_t i = 0; i < kThetaDim; ++i) x[i] = clamp(x[i], p.lower[i], p.upper[i]);
  return x;
}

struct Simplex {
  std::vector<Theta> x;
  std::vector<double> f;
};

}  // namespace detail

/// Nelder-Mead with projection onto the bound box. Deterministic: fixed
/// coefficients, fixed restart perturbations, no randomness.
inline FitResult fit_parameters(const FitProblem& problem, const Theta& theta0,
                                const FitOptions& opt = {}) {
  problem.validate();
  for (std::size_t i = 0; i < kThetaDim; ++i)
    if (!(theta0[i] >= problem.lower[i] && theta0[i] <= problem.upper[i]))
      throw std::invalid_argument("fit: theta0 outside bounds");

  int evals = 0;
  const auto objective = [&](const Theta& t) -> double {
    ++evals;
    std::vector<double> y;
    try {
      y = problem.simulate(t);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
    if (y.size() != problem.reference.size())
      return std::numeric_limits<double>::infinity();
    for (const double v : y)
      if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    return rmsd(problem.reference, y);
  };

  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
  const std::size_t np1 = kThetaDim + 1;

  const auto run_simplex = [&](const Theta& start, double scale) -> FitResult {
    detail::Simplex s;
    s.x.resize(np1);
    s.f.resize(np1);
    s.x[0] = detail::project(start, problem);
    for (std::size_t i = 0; i < kThetaDim; ++i) {
      Theta v = s.x[0];
      const double span = problem.upper[i] - problem.lower[i];
      double step = scale * (std::abs(v[i]) > 1e-12 ? 0.10 * std::abs(v[i])
                                                    : 0.02 * span);
      if (v[i] + step > problem.upper[i]) step = -step;
      v[i] += step;
      s.x[i + 1] = detail::project(v, problem);
    }
    for (std::size_t i = 0; i < np1; ++i) s.f[i] = objective(s.x[i]);

    const int budget = opt.max_evals_per_start;
    const int start_evals = evals;
    while (evals - start_evals < budget) {
      // Order: best first; stable tie-break keeps the search deterministic.
      std::vector<std::size_t> idx(np1);
      for (std::size_t i = 0; i < np1; ++i) idx[i] = i;
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return s.f[a] < s.f[b]; });
      detail::Simplex ordered;
      ordered.x.resize(np1);
      ordered.f.resize(np1);
      for (std::size_t i = 0; i < np1; ++i) {
        ordered.x[i] = s.x[idx[i]];
        ordered.f[i] = s.f[idx[i]];
      }
      s = ordered;

      double size = 0.0;
      for (std::size_t i = 1; i < np1; ++i)
        for (std::size_t d = 0; d < kThetaDim; ++d)
          size = std::max(size, std::abs(s.x[i][d] - s.x[0][d]) /
                                    (problem.upper[d] - problem.lower[d]));
      if (std::abs(s.f[np1 - 1] - s.f[0]) <= opt.f_tol * (1.0 + std::abs(s.f[0])) &&
          size <= opt.x_tol)
        break;

      Theta centroid{};
      for (std::size_t i = 0; i + 1 < np1; ++i)
        for (std::size_t d = 0; d < kThetaDim; ++d)
          centroid[d] += s.x[i][d] / static_cast<double>(kThetaDim);

      const auto blend = [&](double coef) {
        Theta t;
        for (std::size_t d = 0; d < kThetaDim; ++d)
          t[d] = centroid[d] + coef * (s.x[np1 - 1][d] - centroid[d]);
        return detail::project(t, problem);
      };

      const Theta xr = blend(-alpha);
      const double fr = objective(xr);
      if (fr < s.f[0]) {
        const Theta xe = blend(-gamma);
        const double fe = objective(xe);
        if (fe < fr) {
          s.x[np1 - 1] = xe;
          s.f[np1 - 1] = fe;
        } else {
          s.x[np1 - 1] = xr;
          s.f[np1 - 1] = fr;
        }
      } else if (fr < s.f[np1 - 2]) {
        s.x[np1 - 1] = xr;
        s.f[np1 - 1] = fr;
      } else {
        const bool outside = fr < s.f[np1 - 1];
        const Theta xc = blend(outside ? -rho : rho);
        const double fc = objective(xc);
        if (fc < std::min(fr, s.f[np1 - 1])) {
          s.x[np1 - 1] = xc;
          s.f[np1 - 1] = fc;
        } else {
          for (std::size_t i = 1; i < np1; ++i) {
            for (std::size_t d = 0; d < kThetaDim; ++d)
              s.x[i][d] = s.x[0][d] + sigma * (s.x[i][d] - s.x[0][d]);
            s.x[i] = detail::project(s.x[i], problem);
            s.f[i] = objective(s.x[i]);
          }
        }
      }
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < np1; ++i)
      if (s.f[i] < s.f[best]) best = i;
    FitResult r;
    r.theta = s.x[best];
    r.rmsd = s.f[best];
    return r;
  };

  FitResult best = run_simplex(theta0, 1.0);
  static constexpr double kRestartScales[] = {0.35, -0.5, 0.15};
  for (int r = 0; r < opt.restarts; ++r) {
    const double sc = kRestartScales[static_cast<std::size_t>(r) %
                                     std::size(kRestartScales)];
    const FitResult cand = run_simplex(best.theta, sc);
    if (cand.rmsd < best.rmsd) best = cand;
  }
  best.evaluations = evals;
  return best;
}

}  // namespace asgsim::fitting
