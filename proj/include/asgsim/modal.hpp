#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "asgsim/common.hpp"

// Prony analysis of ringdown signals: fit a sum of damped cosines
//   y(t) = sum_i A_i * exp(sigma_i t) * cos(omega_i t + phi_i)
// and report per-mode frequency and damping ratio.

namespace asgsim::modal {

/// Frequency of a mode in Hz.
inline double mode_frequency(double omega) {
  if (omega < 0.0) throw std::invalid_argument("mode_frequency: omega < 0");
  return omega / (2.0 * std::numbers::pi);
}

/// Damping ratio in percent, |sigma|/sqrt(sigma^2+omega^2)*100.
/// Reported positive for stable (sigma < 0) modes.
inline double damping_ratio(double sigma, double omega) {
  if (sigma == 0.0 && omega == 0.0)
    throw std::invalid_argument("damping_ratio undefined for (0,0)");
  return std::abs(sigma) / std::hypot(sigma, omega) * 100.0;
}

struct ModalEstimate {
  double amplitude = 0.0; // A (signal units)
  double sigma = 0.0;     // damping factor (1/s)
  double omega = 0.0;     // angular frequency (rad/s), >= 0
  double phase = 0.0;     // phi (rad)
  double energy = 0.0;    // contribution over the window, used for sorting
  bool oscillatory = false;

  double f_hz() const { return mode_frequency(omega); }
  double zeta_pct() const { return damping_ratio(sigma, omega); }
};

struct RingdownWindow {
  std::vector<double> samples;
  double dt = 0.0;
  double t_start = 0.0;
  double detrend_offset = 0.0; // already subtracted from samples
};

/// Builds a window from a uniformly sampled series, detrended by the mean of
/// its last `tail` samples (the settling value).
inline RingdownWindow make_window(std::span<const double> series, double dt,
                                  std::size_t first, std::size_t last,
                                  std::size_t tail = 50) {
  if (!(dt > 0.0)) throw std::invalid_argument("window dt must be > 0");
  if (last > series.size() || first >= last)
    throw std::invalid_argument("window bounds out of range");
  RingdownWindow w;
  w.dt = dt;
  w.t_start = static_cast<double>(first) * dt;
  const std::size_t n = last - first;
  tail = std::min(tail, n);
  double settle = 0.0;
  for (std::size_t k = last - tail; k < last; ++k) settle += series[k];
  settle /= static_cast<double>(tail);
  w.detrend_offset = settle;
  w.samples.resize(n);
  for (std::size_t k = 0; k < n; ++k) w.samples[k] = series[first + k] - settle;
  return w;
}

/// Evaluates a mode set on a time grid.
inline std::vector<double> reconstruct(std::span<const ModalEstimate> modes,
                                       std::span<const double> t) {
  std::vector<double> y(t.size(), 0.0);
  for (const auto& m : modes)
    for (std::size_t k = 0; k < t.size(); ++k)
      y[k] += m.amplitude * std::exp(m.sigma * t[k]) *
              std::cos(m.omega * t[k] + m.phase);
  return y;
}

/// Classic Prony fit of the window at the given (even) model order:
/// linear-prediction coefficients by least squares (normal equations with a
/// small ridge), characteristic roots from the companion matrix, s-plane
/// mapping lambda = ln(z)/dt, then amplitudes and phases by a second least
/// squares on the exponential basis. Conjugate pairs are merged into one
/// oscillatory mode; modes come back sorted by energy contribution.
inline std::vector<ModalEstimate> prony_fit(const RingdownWindow& w,
                                            int order) {
  if (order < 2 || order % 2 != 0)
    throw std::invalid_argument("prony order must be even and >= 2");
  if (!(w.dt > 0.0)) throw std::invalid_argument("prony window dt must be > 0");
  const std::size_t n = w.samples.size();
  const std::size_t p = static_cast<std::size_t>(order);
  if (n < 4 * p)
    throw std::invalid_argument("prony window too short (need >= 4*order)");

  // Linear prediction y[k] = sum_j a_j y[k-j], ridge-regularized least
  // squares solved by QR on the Tikhonov-augmented system (the plain normal
  // equations lose too much precision for roots crowded near z = 1).
  const Eigen::Index rows = static_cast<Eigen::Index>(n - p);
  const Eigen::Index cols = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(rows + cols, cols);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(rows + cols);
  double scale = 0.0;
  for (std::size_t k = p; k < n; ++k) {
    rhs(static_cast<Eigen::Index>(k - p)) = w.samples[k];
    for (std::size_t j = 0; j < p; ++j) {
      const double v = w.samples[k - 1 - j];
      H(static_cast<Eigen::Index>(k - p), static_cast<Eigen::Index>(j)) = v;
      scale += v * v;
    }
  }
  (void)scale;
  const double ridge = 1e-12; // tames rank-deficient (e.g. pure DC) windows
  for (Eigen::Index j = 0; j < cols; ++j) H(rows + j, j) = std::sqrt(ridge);
  const Eigen::VectorXd a = H.householderQr().solve(rhs);
  if (!a.allFinite()) throw numeric_error("prony: prediction solve failed");

  // Companion matrix of z^p - a1 z^{p-1} - ... - ap.
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p),
                                               static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j)
    comp(0, static_cast<Eigen::Index>(j)) = a(static_cast<Eigen::Index>(j));
  for (std::size_t j = 1; j < p; ++j)
    comp(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j - 1)) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw numeric_error("prony: companion eigen solve failed");

  std::vector<std::complex<double>> roots;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const std::complex<double> z = es.eigenvalues()(i);
    if (std::abs(z) < 1e-12) continue; // z = 0 carries no exponential mode
    roots.push_back(z);
  }
  if (roots.empty()) throw numeric_error("prony: all roots at z = 0");
  // Deterministic ordering before the basis solve.
  std::sort(roots.begin(), roots.end(), [](const auto& l, const auto& r) {
    if (l.real() != r.real()) return l.real() < r.real();
    return l.imag() < r.imag();
  });

  // Amplitudes on the complex exponential basis B[k][i] = z_i^k.
  const Eigen::Index nr = static_cast<Eigen::Index>(roots.size());
  Eigen::MatrixXcd B = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n) + nr, nr);
  for (Eigen::Index i = 0; i < nr; ++i) {
    std::complex<double> zk(1.0, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      B(static_cast<Eigen::Index>(k), i) = zk;
      zk *= roots[static_cast<std::size_t>(i)];
    }
    B(static_cast<Eigen::Index>(n) + i, i) = std::sqrt(ridge);
  }
  Eigen::VectorXcd yv = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(n) + nr);
  for (std::size_t k = 0; k < n; ++k)
    yv(static_cast<Eigen::Index>(k)) = std::complex<double>(w.samples[k], 0.0);
  const Eigen::VectorXcd c = B.householderQr().solve(yv);
  if (!c.allFinite()) throw numeric_error("prony: amplitude solve failed");

  // Merge conjugate pairs; a real root stands alone.
  std::vector<bool> used(roots.size(), false);
  std::vector<ModalEstimate> modes;
  const double imag_tol = 1e-9;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    if (used[i]) continue;
    const std::complex<double> lam =
        std::log(roots[i]) / w.dt; // principal branch
    ModalEstimate m;
    m.sigma = lam.real();
    if (std::abs(lam.imag()) < imag_tol) {
      const double ci = c(static_cast<Eigen::Index>(i)).real();
      m.omega = 0.0;
      m.amplitude = std::abs(ci);
      m.phase = ci >= 0.0 ? 0.0 : std::numbers::pi;
      m.oscillatory = false;
    } else {
      // Find the conjugate partner.
      std::size_t partner = i;
      double best = 1e300;
      for (std::size_t j = i + 1; j < roots.size(); ++j) {
        if (used[j]) continue;
        const double d = std::abs(roots[j] - std::conj(roots[i]));
        if (d < best) {
          best = d;
          partner = j;
        }
      }
      if (partner != i && best < 1e-6 * (1.0 + std::abs(roots[i])))
        used[partner] = true;
      const std::complex<double> ci =
          lam.imag() > 0.0 ? c(static_cast<Eigen::Index>(i))
                           : std::conj(c(static_cast<Eigen::Index>(i)));
      m.omega = std::abs(lam.imag());
      m.amplitude = 2.0 * std::abs(ci);
      m.phase = std::arg(ci);
      m.oscillatory = true;
    }
    used[i] = true;
    double e = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double tk = static_cast<double>(k) * w.dt;
      const double v =
          m.amplitude * std::exp(m.sigma * tk) * std::cos(m.omega * tk + m.phase);
      e += v * v;
    }
    m.energy = e;
    modes.push_back(m);
  }
  std::sort(modes.begin(), modes.end(), [](const auto& l, const auto& r) {
    if (l.energy != r.energy) return l.energy > r.energy;
    return l.omega < r.omega;
  });
  return modes;
}

/// RMS of the residual between the window and its reconstruction.
inline double fit_residual_rms(const RingdownWindow& w,
                               std::span<const ModalEstimate> modes) {
  std::vector<double> t(w.samples.size());
  for (std::size_t k = 0; k < t.size(); ++k)
    t[k] = static_cast<double>(k) * w.dt;
  const std::vector<double> y = reconstruct(modes, t);
  double acc = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double d = y[k] - w.samples[k];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(t.size()));
}

}  // namespace asgsim::modal
