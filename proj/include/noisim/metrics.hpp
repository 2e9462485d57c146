// metrics.hpp: Decoherence observables and scaling analysis.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "noisim/ising_exact.hpp"
#include "noisim/qcore.hpp"

namespace noisim::metrics {

// <psi0| rho |psi0>, clamped to [0,1]; deviations beyond 1e-9 are an error.
inline double fidelity(const Matrix& rho, const Vector& psi0) {
  if (rho.rows() != psi0.size() || rho.cols() != psi0.size())
    throw std::invalid_argument("fidelity: dimension mismatch");
  const Complex v = psi0.dot(rho * psi0);
  if (std::abs(v.imag()) > 1e-9 || v.real() < -1e-9 || v.real() > 1.0 + 1e-9)
    throw std::runtime_error("fidelity: value outside [0,1] beyond tolerance");
  return std::clamp(v.real(), 0.0, 1.0);
}

inline double fidelity(const Vector& psi, const Vector& psi0) {
  if (psi.size() != psi0.size()) throw std::invalid_argument("fidelity: dimension mismatch");
  return std::min(1.0, std::norm(psi0.dot(psi)));
}

inline double purity(const Matrix& rho) {
  require_square(rho, "purity");
  return (rho * rho).trace().real();
}

// Bures length arccos(sqrt F); monotone with infidelity.
inline double bures_length(double f) {
  if (!(f >= -1e-9 && f <= 1.0 + 1e-9))
    throw std::invalid_argument("bures_length: fidelity outside [0,1]");
  return std::acos(std::sqrt(std::clamp(f, 0.0, 1.0)));
}

inline double trace_distance(const Matrix& rho, const Matrix& sigma) {
  if (rho.rows() != sigma.rows() || rho.cols() != sigma.cols())
    throw std::invalid_argument("trace_distance: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho - sigma, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("trace_distance: eigendecomposition failed");
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

// Spectral spread lambda_max - lambda_min of a Hermitian operator.
inline double seminorm(const Matrix& op) {
  require_hermitian(op, "seminorm");
  Eigen::SelfAdjointEigenSolver<Matrix> es(op, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("seminorm: eigendecomposition failed");
  return es.eigenvalues().maxCoeff() - es.eigenvalues().minCoeff();
}

inline double variance(const Matrix& op, const Vector& psi) {
  require_hermitian(op, "variance");
  require_unit_norm(psi, "variance");
  const double m1 = expectation(op, psi).real();
  const double m2 = psi.dot(op * (op * psi)).real();
  return std::max(0.0, m2 - m1 * m1);
}

inline double variance(const Matrix& op, const Matrix& rho) {
  require_hermitian(op, "variance");
  const double m1 = expectation(op, rho).real();
  const double m2 = (op * op * rho).trace().real();
  return std::max(0.0, m2 - m1 * m1);
}

// ---- short-time fidelity fit ----

struct ShortTimeFit {
  double slope = 0.0;  // d(1-F)/dt through the origin
  double tau = 0.0;    // 1/slope
};

// Least-squares fit of 1 - F(t) = slope * t through the origin. The caller is
// responsible for restricting samples to the early-time window; at least five
// samples at t > 0 are required.
inline ShortTimeFit short_time_fit(const RealVector& times, const RealVector& fidelities) {
  if (times.size() != fidelities.size())
    throw std::invalid_argument("short_time_fit: size mismatch");
  double num = 0.0, den = 0.0;
  int used = 0;
  for (Eigen::Index i = 0; i < times.size(); ++i) {
    if (i > 0 && !(times[i] > times[i - 1]))
      throw std::invalid_argument("short_time_fit: times must be strictly increasing");
    if (times[i] <= 0.0) continue;
    num += times[i] * (1.0 - fidelities[i]);
    den += times[i] * times[i];
    ++used;
  }
  if (used < 5)
    throw std::invalid_argument("short_time_fit: window too coarse, need >= 5 samples at t > 0");
  ShortTimeFit fit;
  fit.slope = num / den;
  fit.tau = fit.slope > 0.0 ? 1.0 / fit.slope : std::numeric_limits<double>::infinity();
  return fit;
}

// ---- decoherence-time report ----

// Per-channel second moments of the coupling operator in the initial state.
struct ChannelMoments {
  double gamma = 0.0;
  double variance = 0.0;
  double sq_seminorm = 0.0;  // (lambda_max - lambda_min)^2
};

inline ChannelMoments channel_moments(double gamma, const Matrix& lindblad, const Vector& psi0) {
  ChannelMoments m;
  m.gamma = gamma;
  m.variance = variance(lindblad, psi0);
  const double s = seminorm(lindblad);
  m.sq_seminorm = s * s;
  return m;
}

struct DecoherenceReport {
  double tau_variance = 0.0;  // 1 / sum_a gamma_a Var(L_a)
  double tau_bound = 0.0;     // 4 / sum_a gamma_a ||L_a||^2, always <= tau_variance
  double tau_fitted = 0.0;    // from the short-time fidelity slope
  double fit_slope = 0.0;
  int samples_used = 0;
};

// Assembles the three decoherence-time estimates; the fit uses only samples
// inside t <= 0.05 * tau_variance.
inline DecoherenceReport make_decoherence_report(const std::vector<ChannelMoments>& channels,
                                                 const RealVector& times,
                                                 const RealVector& fidelities) {
  if (channels.empty()) throw std::invalid_argument("decoherence_report: no channels");
  double rate_var = 0.0, rate_bound = 0.0;
  for (const ChannelMoments& c : channels) {
    if (!(c.gamma >= 0.0) || !(c.variance >= 0.0) || !(c.sq_seminorm >= 0.0))
      throw std::invalid_argument("decoherence_report: negative channel moment");
    rate_var += c.gamma * c.variance;
    rate_bound += c.gamma * c.sq_seminorm / 4.0;
  }
  if (!(rate_var > 0.0))
    throw std::invalid_argument("decoherence_report: zero decoherence rate, no finite time scale");

  DecoherenceReport rep;
  rep.tau_variance = 1.0 / rate_var;
  rep.tau_bound = 1.0 / rate_bound;

  const double window = 0.05 * rep.tau_variance;
  std::vector<double> ts, fs;
  for (Eigen::Index i = 0; i < times.size(); ++i)
    if (times[i] > 0.0 && times[i] <= window) {
      ts.push_back(times[i]);
      fs.push_back(fidelities[i]);
    }
  if (ts.size() < 5)
    throw std::invalid_argument("decoherence_report: window too coarse, need >= 5 samples inside "
                                "t <= 0.05 tau");
  RealVector tv = Eigen::Map<RealVector>(ts.data(), ts.size());
  RealVector fv = Eigen::Map<RealVector>(fs.data(), fs.size());
  const ShortTimeFit fit = short_time_fit(tv, fv);
  rep.tau_fitted = fit.tau;
  rep.fit_slope = fit.slope;
  rep.samples_used = static_cast<int>(ts.size());
  return rep;
}

// ---- combinatorial k-body scaling ----

// Eigenvalue of the sum of all k-fold Z strings on a configuration with p
// down spins: choosing j of the k sites among the down spins flips the sign j
// times.
inline double zstring_eigenvalue(int n_spins, int k, int p) {
  if (k < 1 || k > n_spins || p < 0 || p > n_spins)
    throw std::invalid_argument("zstring_eigenvalue: arguments out of range");
  double out = 0.0;
  for (int j = std::max(0, k - (n_spins - p)); j <= std::min(k, p); ++j) {
    const double term =
        double(ising::binomial(p, j)) * double(ising::binomial(n_spins - p, k - j));
    out += (j % 2 == 0) ? term : -term;
  }
  return out;
}

enum class StateFamily { product_plus, max_decoherence };

// Variance of the k-body collective operator without building any matrix:
// the operator is constant on each p-sector, so sector weights suffice.
inline double kbody_variance(int n_spins, int k, StateFamily family) {
  if (n_spins < 2 || n_spins > 40)
    throw std::invalid_argument("kbody_variance: n_spins out of range");
  if (family == StateFamily::product_plus) {
    // Every configuration carries weight 2^-N.
    double m1 = 0.0, m2 = 0.0;
    const double norm = std::pow(2.0, -double(n_spins));
    for (int p = 0; p <= n_spins; ++p) {
      const double w = double(ising::binomial(n_spins, p)) * norm;
      const double l = zstring_eigenvalue(n_spins, k, p);
      m1 += w * l;
      m2 += w * l * l;
    }
    return std::max(0.0, m2 - m1 * m1);
  }
  // Equal superposition of two configurations: p = 0 and the ceil(N/2)-down
  // domain wall (the max_decoherence_state branches).
  const double l0 = zstring_eigenvalue(n_spins, k, 0);
  const double lw = zstring_eigenvalue(n_spins, k, n_spins - n_spins / 2);
  return 0.25 * (l0 - lw) * (l0 - lw);
}

struct ScalingResult {
  std::vector<int> n_values;
  std::vector<double> variances;
  std::vector<double> rates;  // 1/tau_D = gamma * Var(L)
  double slope = 0.0;         // log-log exponent of rate vs N
  double intercept = 0.0;     // log prefactor
};

// 1/tau_D across system sizes and the fitted power law rate ~ N^slope.
inline ScalingResult scaling_study(int k, const std::vector<int>& n_values, StateFamily family,
                                   double gamma) {
  if (n_values.size() < 3)
    throw std::invalid_argument("scaling_study: need at least 3 system sizes to fit");
  if (!(gamma > 0.0)) throw std::invalid_argument("scaling_study: gamma must be positive");
  ScalingResult res;
  res.n_values = n_values;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (int n : n_values) {
    const double v = kbody_variance(n, k, family);
    const double rate = gamma * v;
    if (!(rate > 0.0))
      throw std::invalid_argument("scaling_study: vanishing rate, power-law fit undefined");
    res.variances.push_back(v);
    res.rates.push_back(rate);
    const double x = std::log(double(n));
    const double y = std::log(rate);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double m = double(n_values.size());
  const double det = m * sxx - sx * sx;
  if (!(std::abs(det) > 0.0))
    throw std::invalid_argument("scaling_study: degenerate size grid, fit undefined");
  res.slope = (m * sxy - sx * sy) / det;
  res.intercept = (sy * sxx - sx * sxy) / det;
  return res;
}

}  // namespace noisim::metrics
