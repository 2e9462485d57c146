// ising_exact.hpp: Closed-form dephasing dynamics for the field-free Ising
// chain with collective pair-coupling noise.
//
// With h = 0 everything is diagonal in the configuration basis, so the state
// evolves entrywise:
//   rho_IJ(t) = rho_IJ(0) exp(-i (eps_I - eps_J) t - (gamma/2) (l_I - l_J)^2 t),
// where eps is the Ising energy and l the pair-coupling eigenvalue of each
// configuration.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "noisim/models.hpp"
#include "noisim/qcore.hpp"

namespace noisim::ising {

// Exact binomial coefficient; arguments stay far below the u64 overflow edge
// for every dimension this library can hold.
inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  if (n > 64) throw std::invalid_argument("binomial: n too large for exact evaluation");
  k = std::min(k, n - k);
  std::uint64_t out = 1;
  for (int i = 1; i <= k; ++i) out = out * std::uint64_t(n - k + i) / std::uint64_t(i);
  return out;
}

// Pair-coupling eigenvalue on a configuration with p down spins:
//   sum_{i<j} a_i a_j = ((N - 2p)^2 - N) / 2.
inline double lindblad_eigenvalue(int n_spins, int p) {
  if (n_spins < 1 || p < 0 || p > n_spins)
    throw std::invalid_argument("lindblad_eigenvalue: p out of range");
  const double m = double(n_spins - 2 * p);
  return 0.5 * (m * m - double(n_spins));
}

// Number of down spins (a = -1) in a configuration index.
inline int down_count(int n_spins, long long index) {
  int p = 0;
  for (int i = 0; i < n_spins; ++i)
    if (models::config_sign(n_spins, index, i) < 0) ++p;
  return p;
}

// Diagonal data of the field-free model: per-configuration energy and
// pair-coupling eigenvalue.
struct IsingSpectra {
  int n_spins = 0;
  long long dim = 0;
  RealVector eps;  // eps_I = -sum_{i<j} J_ij a_i a_j
  RealVector l;    // l_I = sum_{i<j} a_i a_j
};

inline IsingSpectra build_spectra(const models::IsingSpec& spec) {
  spec.validate();
  if (spec.field != 0.0)
    throw std::invalid_argument("build_spectra: closed form requires zero transverse field");
  IsingSpectra s;
  s.n_spins = spec.n_spins;
  s.dim = 1LL << spec.n_spins;
  s.eps.resize(s.dim);
  s.l.resize(s.dim);
  for (long long idx = 0; idx < s.dim; ++idx) {
    double e = 0.0, lv = 0.0;
    for (int i = 0; i < spec.n_spins; ++i) {
      const int ai = models::config_sign(spec.n_spins, idx, i);
      for (int j = i + 1; j < spec.n_spins; ++j) {
        const double zz = double(ai * models::config_sign(spec.n_spins, idx, j));
        e -= spec.couplings(i, j) * zz;
        lv += zz;
      }
    }
    s.eps[idx] = e;
    s.l[idx] = lv;
  }
  return s;
}

inline void require_rate(double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma))
    throw std::invalid_argument("ising_exact: gamma must be finite and >= 0");
}

// Noise-averaged state at time t for an arbitrary initial density matrix.
inline Matrix exact_rho(const IsingSpectra& s, const Matrix& rho0, double gamma, double t) {
  require_rate(gamma);
  if (rho0.rows() != s.dim || rho0.cols() != s.dim)
    throw std::invalid_argument("exact_rho: initial state dimension mismatch");
  if (!(t >= 0.0)) throw std::invalid_argument("exact_rho: time must be >= 0");
  require_density(rho0, "exact_rho");
  Matrix out(s.dim, s.dim);
  for (long long i = 0; i < s.dim; ++i)
    for (long long j = 0; j < s.dim; ++j) {
      const double de = s.eps[i] - s.eps[j];
      const double dl = s.l[i] - s.l[j];
      out(i, j) = rho0(i, j) * std::exp(Complex(-0.5 * gamma * dl * dl * t, -de * t));
    }
  return out;
}

namespace detail {

// Off-diagonal weights |psi_I psi_J|^2 for a pure initial state, stored once
// per pair with nonzero weight.
struct PairTable {
  std::vector<double> w, de, dl2;
  double diag_weight = 0.0;  // sum_I |psi_I|^4
};

inline PairTable build_pairs(const IsingSpectra& s, const Vector& psi0) {
  if (psi0.size() != s.dim)
    throw std::invalid_argument("ising_exact: initial state dimension mismatch");
  require_unit_norm(psi0, "ising_exact");
  PairTable tbl;
  std::vector<long long> support;
  for (long long i = 0; i < s.dim; ++i)
    if (std::norm(psi0[i]) > 0.0) support.push_back(i);
  for (std::size_t a = 0; a < support.size(); ++a) {
    const long long i = support[a];
    const double wi = std::norm(psi0[i]);
    tbl.diag_weight += wi * wi;
    for (std::size_t b = a + 1; b < support.size(); ++b) {
      const long long j = support[b];
      const double wj = std::norm(psi0[j]);
      tbl.w.push_back(wi * wj);
      tbl.de.push_back(s.eps[i] - s.eps[j]);
      const double dl = s.l[i] - s.l[j];
      tbl.dl2.push_back(dl * dl);
    }
  }
  return tbl;
}

}  // namespace detail

// Fidelity <psi0| rho(t) |psi0> for a pure initial state.
inline RealVector fidelity_curve(const IsingSpectra& s, const Vector& psi0, double gamma,
                                 const RealVector& times) {
  require_rate(gamma);
  const detail::PairTable tbl = detail::build_pairs(s, psi0);
  RealVector out(times.size());
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    const double t = times[k];
    if (!(t >= 0.0)) throw std::invalid_argument("fidelity_curve: times must be >= 0");
    double f = tbl.diag_weight;
    for (std::size_t p = 0; p < tbl.w.size(); ++p)
      f += 2.0 * tbl.w[p] * std::cos(tbl.de[p] * t) * std::exp(-0.5 * gamma * tbl.dl2[p] * t);
    out[k] = f;
  }
  return out;
}

// Purity Tr rho(t)^2 for a pure initial state.
inline RealVector purity_curve(const IsingSpectra& s, const Vector& psi0, double gamma,
                               const RealVector& times) {
  require_rate(gamma);
  const detail::PairTable tbl = detail::build_pairs(s, psi0);
  RealVector out(times.size());
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    const double t = times[k];
    if (!(t >= 0.0)) throw std::invalid_argument("purity_curve: times must be >= 0");
    double p2 = tbl.diag_weight;
    for (std::size_t p = 0; p < tbl.w.size(); ++p)
      p2 += 2.0 * tbl.w[p] * std::exp(-gamma * tbl.dl2[p] * t);
    out[k] = p2;
  }
  return out;
}

// ---- reference initial states ----

inline Vector product_plus_state(int n_spins) {
  const long long dim = 1LL << n_spins;
  if (n_spins < 1 || dim > kMaxDim) throw std::invalid_argument("product_plus_state: bad size");
  return Vector::Constant(dim, Complex(1.0 / std::sqrt(double(dim)), 0.0));
}

inline Vector cat_state(int n_spins) {
  const long long dim = 1LL << n_spins;
  if (n_spins < 1 || dim > kMaxDim) throw std::invalid_argument("cat_state: bad size");
  Vector v = Vector::Zero(dim);
  v[0] = v[dim - 1] = Complex(M_SQRT1_2, 0.0);
  return v;
}

// Domain-wall configuration v_p: the first N-p sites down, the last p up.
inline long long reference_config_index(int n_spins, int p) {
  if (p < 0 || p > n_spins) throw std::invalid_argument("reference_config_index: p out of range");
  return (1LL << n_spins) - (1LL << p);
}

// Equal superposition of the all-up configuration and the domain wall with
// floor(N/2) up sites: the two branches sit at the extreme pair-coupling
// eigenvalues, which maximizes the collective-noise sensitivity.
inline Vector max_decoherence_state(int n_spins) {
  const long long dim = 1LL << n_spins;
  if (n_spins < 2 || dim > kMaxDim) throw std::invalid_argument("max_decoherence_state: bad size");
  Vector v = Vector::Zero(dim);
  v[0] = Complex(M_SQRT1_2, 0.0);
  v[reference_config_index(n_spins, n_spins / 2)] += Complex(M_SQRT1_2, 0.0);
  return v;
}

// Uniform superposition of all configurations with exactly p down spins.
inline Vector dicke_state(int n_spins, int p) {
  const long long dim = 1LL << n_spins;
  if (n_spins < 1 || dim > kMaxDim) throw std::invalid_argument("dicke_state: bad size");
  if (p < 0 || p > n_spins) throw std::invalid_argument("dicke_state: p out of range");
  Vector v = Vector::Zero(dim);
  const double amp = 1.0 / std::sqrt(double(binomial(n_spins, p)));
  for (long long idx = 0; idx < dim; ++idx)
    if (down_count(n_spins, idx) == p) v[idx] = Complex(amp, 0.0);
  return v;
}

// Binomial mixture of Dicke projectors; stationary under collective pair
// dephasing (and under uniform couplings, which are constant on each
// p-sector).
inline Matrix fixed_point(int n_spins) {
  const long long dim = 1LL << n_spins;
  if (n_spins < 1 || dim > kMaxDim) throw std::invalid_argument("fixed_point: bad size");
  Matrix rho = Matrix::Zero(dim, dim);
  for (int p = 0; p <= n_spins; ++p) {
    const Vector d = dicke_state(n_spins, p);
    rho += (double(binomial(n_spins, p)) / double(dim)) * (d * d.adjoint());
  }
  return rho;
}

// Long-time purity plateau of the product-plus initial state: every coherence
// between configurations with equal pair-coupling eigenvalue survives.
inline double asymptotic_purity(int n_spins) {
  if (n_spins < 1 || n_spins > 14) throw std::invalid_argument("asymptotic_purity: bad size");
  const double denom = std::pow(2.0, 2 * n_spins);
  double count = 2.0 * double(binomial(2 * n_spins, n_spins));
  if (n_spins % 2 == 0) {
    const double c = double(binomial(n_spins, n_spins / 2));
    count -= c * c;
  }
  return count / denom;
}

}  // namespace noisim::ising
