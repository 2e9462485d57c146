// models.hpp: Concrete many-body systems and digital gate synthesis.
//
// Every builder returns the target Hamiltonian together with the collective
// operator that couples to the noise, in the shared lexicographic basis of
// qcore (site 0 most significant).
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "noisim/qcore.hpp"

namespace noisim::models {

// ---- long-range Ising chain with transverse field ----

// H = -sum_{i<j} J_ij Z_i Z_j - h sum_i X_i, driven through the uniform
// pair-coupling operator L = sum_{i<j} Z_i Z_j.
struct IsingSpec {
  int n_spins = 0;
  RealMatrix couplings;  // symmetric, zero diagonal
  double field = 0.0;

  void validate() const {
    if (n_spins < 2 || n_spins > 14)
      throw std::invalid_argument("ising: n_spins must lie in [2, 14]");
    if (couplings.rows() != n_spins || couplings.cols() != n_spins)
      throw std::invalid_argument("ising: coupling matrix must be n_spins x n_spins");
    if (!couplings.allFinite() || !std::isfinite(field))
      throw std::invalid_argument("ising: couplings and field must be finite");
    for (int i = 0; i < n_spins; ++i) {
      if (couplings(i, i) != 0.0)
        throw std::invalid_argument("ising: coupling matrix must have zero diagonal");
      for (int j = 0; j < i; ++j)
        if (couplings(i, j) != couplings(j, i))
          throw std::invalid_argument("ising: coupling matrix must be symmetric");
    }
  }
};

// Open-chain power-law preset J_ij = J / |i-j|^a.
inline IsingSpec ising_power_law(int n_spins, double j_coupling, double exponent,
                                 double field = 0.0) {
  IsingSpec spec;
  spec.n_spins = n_spins;
  spec.field = field;
  spec.couplings = RealMatrix::Zero(std::max(n_spins, 1), std::max(n_spins, 1));
  for (int i = 0; i < n_spins; ++i)
    for (int j = 0; j < n_spins; ++j)
      if (i != j) spec.couplings(i, j) = j_coupling / std::pow(std::abs(i - j), exponent);
  spec.validate();
  return spec;
}

// Sign of site `site` in the computational basis state `index` (+1 first).
inline int config_sign(int n_spins, long long index, int site) {
  return ((index >> (n_spins - 1 - site)) & 1) ? -1 : 1;
}

struct IsingOperators {
  Matrix h_target;
  Matrix lindblad;
};

inline IsingOperators build_ising(const IsingSpec& spec) {
  spec.validate();
  const int n = spec.n_spins;
  const long long dim = 1LL << n;

  // Both the coupling part of H and L are diagonal in the Z basis.
  Matrix h = Matrix::Zero(dim, dim);
  Matrix l = Matrix::Zero(dim, dim);
  for (long long idx = 0; idx < dim; ++idx) {
    double e = 0.0, lv = 0.0;
    for (int i = 0; i < n; ++i) {
      const int ai = config_sign(n, idx, i);
      for (int j = i + 1; j < n; ++j) {
        const double zz = double(ai * config_sign(n, idx, j));
        e -= spec.couplings(i, j) * zz;
        lv += zz;
      }
    }
    h(idx, idx) = e;
    l(idx, idx) = lv;
  }

  if (spec.field != 0.0) {
    const Matrix sx = pauli_x();
    std::vector<int> dims(n, 2);
    for (int i = 0; i < n; ++i) h -= spec.field * embed(sx, {i}, dims);
  }
  return {std::move(h), std::move(l)};
}

// ---- Bose-Hubbard chain with interaction noise ----

// H = -J sum_<ij> (b_i† b_j + b_j† b_i) + (U/2) sum_i n_i (n_i - 1),
// driven through L = sum_i n_i (n_i - 1). Open chain, truncated at n_max
// bosons per site.
struct BoseHubbardSpec {
  int n_sites = 0;
  int n_max = 0;
  double hopping = 0.0;
  double interaction = 0.0;

  void validate() const {
    if (n_sites < 2) throw std::invalid_argument("bose_hubbard: n_sites must be >= 2");
    if (n_max < 1) throw std::invalid_argument("bose_hubbard: n_max must be >= 1");
    double dim = std::pow(double(n_max + 1), double(n_sites));
    if (dim > double(kMaxDim))
      throw std::invalid_argument("bose_hubbard: Hilbert dimension exceeds dense budget");
    if (!std::isfinite(hopping) || !std::isfinite(interaction))
      throw std::invalid_argument("bose_hubbard: couplings must be finite");
  }
};

struct BoseHubbardOperators {
  Matrix h_target;
  Matrix lindblad;
  Matrix n_total;  // conserved total particle number
};

inline BoseHubbardOperators build_bose_hubbard(const BoseHubbardSpec& spec) {
  spec.validate();
  const int d_local = spec.n_max + 1;
  const BosonOps b = boson_ops(spec.n_max);
  const std::vector<int> dims(spec.n_sites, d_local);

  long long dim = 1;
  for (int i = 0; i < spec.n_sites; ++i) dim *= d_local;

  Matrix h = Matrix::Zero(dim, dim);
  Matrix l = Matrix::Zero(dim, dim);
  Matrix n_tot = Matrix::Zero(dim, dim);

  const Matrix n_coll = b.number * (b.number - Matrix::Identity(d_local, d_local));
  for (int i = 0; i < spec.n_sites; ++i) {
    const Matrix n_i = embed(b.number, {i}, dims);
    const Matrix coll_i = embed(n_coll, {i}, dims);
    n_tot += n_i;
    l += coll_i;
    h += 0.5 * spec.interaction * coll_i;
  }
  const Matrix hop = kron(b.raise, b.lower);
  for (int i = 0; i + 1 < spec.n_sites; ++i) {
    const Matrix t = embed(hop, {i, i + 1}, dims);
    h -= spec.hopping * (t + t.adjoint());
  }
  return {std::move(h), std::move(l), std::move(n_tot)};
}

// Fock basis index for occupation numbers (site 0 most significant).
inline long long fock_index(const std::vector<int>& occupations, int n_max) {
  long long idx = 0;
  for (int n : occupations) {
    if (n < 0 || n > n_max) throw std::invalid_argument("fock_index: occupation out of range");
    idx = idx * (n_max + 1) + n;
  }
  return idx;
}

// ---- k-body collective operators ----

// L = sum over all k-site subsets of the embedded local kernel (default
// kernel: the k-fold Z string).
inline Matrix build_kbody(int n_sites, int k, const Matrix& local_kernel) {
  if (n_sites < 1 || k < 1 || k > n_sites)
    throw std::invalid_argument("build_kbody: need 1 <= k <= n_sites");
  if ((1LL << n_sites) > kMaxDim)
    throw std::invalid_argument("build_kbody: dimension exceeds dense budget");
  if (local_kernel.rows() != (1LL << k))
    throw std::invalid_argument("build_kbody: local kernel must act on k spins");

  const long long dim = 1LL << n_sites;
  const std::vector<int> dims(n_sites, 2);
  Matrix l = Matrix::Zero(dim, dim);

  std::vector<int> subset(k);
  for (int i = 0; i < k; ++i) subset[i] = i;
  while (true) {
    l += embed(local_kernel, subset, dims);
    int i = k - 1;
    while (i >= 0 && subset[i] == n_sites - k + i) --i;
    if (i < 0) break;
    ++subset[i];
    for (int j = i + 1; j < k; ++j) subset[j] = subset[j - 1] + 1;
  }
  return l;
}

inline Matrix zz_string(int k) {
  Matrix s = pauli_z();
  Matrix out = s;
  for (int i = 1; i < k; ++i) out = kron(out, s);
  return out;
}

inline Matrix build_kbody(int n_sites, int k) { return build_kbody(n_sites, k, zz_string(k)); }

// ---- digital synthesis of k-body exponentials ----

// Global Molmer-Sorensen gate on k spins:
//   U_MS(theta, phi) = exp(-i theta S_phi^2 / 4),  S_phi = sum_i (X_i cos phi + Y_i sin phi).
inline Matrix ms_gate(double theta, double phi, int k) {
  if (k < 1 || k > 7) throw std::invalid_argument("ms_gate: need 1 <= k <= 7");
  const long long dim = 1LL << k;
  const std::vector<int> dims(k, 2);
  const Matrix local = std::cos(phi) * pauli_x() + std::sin(phi) * pauli_y();
  Matrix s = Matrix::Zero(dim, dim);
  for (int i = 0; i < k; ++i) s += embed(local, {i}, dims);
  return hermitian_exp(s * s, theta / 4.0);
}

// Z on site 0, X elsewhere: the k-body string reached by the MS sandwich.
inline Matrix zx_string(int k) {
  if (k < 1) throw std::invalid_argument("zx_string: k must be >= 1");
  Matrix out = pauli_z();
  for (int i = 1; i < k; ++i) out = kron(out, pauli_x());
  return out;
}

// exp(-i g t Z_1 X_2 ... X_k) synthesized from two MS gates around a single
// Z rotation. The inner rotation angle carries a k-dependent sign: conjugation
// by exp(+i pi S_x^2 / 8) maps Z_1 to the full string times (-1)^((k-1)/2),
// so the sign must be compensated for k = 3 mod 4. Only odd k is supported.
inline Matrix kbody_exponential_digital(double g, double t, int k) {
  if (k < 1 || k > 7) throw std::invalid_argument("kbody_exponential_digital: need 1 <= k <= 7");
  if (k % 2 == 0)
    throw std::invalid_argument("kbody_exponential_digital: even k is unsupported");
  const double sign = (((k - 1) / 2) % 2 == 0) ? 1.0 : -1.0;
  const std::vector<int> dims(k, 2);
  const Matrix z1 = embed(pauli_z(), {0}, dims);
  return ms_gate(-M_PI / 2.0, 0.0, k) * hermitian_exp(z1, sign * g * t) *
         ms_gate(M_PI / 2.0, 0.0, k);
}

// Pre-assembled pieces for per-step digital evolution with a noisy rotation
// angle: U(theta) = U_MS(-pi/2) exp(-i sign theta Z_1) U_MS(pi/2).
struct DigitalKBody {
  int k = 0;
  double g = 0.0;
  double sign = 1.0;
  Matrix ms_plus;      // U_MS(+pi/2, 0)
  Matrix ms_minus;     // U_MS(-pi/2, 0)
  RealVector z1_diag;  // diagonal of Z_1
  Matrix h_target;     // g * (Z X ... X)
  Matrix lindblad;     // Z X ... X (the operator the angle noise couples to)

  Matrix step_unitary(double theta) const {
    Vector phases(z1_diag.size());
    for (Eigen::Index i = 0; i < z1_diag.size(); ++i)
      phases[i] = std::exp(Complex(0.0, -sign * theta * z1_diag[i]));
    return ms_minus * (phases.asDiagonal() * ms_plus);
  }
};

inline DigitalKBody make_digital_kbody(int k, double g) {
  if (k < 1 || k > 7) throw std::invalid_argument("make_digital_kbody: need 1 <= k <= 7");
  if (k % 2 == 0) throw std::invalid_argument("make_digital_kbody: even k is unsupported");
  DigitalKBody d;
  d.k = k;
  d.g = g;
  d.sign = (((k - 1) / 2) % 2 == 0) ? 1.0 : -1.0;
  d.ms_plus = ms_gate(M_PI / 2.0, 0.0, k);
  d.ms_minus = ms_gate(-M_PI / 2.0, 0.0, k);
  const long long dim = 1LL << k;
  d.z1_diag.resize(dim);
  for (long long idx = 0; idx < dim; ++idx)
    d.z1_diag[idx] = double(config_sign(k, idx, 0));
  d.lindblad = zx_string(k);
  d.h_target = g * d.lindblad;
  return d;
}

// ---- Trotter products ----

// (prod_l exp(-i h_l t / M))^M, factors applied in list order.
inline Matrix trotter_evolve(const std::vector<Matrix>& terms, double t, int m_steps) {
  if (terms.empty()) throw std::invalid_argument("trotter_evolve: empty term list");
  if (m_steps < 1) throw std::invalid_argument("trotter_evolve: m_steps must be >= 1");
  const Eigen::Index dim = terms.front().rows();
  Matrix step = Matrix::Identity(dim, dim);
  for (const Matrix& h : terms) {
    if (h.rows() != dim) throw std::invalid_argument("trotter_evolve: term dimension mismatch");
    step = step * hermitian_exp(h, t / double(m_steps));
  }
  Matrix u = Matrix::Identity(dim, dim);
  for (int j = 0; j < m_steps; ++j) u = step * u;
  return u;
}

}  // namespace noisim::models
