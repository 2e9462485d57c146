// qcore.hpp: Dense complex linear algebra and operator-construction primitives.
//
// Conventions used across the library:
//   * hbar = 1; rates (gamma) and couplings (J) are inverse times.
//   * Spin basis is lexicographic over site labels with a=+1 listed before
//     a=-1 at each site; site 0 is the most significant Kronecker factor.
//   * Dense storage only; dimensions are capped at kMaxDim.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

namespace noisim {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;
using RealMatrix = Eigen::MatrixXd;

inline constexpr int kMaxDim = 1 << 14;      // dense-storage budget
inline constexpr double kHermTol = 1e-12;    // relative Hermiticity tolerance

// ---- validation helpers ----

inline double max_abs(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline bool is_finite(const Matrix& m) {
  return m.allFinite();
}

inline bool is_hermitian(const Matrix& m, double tol = kHermTol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, max_abs(m));
  return max_abs(m - m.adjoint()) <= tol * scale;
}

inline void require_square(const Matrix& m, const char* who) {
  if (m.rows() != m.cols() || m.rows() < 1)
    throw std::invalid_argument(std::string(who) + ": operator must be square and non-empty");
  if (m.rows() > kMaxDim)
    throw std::invalid_argument(std::string(who) + ": dimension exceeds dense budget " +
                                std::to_string(kMaxDim));
  if (!is_finite(m))
    throw std::invalid_argument(std::string(who) + ": operator has non-finite entries");
}

inline void require_hermitian(const Matrix& m, const char* who) {
  require_square(m, who);
  if (!is_hermitian(m))
    throw std::invalid_argument(std::string(who) + ": operator is not Hermitian within tolerance");
}

// Norm drift budget for unitary propagation.
inline void require_unit_norm(const Vector& psi, const char* who, double tol = 1e-9) {
  if (!psi.allFinite())
    throw std::runtime_error(std::string(who) + ": state has non-finite amplitudes");
  const double n = psi.norm();
  if (std::abs(n - 1.0) > tol)
    throw std::invalid_argument(std::string(who) + ": state norm " + std::to_string(n) +
                                " deviates from 1 beyond " + std::to_string(tol));
}

// Density-matrix sanity: Hermitian to 1e-10, unit trace to 1e-9, spectrum >= -1e-8.
inline void require_density(const Matrix& rho, const char* who) {
  require_square(rho, who);
  const double scale = std::max(1.0, max_abs(rho));
  if (max_abs(rho - rho.adjoint()) > 1e-10 * scale)
    throw std::invalid_argument(std::string(who) + ": density matrix not Hermitian within 1e-10");
  if (std::abs(rho.trace().real() - 1.0) > 1e-9 || std::abs(rho.trace().imag()) > 1e-9)
    throw std::invalid_argument(std::string(who) + ": density matrix trace deviates from 1");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (rho + rho.adjoint()),
                                           Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw std::runtime_error(std::string(who) + ": eigendecomposition failed");
  if (es.eigenvalues().minCoeff() < -1e-8)
    throw std::invalid_argument(std::string(who) + ": density matrix has eigenvalue below -1e-8");
}

// ---- elementary operators ----

inline Matrix identity(int dim) {
  if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("identity: bad dimension");
  return Matrix::Identity(dim, dim);
}

inline Matrix pauli_x() {
  Matrix s(2, 2);
  s << 0, 1, 1, 0;
  return s;
}

inline Matrix pauli_y() {
  Matrix s(2, 2);
  s << 0, Complex(0, -1), Complex(0, 1), 0;
  return s;
}

// Basis order |+1>, |-1>.
inline Matrix pauli_z() {
  Matrix s(2, 2);
  s << 1, 0, 0, -1;
  return s;
}

inline Matrix pauli(char axis) {
  switch (axis) {
    case 'x': return pauli_x();
    case 'y': return pauli_y();
    case 'z': return pauli_z();
    default: throw std::invalid_argument("pauli: axis must be one of x, y, z");
  }
}

// Truncated bosonic ladder operators on n_max+1 levels.
struct BosonOps {
  Matrix lower;   // b |n> = sqrt(n) |n-1>
  Matrix raise;   // b†
  Matrix number;  // n̂ = b†b = diag(0..n_max)
};

inline BosonOps boson_ops(int n_max) {
  if (n_max < 1) throw std::invalid_argument("boson_ops: n_max must be >= 1");
  const int d = n_max + 1;
  if (d > kMaxDim) throw std::invalid_argument("boson_ops: dimension exceeds dense budget");
  BosonOps ops{Matrix::Zero(d, d), Matrix::Zero(d, d), Matrix::Zero(d, d)};
  for (int n = 1; n < d; ++n) ops.lower(n - 1, n) = std::sqrt(double(n));
  ops.raise = ops.lower.adjoint();
  for (int n = 0; n < d; ++n) ops.number(n, n) = double(n);
  return ops;
}

// ---- tensor products and embedding ----

inline Matrix kron(const Matrix& a, const Matrix& b) {
  if (a.rows() * b.rows() > kMaxDim || a.cols() * b.cols() > kMaxDim)
    throw std::invalid_argument("kron: result exceeds dense budget");
  return Eigen::kroneckerProduct(a, b).eval();
}

inline Matrix kron_all(const std::vector<Matrix>& factors) {
  if (factors.empty()) throw std::invalid_argument("kron_all: empty factor list");
  Matrix out = factors.front();
  for (std::size_t i = 1; i < factors.size(); ++i) out = kron(out, factors[i]);
  return out;
}

// op acting on the named sites, identity elsewhere; local dimensions may differ
// per site. Sites must be strictly increasing.
inline Matrix embed(const Matrix& op, const std::vector<int>& sites,
                    const std::vector<int>& local_dims) {
  require_square(op, "embed");
  const int n_sites = static_cast<int>(local_dims.size());
  if (n_sites < 1) throw std::invalid_argument("embed: empty local_dims");
  for (int d : local_dims)
    if (d < 1) throw std::invalid_argument("embed: local dimension must be >= 1");
  if (sites.empty()) throw std::invalid_argument("embed: empty site list");
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (sites[i] < 0 || sites[i] >= n_sites)
      throw std::invalid_argument("embed: site index out of range");
    if (i > 0 && sites[i] <= sites[i - 1])
      throw std::invalid_argument("embed: site indices must be strictly increasing");
  }

  long long full_dim = 1, op_dim = 1;
  for (int d : local_dims) {
    full_dim *= d;
    if (full_dim > kMaxDim) throw std::invalid_argument("embed: full dimension exceeds budget");
  }
  for (int s : sites) op_dim *= local_dims[s];
  if (op_dim != op.rows())
    throw std::invalid_argument("embed: operator dimension does not match named sites");

  // Row-major strides: site 0 is the most significant factor.
  std::vector<long long> stride(n_sites, 1);
  for (int i = n_sites - 2; i >= 0; --i) stride[i] = stride[i + 1] * local_dims[i + 1];

  std::vector<int> rest;
  rest.reserve(n_sites - sites.size());
  for (int i = 0, j = 0; i < n_sites; ++i) {
    if (j < static_cast<int>(sites.size()) && sites[j] == i) {
      ++j;
    } else {
      rest.push_back(i);
    }
  }
  long long rest_dim = full_dim / op_dim;

  // Global offset of an op-local index (digits over the named sites).
  auto op_offset = [&](long long a) {
    long long off = 0;
    for (int i = static_cast<int>(sites.size()) - 1; i >= 0; --i) {
      const int d = local_dims[sites[i]];
      off += (a % d) * stride[sites[i]];
      a /= d;
    }
    return off;
  };
  auto rest_offset = [&](long long r) {
    long long off = 0;
    for (int i = static_cast<int>(rest.size()) - 1; i >= 0; --i) {
      const int d = local_dims[rest[i]];
      off += (r % d) * stride[rest[i]];
      r /= d;
    }
    return off;
  };

  std::vector<long long> op_off(op_dim), rest_off(rest_dim);
  for (long long a = 0; a < op_dim; ++a) op_off[a] = op_offset(a);
  for (long long r = 0; r < rest_dim; ++r) rest_off[r] = rest_offset(r);

  Matrix out = Matrix::Zero(full_dim, full_dim);
  for (long long a = 0; a < op_dim; ++a)
    for (long long b = 0; b < op_dim; ++b) {
      const Complex v = op(a, b);
      if (v == Complex(0, 0)) continue;
      for (long long r = 0; r < rest_dim; ++r)
        out(op_off[a] + rest_off[r], op_off[b] + rest_off[r]) = v;
    }
  return out;
}

// ---- Hermitian exponential ----

// exp(-i * scale * H) via eigendecomposition; unitary up to rounding.
inline Matrix hermitian_exp(const Matrix& h, double scale) {
  require_hermitian(h, "hermitian_exp");
  if (!std::isfinite(scale)) throw std::invalid_argument("hermitian_exp: non-finite scale");
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("hermitian_exp: eigendecomposition failed");
  Vector phases(h.rows());
  for (Eigen::Index i = 0; i < h.rows(); ++i)
    phases[i] = std::exp(Complex(0.0, -scale * es.eigenvalues()[i]));
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

// ---- expectation values ----

inline Complex expectation(const Matrix& op, const Vector& psi) {
  if (op.rows() != psi.size()) throw std::invalid_argument("expectation: dimension mismatch");
  return psi.dot(op * psi);  // Eigen's dot conjugates the left argument
}

inline Complex expectation(const Matrix& op, const Matrix& rho) {
  if (op.rows() != rho.rows()) throw std::invalid_argument("expectation: dimension mismatch");
  return (op * rho).trace();
}

inline Matrix commutator(const Matrix& a, const Matrix& b) { return a * b - b * a; }

inline Matrix anticommutator(const Matrix& a, const Matrix& b) { return a * b + b * a; }

}  // namespace noisim
