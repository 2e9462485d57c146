#pragma once

// Shared fixtures for the test suite. The matrix exponential here is an
// independent oracle: scaling and squaring on a plain Taylor series, no
// eigendecomposition, so it shares no code path with hermitian_exp.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <noisim/qcore.hpp>

namespace testutil {

using noisim::Complex;
using noisim::Matrix;
using noisim::Vector;

inline Matrix expm_reference(const Matrix& a) {
  const Eigen::Index d = a.rows();
  double norm = 0.0;
  for (Eigen::Index r = 0; r < d; ++r) {
    norm = std::max(norm, a.row(r).cwiseAbs().sum());
  }
  int squarings = 0;
  while (norm > 0.25) {
    norm *= 0.5;
    ++squarings;
  }
  const Matrix x = a / std::pow(2.0, squarings);
  Matrix term = Matrix::Identity(d, d);
  Matrix sum = term;
  for (int k = 1; k <= 30; ++k) {
    term = (x * term) / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

// exp(-i * scale * h) for comparison against noisim::hermitian_exp.
inline Matrix expm_minus_i(const Matrix& h, double scale) {
  return expm_reference(Complex(0.0, -scale) * h);
}

inline Matrix random_hermitian(int dim, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss;
  Matrix m(dim, dim);
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) m(r, c) = Complex(gauss(rng), gauss(rng));
  }
  return 0.5 * (m + m.adjoint());
}

inline Vector random_state(int dim, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss;
  Vector v(dim);
  for (int r = 0; r < dim; ++r) v(r) = Complex(gauss(rng), gauss(rng));
  v.normalize();
  return v;
}

template <typename A, typename B>
double max_abs_diff(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  return (a.derived() - b.derived()).cwiseAbs().maxCoeff();
}

// Scratch directory that cleans up after itself.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path file(const std::string& name) const { return path / name; }
};

inline void write_text(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x,
                           const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  return (n * sxy - sx * sy) / denom;
}

}  // namespace testutil
