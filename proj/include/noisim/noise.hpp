// noise.hpp: Gaussian noise synthesis for stochastic Hamiltonians.
//
// Streams are indexed by (master_seed, stream_id) and are reproducible across
// platforms: the generator is mt19937_64 and normals come from a fixed
// Box-Muller transform, so no standard-library distribution is involved.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace noisim::noise {

enum class NoiseKind { real_white, complex_white, real_colored, complex_colored };

enum class KernelForm { ornstein_uhlenbeck, user_tabulated };

// Stationary correlation kernel K(s) with unit integral over the real line.
struct KernelSpec {
  KernelForm form = KernelForm::ornstein_uhlenbeck;
  double tau_c = 0.0;            // OU correlation time
  Eigen::VectorXd table_lags;    // tabulated: lag grid, must start at 0 and be uniform
  Eigen::VectorXd table_values;  // tabulated: K at each lag

  void validate() const {
    if (form == KernelForm::ornstein_uhlenbeck) {
      if (!(tau_c > 0.0) || !std::isfinite(tau_c))
        throw std::invalid_argument("kernel: OU correlation time must be positive");
      return;
    }
    if (table_lags.size() < 1 || table_lags.size() != table_values.size())
      throw std::invalid_argument("kernel: tabulated lags and values must match and be non-empty");
    if (std::abs(table_lags[0]) > 0.0)
      throw std::invalid_argument("kernel: tabulated lag grid must start at 0");
    for (Eigen::Index i = 1; i < table_lags.size(); ++i)
      if (!(table_lags[i] > table_lags[i - 1]))
        throw std::invalid_argument("kernel: tabulated lag grid must be strictly increasing");
    if (!table_values.allFinite())
      throw std::invalid_argument("kernel: tabulated values must be finite");
  }

  // Lag spacing of the tabulated grid (grid must be uniform to use it).
  double table_step() const {
    if (table_lags.size() < 2) return 0.0;
    const double h = table_lags[1] - table_lags[0];
    for (Eigen::Index i = 1; i < table_lags.size(); ++i)
      if (std::abs(table_lags[i] - table_lags[0] - double(i) * h) > 1e-9 * h)
        throw std::invalid_argument("kernel: tabulated lag grid must be uniform");
    return h;
  }

  // K at lag s >= 0. Tabulated kernels are only defined on their own grid:
  // s must land on a grid node exactly (the simulation grid must match the
  // table grid); lags beyond the table are an error.
  double operator()(double s) const {
    s = std::abs(s);
    if (form == KernelForm::ornstein_uhlenbeck)
      return std::exp(-s / tau_c) / (2.0 * tau_c);
    if (table_lags.size() == 1) {
      if (s > 0.0) throw std::invalid_argument("kernel: lag outside tabulated grid");
      return table_values[0];
    }
    const double h = table_step();
    const double x = s / h;
    const long long idx = std::llround(x);
    if (std::abs(x - double(idx)) > 1e-6)
      throw std::invalid_argument("kernel: requested lag does not lie on the tabulated grid");
    if (idx < 0 || idx >= table_lags.size())
      throw std::invalid_argument("kernel: lag outside tabulated grid");
    return table_values[idx];
  }
};

inline KernelSpec ou_kernel(double tau_c) {
  KernelSpec k;
  k.form = KernelForm::ornstein_uhlenbeck;
  k.tau_c = tau_c;
  k.validate();
  return k;
}

inline KernelSpec tabulated_kernel(Eigen::VectorXd lags, Eigen::VectorXd values) {
  KernelSpec k;
  k.form = KernelForm::user_tabulated;
  k.table_lags = std::move(lags);
  k.table_values = std::move(values);
  k.validate();
  return k;
}

// One noise channel: amplitude(s) plus the kind of process driving it.
// Equal-amplitude channels set gamma; unequal-amplitude channels may override
// the two quadrature rates independently (complex noise only).
struct NoiseSpec {
  NoiseKind kind = NoiseKind::real_white;
  double gamma = 0.0;
  std::optional<double> gamma_prime;         // rate on the (L+L†)/2 quadrature
  std::optional<double> gamma_double_prime;  // rate on the i(L-L†)/2 quadrature
  std::optional<KernelSpec> kernel;

  bool is_complex() const {
    return kind == NoiseKind::complex_white || kind == NoiseKind::complex_colored;
  }
  bool is_colored() const {
    return kind == NoiseKind::real_colored || kind == NoiseKind::complex_colored;
  }
  double rate_a() const { return gamma_prime.value_or(gamma); }
  double rate_b() const { return gamma_double_prime.value_or(gamma); }

  void validate() const {
    auto check_rate = [](double g, const char* name) {
      if (!(g >= 0.0) || !std::isfinite(g))
        throw std::invalid_argument(std::string("noise: ") + name + " must be finite and >= 0");
    };
    check_rate(gamma, "gamma");
    check_rate(rate_a(), "gamma_prime");
    check_rate(rate_b(), "gamma_double_prime");
    if (!is_complex() && (gamma_prime || gamma_double_prime))
      throw std::invalid_argument("noise: quadrature rates require complex noise");
    if (is_colored()) {
      if (!kernel) throw std::invalid_argument("noise: colored noise requires a kernel");
      kernel->validate();
    } else if (kernel) {
      throw std::invalid_argument("noise: white noise must not carry a kernel");
    }
  }
};

// Independent random processes needed to drive this channel.
inline int process_count(const NoiseSpec& spec) { return spec.is_complex() ? 2 : 1; }

// ---- Gaussian stream ----

// Deterministic normal generator for one (master_seed, stream_id) pair.
class GaussianStream {
 public:
  GaussianStream(std::uint64_t master_seed, std::uint64_t stream_id) {
    std::seed_seq seq{
        static_cast<std::uint32_t>(master_seed & 0xffffffffu),
        static_cast<std::uint32_t>(master_seed >> 32),
        static_cast<std::uint32_t>(stream_id & 0xffffffffu),
        static_cast<std::uint32_t>(stream_id >> 32),
    };
    engine_.seed(seq);
  }

  // Standard normal via Box-Muller on raw 53-bit uniforms; pairs are cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1], u2 in [0,1).
    const double u1 = (double((engine_() >> 11)) + 1.0) * 0x1.0p-53;
    const double u2 = double(engine_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// ---- sampled paths ----

// Per-step drive increments for one real process over a uniform grid.
//   white:   increments[j] = dW_j ~ N(0, dt)      (Brownian increments)
//   colored: increments[j] = eta(t_j) * dt        (left-point Riemann weights)
struct NoisePath {
  double dt = 0.0;
  Eigen::VectorXd increments;
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  int n_steps() const { return static_cast<int>(increments.size()); }
  double eta(int j) const { return increments[j] / dt; }
};

inline NoisePath sample_white(int n_steps, double dt, std::uint64_t master_seed,
                              std::uint64_t stream_id) {
  if (n_steps < 1) throw std::invalid_argument("sample_white: n_steps must be >= 1");
  if (!(dt > 0.0) || !std::isfinite(dt))
    throw std::invalid_argument("sample_white: dt must be positive");
  GaussianStream g(master_seed, stream_id);
  NoisePath p;
  p.dt = dt;
  p.master_seed = master_seed;
  p.stream_id = stream_id;
  p.increments.resize(n_steps);
  const double root_dt = std::sqrt(dt);
  for (int j = 0; j < n_steps; ++j) p.increments[j] = root_dt * g.normal();
  return p;
}

// Pointwise Gaussian process eta(t_j) with covariance K(t_j - t_k), factored by
// Cholesky. A single diagonal jitter of 1e-10 * max(diag) is allowed before
// the factorization is declared failed. Tabulated kernels additionally pass a
// spectral positive-semidefiniteness check.
inline NoisePath sample_colored(const KernelSpec& kernel, const Eigen::VectorXd& t_grid,
                                std::uint64_t master_seed, std::uint64_t stream_id) {
  kernel.validate();
  const int n = static_cast<int>(t_grid.size());
  if (n < 1) throw std::invalid_argument("sample_colored: empty time grid");
  double dt = 1.0;  // weight for a single-point grid
  if (n >= 2) {
    dt = t_grid[1] - t_grid[0];
    if (!(dt > 0.0)) throw std::invalid_argument("sample_colored: grid must be increasing");
    for (int i = 1; i < n; ++i)
      if (std::abs(t_grid[i] - t_grid[0] - double(i) * dt) > 1e-9 * dt)
        throw std::invalid_argument("sample_colored: grid must be uniform");
  }

  Eigen::MatrixXd cov(n, n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k <= j; ++k) {
      const double v = kernel(t_grid[j] - t_grid[k]);
      cov(j, k) = v;
      cov(k, j) = v;
    }

  if (kernel.form == KernelForm::user_tabulated) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("sample_colored: covariance eigendecomposition failed");
    const double top = std::max(1e-300, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-10 * top)
      throw std::invalid_argument("sample_colored: tabulated kernel is not positive semidefinite");
  }

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-10 * cov.diagonal().maxCoeff();
    llt.compute(cov + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("sample_colored: covariance is not positive definite even with jitter");
  }

  GaussianStream g(master_seed, stream_id);
  Eigen::VectorXd z(n);
  for (int j = 0; j < n; ++j) z[j] = g.normal();
  const Eigen::VectorXd eta = llt.matrixL() * z;

  NoisePath p;
  p.dt = dt;
  p.master_seed = master_seed;
  p.stream_id = stream_id;
  p.increments = eta * dt;
  return p;
}

// Two independent quadrature paths for a complex channel, on the uniform grid
// t_j = j * dt, j = 0 .. n_steps-1.
inline std::pair<NoisePath, NoisePath> complex_pair(const NoiseSpec& spec, int n_steps, double dt,
                                                    std::uint64_t master_seed,
                                                    std::uint64_t stream_a,
                                                    std::uint64_t stream_b) {
  spec.validate();
  if (!spec.is_complex())
    throw std::invalid_argument("complex_pair: spec must describe complex noise");
  if (stream_a == stream_b)
    throw std::invalid_argument("complex_pair: quadrature streams must be distinct");
  if (spec.is_colored()) {
    Eigen::VectorXd grid(n_steps);
    for (int j = 0; j < n_steps; ++j) grid[j] = double(j) * dt;
    return {sample_colored(*spec.kernel, grid, master_seed, stream_a),
            sample_colored(*spec.kernel, grid, master_seed, stream_b)};
  }
  return {sample_white(n_steps, dt, master_seed, stream_a),
          sample_white(n_steps, dt, master_seed, stream_b)};
}

}  // namespace noisim::noise
