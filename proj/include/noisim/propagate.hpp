// propagate.hpp: Stochastic trajectory evolution, ensemble averaging, and the
// two master-equation integrators used as cross-checks.
//
// One trajectory applies per step the exact unitary
//   U_j = exp(-i [H(t_mid) dt + sum_a (sqrt(g'_a) dW'_j A_a + sqrt(g''_a) dW''_j B_a)])
// with A = (L + L†)/2 and B = i(L - L†)/2, so every sample path stays exactly
// unitary and the noise average reproduces the open-system dynamics.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "noisim/noise.hpp"
#include "noisim/qcore.hpp"

namespace noisim {

// ---- model description ----

struct TimeGrid {
  double dt = 0.0;
  int n_steps = 0;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt))
      throw std::invalid_argument("time_grid: dt must be positive and finite");
    if (n_steps < 1) throw std::invalid_argument("time_grid: n_steps must be >= 1");
  }
  double time(int j) const { return double(j) * dt; }
};

struct Channel {
  noise::NoiseSpec spec;
  Matrix lindblad;
  Matrix a_op;  // (L + L†)/2
  Matrix b_op;  // i (L - L†)/2, exactly zero for Hermitian L
  bool b_active = false;
};

// Optional replacement for the default exponential step. Receives the raw
// per-process increments of this step in process order.
using StepHook = std::function<void(int step, const std::vector<double>& dws, Vector& psi)>;

struct StochasticModel {
  Matrix h_target;
  std::function<Matrix(double)> h_of_t;  // optional time dependence
  std::vector<Channel> channels;
  StepHook custom_step;  // optional; bypasses h_target and the channel operators
  int dim = 0;
  bool diagonal = false;  // every generator strictly diagonal in the stored basis

  Matrix hamiltonian(double t) const { return h_of_t ? h_of_t(t) : h_target; }
};

namespace detail {

inline bool strictly_diagonal(const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (i != j && m(i, j) != Complex(0, 0)) return false;
  return true;
}

}  // namespace detail

inline StochasticModel make_model(Matrix h_target,
                                  std::vector<std::pair<noise::NoiseSpec, Matrix>> couplings) {
  require_hermitian(h_target, "make_model");
  StochasticModel m;
  m.dim = static_cast<int>(h_target.rows());
  bool diag = detail::strictly_diagonal(h_target);
  for (auto& [spec, lindblad] : couplings) {
    spec.validate();
    require_square(lindblad, "make_model");
    if (lindblad.rows() != m.dim)
      throw std::invalid_argument("make_model: coupling operator dimension mismatch");
    Channel ch;
    ch.spec = spec;
    const bool herm = is_hermitian(lindblad);
    if (!spec.is_complex() && !herm)
      throw std::invalid_argument(
          "make_model: real noise requires a Hermitian coupling operator (use complex noise "
          "for non-Hermitian couplings)");
    ch.a_op = 0.5 * (lindblad + lindblad.adjoint());
    ch.b_op = herm ? Matrix::Zero(m.dim, m.dim).eval()
                   : (Complex(0, 0.5) * (lindblad - lindblad.adjoint())).eval();
    ch.b_active = spec.is_complex();
    diag = diag && detail::strictly_diagonal(ch.a_op) &&
           (!ch.b_active || detail::strictly_diagonal(ch.b_op));
    ch.lindblad = std::move(lindblad);
    m.channels.push_back(std::move(ch));
  }
  m.h_target = std::move(h_target);
  m.diagonal = diag;
  return m;
}

// Independent random processes needed per trajectory.
inline int process_count(const StochasticModel& m) {
  int p = 0;
  for (const Channel& ch : m.channels) p += noise::process_count(ch.spec);
  return p;
}

// Streams are laid out as stream_id = trajectory_index * P + process_index so
// that enlarging the ensemble never reshuffles existing trajectories.
inline std::vector<noise::NoisePath> draw_paths(const StochasticModel& m, const TimeGrid& grid,
                                                std::uint64_t master_seed,
                                                std::uint64_t trajectory_index) {
  const int p_total = process_count(m);
  std::vector<noise::NoisePath> paths;
  paths.reserve(p_total);
  std::uint64_t proc = 0;
  for (const Channel& ch : m.channels) {
    const int np = noise::process_count(ch.spec);
    if (ch.spec.is_colored()) {
      Eigen::VectorXd tg(grid.n_steps);
      for (int j = 0; j < grid.n_steps; ++j) tg[j] = grid.time(j);
      for (int q = 0; q < np; ++q) {
        noise::NoisePath p = noise::sample_colored(*ch.spec.kernel, tg, master_seed,
                                                   trajectory_index * p_total + proc + q);
        if (grid.n_steps == 1) {
          // A one-point grid carries no spacing of its own; rescale the
          // left-point weight to the simulation step.
          p.increments *= grid.dt;
          p.dt = grid.dt;
        }
        paths.push_back(std::move(p));
      }
    } else {
      for (int q = 0; q < np; ++q)
        paths.push_back(noise::sample_white(grid.n_steps, grid.dt, master_seed,
                                            trajectory_index * p_total + proc + q));
    }
    proc += np;
  }
  return paths;
}

namespace detail {

// Reusable stepping state for one trajectory.
struct Stepper {
  const StochasticModel* model = nullptr;
  const TimeGrid* grid = nullptr;
  // dense path
  Eigen::SelfAdjointEigenSolver<Matrix> solver;
  Matrix generator;
  // diagonal fast path
  RealVector h_diag;
  std::vector<RealVector> op_diags;      // per process: sqrt(rate) * diag
  std::vector<const Matrix*> op_full;    // per process: operator
  std::vector<double> op_weight;         // per process: sqrt(rate)
  bool time_dependent = false;

  Stepper(const StochasticModel& m, const TimeGrid& g) : model(&m), grid(&g) {
    time_dependent = static_cast<bool>(m.h_of_t);
    if (m.custom_step) return;
    for (const Channel& ch : m.channels) {
      op_full.push_back(&ch.a_op);
      op_weight.push_back(std::sqrt(ch.spec.rate_a()));
      if (ch.b_active) {
        op_full.push_back(&ch.b_op);
        op_weight.push_back(std::sqrt(ch.spec.rate_b()));
      }
    }
    if (m.diagonal && !time_dependent) {
      h_diag = m.h_target.diagonal().real();
      for (std::size_t p = 0; p < op_full.size(); ++p)
        op_diags.push_back(op_weight[p] * op_full[p]->diagonal().real());
    } else {
      generator.resize(m.dim, m.dim);
    }
  }

  void apply(int j, const std::vector<double>& dws, Vector& psi) {
    if (model->custom_step) {
      model->custom_step(j, dws, psi);
      return;
    }
    const double dt = grid->dt;
    if (!op_diags.empty() || (model->diagonal && !time_dependent)) {
      for (Eigen::Index i = 0; i < psi.size(); ++i) {
        double phase = h_diag[i] * dt;
        for (std::size_t p = 0; p < op_diags.size(); ++p) phase += dws[p] * op_diags[p][i];
        psi[i] *= std::exp(Complex(0.0, -phase));
      }
      return;
    }
    const double t_mid = grid->time(j) + 0.5 * dt;
    generator = model->hamiltonian(t_mid) * dt;
    for (std::size_t p = 0; p < op_full.size(); ++p)
      if (dws[p] != 0.0) generator += (op_weight[p] * dws[p]) * (*op_full[p]);
    solver.compute(generator);
    if (solver.info() != Eigen::Success)
      throw std::runtime_error("propagate: step generator eigendecomposition failed");
    Vector phases(psi.size());
    for (Eigen::Index i = 0; i < psi.size(); ++i)
      phases[i] = std::exp(Complex(0.0, -solver.eigenvalues()[i]));
    psi = solver.eigenvectors() * (phases.asDiagonal() * (solver.eigenvectors().adjoint() * psi));
  }
};

inline void check_paths(const StochasticModel& m, const TimeGrid& grid,
                        const std::vector<noise::NoisePath>& paths) {
  if (static_cast<int>(paths.size()) != process_count(m))
    throw std::invalid_argument("propagate: path count does not match the model's processes");
  for (const noise::NoisePath& p : paths) {
    if (p.n_steps() != grid.n_steps)
      throw std::invalid_argument("propagate: path length does not match the grid");
    if (std::abs(p.dt - grid.dt) > 1e-12 * grid.dt)
      throw std::invalid_argument("propagate: path step does not match the grid");
  }
}

}  // namespace detail

// Evolves one sample path, returning the state at every grid point
// (n_steps + 1 entries). Norm drift beyond 1e-9 aborts the run.
inline std::vector<Vector> evolve_trajectory(const StochasticModel& m, const Vector& psi0,
                                             const TimeGrid& grid,
                                             const std::vector<noise::NoisePath>& paths) {
  grid.validate();
  if (psi0.size() != m.dim) throw std::invalid_argument("evolve_trajectory: state dimension mismatch");
  require_unit_norm(psi0, "evolve_trajectory");
  detail::check_paths(m, grid, paths);

  detail::Stepper stepper(m, grid);
  std::vector<Vector> out;
  out.reserve(grid.n_steps + 1);
  out.push_back(psi0);
  Vector psi = psi0;
  std::vector<double> dws(paths.size());
  for (int j = 0; j < grid.n_steps; ++j) {
    for (std::size_t p = 0; p < paths.size(); ++p) dws[p] = paths[p].increments[j];
    stepper.apply(j, dws, psi);
    const double n = psi.norm();
    if (!(std::abs(n - 1.0) <= 1e-9)) {
      std::string origin = paths.empty()
                               ? std::string("no noise processes")
                               : "seed " + std::to_string(paths.front().master_seed) +
                                     ", stream " + std::to_string(paths.front().stream_id);
      throw std::runtime_error("evolve_trajectory: norm drift " + std::to_string(n - 1.0) +
                               " at step " + std::to_string(j + 1) + " (" + origin + ")");
    }
    out.push_back(psi);
  }
  return out;
}

// ---- ensemble averaging ----

struct EnsembleOptions {
  int n_trajectories = 0;
  std::uint64_t master_seed = 0;
  int workers = 1;            // <= 0: one per hardware thread
  int output_stride = 1;      // record every stride-th step (endpoint always kept)
  std::vector<Matrix> tracked_ops;  // conservation monitors, e.g. a total number operator
};

struct EnsembleResult {
  RealVector times;
  std::vector<Matrix> rho;  // noise-averaged state at each output time
  RealVector fidelity;      // vs the initial state
  RealVector fidelity_se;
  RealVector purity;
  RealVector purity_se;
  std::vector<double> tracked_drift;  // per tracked op: max_{traj,t} |<O>(t) - <O>(0)|
  int n_trajectories = 0;
  std::uint64_t master_seed = 0;
  int dim = 0;
};

namespace detail {

// Trajectories are reduced in fixed blocks of kChunk, and the block partials
// are combined by a pairwise tree in block order, so the result is bitwise
// independent of the worker count and schedule.
inline constexpr int kChunk = 64;

struct ChunkAccum {
  std::vector<Matrix> rho_sum;
  RealVector f_sum, f_sq;
  std::vector<double> drift;
  int count = 0;
};

inline void pairwise_combine(std::vector<ChunkAccum>& chunks, int lo, int hi) {
  if (hi - lo <= 1) return;
  const int mid = lo + (hi - lo) / 2;
  pairwise_combine(chunks, lo, mid);
  pairwise_combine(chunks, mid, hi);
  ChunkAccum& a = chunks[lo];
  ChunkAccum& b = chunks[mid];
  for (std::size_t t = 0; t < a.rho_sum.size(); ++t) a.rho_sum[t] += b.rho_sum[t];
  a.f_sum += b.f_sum;
  a.f_sq += b.f_sq;
  for (std::size_t o = 0; o < a.drift.size(); ++o) a.drift[o] = std::max(a.drift[o], b.drift[o]);
  a.count += b.count;
}

// Purity of a Hermitian matrix: Tr(rho^2) = ||rho||_F^2.
inline double herm_purity(const Matrix& rho) { return rho.squaredNorm(); }

}  // namespace detail

inline EnsembleResult run_ensemble(const StochasticModel& m, const Vector& psi0,
                                   const TimeGrid& grid, const EnsembleOptions& opts) {
  grid.validate();
  if (opts.n_trajectories < 1)
    throw std::invalid_argument("run_ensemble: need at least one trajectory");
  if (opts.output_stride < 1) throw std::invalid_argument("run_ensemble: bad output stride");
  if (psi0.size() != m.dim) throw std::invalid_argument("run_ensemble: state dimension mismatch");
  require_unit_norm(psi0, "run_ensemble");
  for (const Matrix& op : opts.tracked_ops)
    if (op.rows() != m.dim || op.cols() != m.dim)
      throw std::invalid_argument("run_ensemble: tracked operator dimension mismatch");

  std::vector<int> out_steps;
  for (int j = 0; j <= grid.n_steps; j += opts.output_stride) out_steps.push_back(j);
  if (out_steps.back() != grid.n_steps) out_steps.push_back(grid.n_steps);
  const int n_out = static_cast<int>(out_steps.size());

  const int m_total = opts.n_trajectories;
  const int n_chunks = (m_total + detail::kChunk - 1) / detail::kChunk;
  std::vector<detail::ChunkAccum> chunks(n_chunks);
  std::vector<std::exception_ptr> failures(n_chunks);

  std::atomic<int> next_chunk{0};
  auto worker = [&]() {
    for (;;) {
      const int q = next_chunk.fetch_add(1);
      if (q >= n_chunks) return;
      try {
        detail::ChunkAccum acc;
        acc.rho_sum.assign(n_out, Matrix::Zero(m.dim, m.dim));
        acc.f_sum = RealVector::Zero(n_out);
        acc.f_sq = RealVector::Zero(n_out);
        acc.drift.assign(opts.tracked_ops.size(), 0.0);
        detail::Stepper stepper(m, grid);
        std::vector<double> dws;
        std::vector<double> base_ev(opts.tracked_ops.size());
        const int lo = q * detail::kChunk;
        const int hi = std::min(m_total, lo + detail::kChunk);
        for (int traj = lo; traj < hi; ++traj) {
          const std::vector<noise::NoisePath> paths =
              draw_paths(m, grid, opts.master_seed, std::uint64_t(traj));
          dws.resize(paths.size());
          Vector psi = psi0;
          int out_at = 0;
          for (std::size_t o = 0; o < opts.tracked_ops.size(); ++o)
            base_ev[o] = expectation(opts.tracked_ops[o], psi).real();
          auto record = [&](int j) {
            if (out_at < n_out && out_steps[out_at] == j) {
              acc.rho_sum[out_at].noalias() += psi * psi.adjoint();
              const double f = std::norm(psi0.dot(psi));
              acc.f_sum[out_at] += f;
              acc.f_sq[out_at] += f * f;
              ++out_at;
            }
            for (std::size_t o = 0; o < opts.tracked_ops.size(); ++o) {
              const double ev = expectation(opts.tracked_ops[o], psi).real();
              acc.drift[o] = std::max(acc.drift[o], std::abs(ev - base_ev[o]));
            }
          };
          record(0);
          for (int j = 0; j < grid.n_steps; ++j) {
            for (std::size_t p = 0; p < paths.size(); ++p) dws[p] = paths[p].increments[j];
            stepper.apply(j, dws, psi);
            const double n = psi.norm();
            if (!(std::abs(n - 1.0) <= 1e-9))
              throw std::runtime_error("run_ensemble: norm drift at step " + std::to_string(j + 1) +
                                       " (seed " + std::to_string(opts.master_seed) +
                                       ", trajectory " + std::to_string(traj) + ")");
            record(j + 1);
          }
          acc.count += 1;
        }
        chunks[q] = std::move(acc);
      } catch (...) {
        failures[q] = std::current_exception();
      }
    }
  };

  int n_workers = opts.workers;
  if (n_workers <= 0) n_workers = std::max(1u, std::thread::hardware_concurrency());
  n_workers = std::min(n_workers, n_chunks);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (int q = 0; q < n_chunks; ++q)
    if (failures[q]) std::rethrow_exception(failures[q]);

  // Keep per-chunk state sums for the purity jackknife before combining.
  std::vector<std::vector<Matrix>> block_sums;
  std::vector<int> block_counts;
  if (n_chunks > 1) {
    block_sums.reserve(n_chunks);
    for (const detail::ChunkAccum& c : chunks) {
      block_sums.push_back(c.rho_sum);
      block_counts.push_back(c.count);
    }
  }
  detail::pairwise_combine(chunks, 0, n_chunks);
  detail::ChunkAccum& total = chunks.front();

  EnsembleResult res;
  res.n_trajectories = m_total;
  res.master_seed = opts.master_seed;
  res.dim = m.dim;
  res.times.resize(n_out);
  res.fidelity.resize(n_out);
  res.fidelity_se.resize(n_out);
  res.purity.resize(n_out);
  res.purity_se.resize(n_out);
  res.rho.reserve(n_out);
  res.tracked_drift = total.drift;

  const double inv_m = 1.0 / double(m_total);
  for (int t = 0; t < n_out; ++t) {
    res.times[t] = grid.time(out_steps[t]);
    Matrix rho = total.rho_sum[t] * inv_m;
    const double tr = rho.trace().real();
    if (std::abs(tr - 1.0) > 1e-9 || max_abs(rho - rho.adjoint()) > 1e-10 * std::max(1.0, max_abs(rho)))
      throw std::runtime_error("run_ensemble: averaged state failed trace/Hermiticity checks");
    const double pur = detail::herm_purity(rho);
    if (pur < 1.0 / double(m.dim) - 1e-9 || pur > 1.0 + 1e-9)
      throw std::runtime_error("run_ensemble: averaged purity outside [1/dim, 1]");
    res.purity[t] = pur;

    const double fm = total.f_sum[t] * inv_m;
    res.fidelity[t] = fm;
    // Exact leave-one-out jackknife for a sample mean: s / sqrt(M).
    double fvar = 0.0;
    if (m_total > 1)
      fvar = std::max(0.0, (total.f_sq[t] - total.f_sum[t] * total.f_sum[t] * inv_m) /
                               double(m_total - 1));
    res.fidelity_se[t] = std::sqrt(fvar * inv_m);

    // Purity is quadratic in the averaged state, so its uncertainty comes from
    // a delete-one-block jackknife over the reduction chunks.
    double pur_se = 0.0;
    if (n_chunks > 1) {
      std::vector<double> leave(n_chunks);
      double mean_leave = 0.0;
      for (int q = 0; q < n_chunks; ++q) {
        const Matrix rho_del =
            (total.rho_sum[t] - block_sums[q][t]) / double(m_total - block_counts[q]);
        leave[q] = detail::herm_purity(rho_del);
        mean_leave += leave[q];
      }
      mean_leave /= double(n_chunks);
      double ss = 0.0;
      for (double v : leave) ss += (v - mean_leave) * (v - mean_leave);
      pur_se = std::sqrt(ss * double(n_chunks - 1) / double(n_chunks));
    }
    res.purity_se[t] = pur_se;
    res.rho.push_back(std::move(rho));
  }
  return res;
}

// ---- deterministic master-equation oracle ----

struct OracleResult {
  RealVector times;
  std::vector<Matrix> rho;
};

namespace detail {

// Operator with a diagonal fast path; the algebra is identical either way.
struct LinOp {
  bool diag = false;
  Vector d;
  Matrix full;

  Matrix lmul(const Matrix& x) const { return diag ? (d.asDiagonal() * x).eval() : (full * x).eval(); }
  Matrix rmul(const Matrix& x) const { return diag ? (x * d.asDiagonal()).eval() : (x * full).eval(); }
};

inline LinOp make_linop(const Matrix& m) {
  LinOp op;
  op.diag = strictly_diagonal(m);
  if (op.diag)
    op.d = m.diagonal();
  else
    op.full = m;
  return op;
}

struct QuadTerm {
  double weight = 0.0;
  LinOp op;      // Hermitian quadrature
  LinOp op_sq;   // its square
};

inline void append_quad_terms(const StochasticModel& m, std::vector<QuadTerm>& terms) {
  for (const Channel& ch : m.channels) {
    if (ch.spec.rate_a() > 0.0)
      terms.push_back({ch.spec.rate_a(), make_linop(ch.a_op), make_linop(ch.a_op * ch.a_op)});
    if (ch.b_active && ch.spec.rate_b() > 0.0)
      terms.push_back({ch.spec.rate_b(), make_linop(ch.b_op), make_linop(ch.b_op * ch.b_op)});
  }
}

}  // namespace detail

// Integrates d rho/dt = -i[H, rho] + sum_a g'_a (A rho A - {A^2, rho}/2)
//                                  + g''_a (B rho B - {B^2, rho}/2)
// by classic RK4 on an internal step bounded by 1e-3 of the fastest
// decoherence time. Independent of the trajectory machinery.
inline OracleResult lindblad_oracle(const StochasticModel& m, const Matrix& rho0,
                                    const TimeGrid& grid, int output_stride = 1) {
  grid.validate();
  if (output_stride < 1) throw std::invalid_argument("lindblad_oracle: bad output stride");
  if (m.custom_step) throw std::invalid_argument("lindblad_oracle: custom steppers are unsupported");
  if (m.dim > 1024)
    throw std::invalid_argument("lindblad_oracle: dimension exceeds the oracle budget (1024)");
  if (rho0.rows() != m.dim) throw std::invalid_argument("lindblad_oracle: state dimension mismatch");
  require_density(rho0, "lindblad_oracle");
  for (const Channel& ch : m.channels)
    if (ch.spec.is_colored())
      throw std::invalid_argument("lindblad_oracle: colored channels require the memory-kernel oracle");

  // Fastest decoherence rate sets the internal step. The spectral spread of a
  // possibly non-Hermitian L is bounded through its quadratures:
  // ||L|| <= ||A|| + ||B||.
  double max_rate = 0.0;
  for (const Channel& ch : m.channels) {
    double span = 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> ea(ch.a_op, Eigen::EigenvaluesOnly);
    span += ea.eigenvalues().cwiseAbs().maxCoeff();
    if (ch.b_active) {
      Eigen::SelfAdjointEigenSolver<Matrix> eb(ch.b_op, Eigen::EigenvaluesOnly);
      span += eb.eigenvalues().cwiseAbs().maxCoeff();
    }
    const double norm_sq = 4.0 * span * span;  // (lambda_max - lambda_min)^2 bound
    max_rate = std::max(max_rate, std::max(ch.spec.rate_a(), ch.spec.rate_b()) * norm_sq);
  }
  double dt_int = grid.dt;
  if (max_rate > 0.0) dt_int = std::min(dt_int, 1e-3 / max_rate);
  const int n_sub = std::max(1, int(std::ceil(grid.dt / dt_int - 1e-12)));
  const double h = grid.dt / double(n_sub);

  std::vector<detail::QuadTerm> terms;
  detail::append_quad_terms(m, terms);
  const bool h_const = !m.h_of_t;
  const detail::LinOp h_op = detail::make_linop(m.h_target);

  auto rhs = [&](double t, const Matrix& rho) -> Matrix {
    Matrix out;
    if (h_const) {
      out = Complex(0, -1) * (h_op.lmul(rho) - h_op.rmul(rho));
    } else {
      const Matrix ht = m.h_of_t(t);
      out = Complex(0, -1) * (ht * rho - rho * ht);
    }
    for (const detail::QuadTerm& q : terms) {
      out.noalias() += q.weight * q.op.lmul(q.op.rmul(rho));
      out -= (0.5 * q.weight) * (q.op_sq.lmul(rho) + q.op_sq.rmul(rho));
    }
    return out;
  };

  OracleResult res;
  std::vector<double> times;
  Matrix rho = rho0;
  times.push_back(0.0);
  res.rho.push_back(rho);
  for (int j = 0; j < grid.n_steps; ++j) {
    double t = grid.time(j);
    for (int s = 0; s < n_sub; ++s) {
      const Matrix k1 = rhs(t, rho);
      const Matrix k2 = rhs(t + 0.5 * h, rho + (0.5 * h) * k1);
      const Matrix k3 = rhs(t + 0.5 * h, rho + (0.5 * h) * k2);
      const Matrix k4 = rhs(t + h, rho + h * k3);
      rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      rho = 0.5 * (rho + rho.adjoint()).eval();
      t += h;
    }
    const int step = j + 1;
    if (step % output_stride == 0 || step == grid.n_steps) {
      if (std::abs(rho.trace().real() - 1.0) > 1e-9)
        throw std::runtime_error("lindblad_oracle: trace drift beyond 1e-9 at t = " +
                                 std::to_string(grid.time(step)));
      times.push_back(grid.time(step));
      res.rho.push_back(rho);
    }
  }
  res.times = Eigen::Map<RealVector>(times.data(), times.size());
  return res;
}

// ---- memory-kernel oracle ----

// Integrates the time-local memory equation
//   d rho/dt = -i[H, rho] - sum_a g'_a int_0^t dt' K(t-t') [A, [A(t-t'), rho(t)]]
//              (same structure for the B quadrature)
// with A(s) = U(s) A U(s)† and a trapezoid memory integral on the simulation
// grid; the outer integrator is Heun's RK2 with the memory term frozen per
// step. OU kernels are truncated where K falls below 1e-13 of K(0); tabulated
// kernels are treated as zero beyond their last lag.
inline OracleResult nonmarkov_oracle(const StochasticModel& m, const Matrix& rho0,
                                     const TimeGrid& grid, int output_stride = 1,
                                     std::vector<std::string>* warnings = nullptr) {
  grid.validate();
  if (output_stride < 1) throw std::invalid_argument("nonmarkov_oracle: bad output stride");
  if (m.custom_step) throw std::invalid_argument("nonmarkov_oracle: custom steppers are unsupported");
  if (m.h_of_t)
    throw std::invalid_argument("nonmarkov_oracle: time-dependent Hamiltonians are unsupported");
  if (m.dim > 1024)
    throw std::invalid_argument("nonmarkov_oracle: dimension exceeds the oracle budget (1024)");
  if (rho0.rows() != m.dim) throw std::invalid_argument("nonmarkov_oracle: state dimension mismatch");
  require_density(rho0, "nonmarkov_oracle");
  if (m.channels.empty()) throw std::invalid_argument("nonmarkov_oracle: no channels");
  for (const Channel& ch : m.channels)
    if (!ch.spec.is_colored())
      throw std::invalid_argument("nonmarkov_oracle: every channel must carry a kernel");

  auto warn = [&](const std::string& msg) {
    std::cerr << "nonmarkov_oracle: warning: " << msg << "\n";
    if (warnings) warnings->push_back(msg);
  };

  struct MemChannel {
    double weight = 0.0;
    const Matrix* op = nullptr;      // Schrödinger-picture quadrature
    std::vector<Matrix> op_s;        // op evolved backwards by lag s_k (dense path)
    RealVector diag;                 // diagonal fast path
    const noise::KernelSpec* kernel = nullptr;
    int window = 0;
  };

  const bool diag_path = m.diagonal;
  Matrix u_dt;
  if (!diag_path) u_dt = hermitian_exp(m.h_target, grid.dt);

  std::vector<MemChannel> mems;
  for (const Channel& ch : m.channels) {
    const noise::KernelSpec& k = *ch.spec.kernel;
    int window = grid.n_steps;
    if (k.form == noise::KernelForm::ornstein_uhlenbeck) {
      if (k.tau_c < 5.0 * grid.dt)
        warn("kernel correlation time " + std::to_string(k.tau_c) +
             " is under-resolved by dt = " + std::to_string(grid.dt));
      window = std::min(window, int(std::ceil(k.tau_c * std::log(1e13) / grid.dt)));
    } else {
      window = std::min(window, int(k.table_lags.size()) - 1);
    }
    auto add = [&](double rate, const Matrix& op) {
      if (!(rate > 0.0)) return;
      MemChannel mc;
      mc.weight = rate;
      mc.op = &op;
      mc.kernel = &k;
      mc.window = window;
      if (diag_path) {
        mc.diag = op.diagonal().real();
      } else {
        if (double(window + 1) * double(m.dim) * double(m.dim) > 3.0e7)
          throw std::invalid_argument("nonmarkov_oracle: memory window exceeds the dense budget");
        mc.op_s.reserve(window + 1);
        mc.op_s.push_back(op);
        Matrix u_k = u_dt;
        for (int s = 1; s <= window; ++s) {
          mc.op_s.push_back(u_k * op * u_k.adjoint());
          if (s < window) u_k = u_dt * u_k;
        }
      }
      mems.push_back(std::move(mc));
    };
    add(ch.spec.rate_a(), ch.a_op);
    if (ch.b_active) add(ch.spec.rate_b(), ch.b_op);
  }

  // Kernel value at lag s (tabulated kernels vanish beyond their table).
  auto kernel_at = [&](const noise::KernelSpec& k, int lag_steps) -> double {
    if (k.form == noise::KernelForm::user_tabulated &&
        lag_steps >= static_cast<int>(k.table_lags.size()))
      return 0.0;
    return k(double(lag_steps) * grid.dt);
  };

  const detail::LinOp h_op = detail::make_linop(m.h_target);
  RealVector h_diag;
  if (diag_path) h_diag = m.h_target.diagonal().real();

  OracleResult res;
  std::vector<double> times;
  Matrix rho = rho0;
  times.push_back(0.0);
  res.rho.push_back(rho);

  Matrix mem = Matrix::Zero(m.dim, m.dim);
  Matrix weighted(m.dim, m.dim);
  for (int j = 0; j < grid.n_steps; ++j) {
    // Memory term at t_j applied to rho_j, frozen for both Heun stages.
    mem.setZero();
    if (j > 0) {
      for (const MemChannel& mc : mems) {
        const int kmax = std::min(j, mc.window);
        if (diag_path) {
          double c = 0.0;
          for (int s = 0; s <= kmax; ++s) {
            const double w = (s == 0 || s == j) ? 0.5 : 1.0;
            c += w * grid.dt * kernel_at(*mc.kernel, s);
          }
          const double pref = mc.weight * c;
          for (Eigen::Index a = 0; a < m.dim; ++a)
            for (Eigen::Index b = 0; b < m.dim; ++b) {
              const double dl = mc.diag[a] - mc.diag[b];
              mem(a, b) -= pref * dl * dl * rho(a, b);
            }
        } else {
          weighted.setZero();
          for (int s = 0; s <= kmax; ++s) {
            const double w = (s == 0 || s == j) ? 0.5 : 1.0;
            const double kv = w * grid.dt * kernel_at(*mc.kernel, s);
            if (kv != 0.0) weighted.noalias() += kv * mc.op_s[s];
          }
          const Matrix inner = weighted * rho - rho * weighted;
          mem -= mc.weight * ((*mc.op) * inner - inner * (*mc.op));
        }
      }
    }

    auto unitary_part = [&](const Matrix& r) -> Matrix {
      if (diag_path) {
        Matrix out(m.dim, m.dim);
        for (Eigen::Index a = 0; a < m.dim; ++a)
          for (Eigen::Index b = 0; b < m.dim; ++b)
            out(a, b) = Complex(0, -1) * (h_diag[a] - h_diag[b]) * r(a, b);
        return out;
      }
      return Complex(0, -1) * (h_op.lmul(r) - h_op.rmul(r));
    };

    const Matrix k1 = unitary_part(rho) + mem;
    const Matrix k2 = unitary_part(rho + grid.dt * k1) + mem;
    rho += (0.5 * grid.dt) * (k1 + k2);
    rho = 0.5 * (rho + rho.adjoint()).eval();

    const int step = j + 1;
    if (step % output_stride == 0 || step == grid.n_steps) {
      if (std::abs(rho.trace().real() - 1.0) > 1e-9)
        throw std::runtime_error("nonmarkov_oracle: trace drift beyond 1e-9 at t = " +
                                 std::to_string(grid.time(step)));
      times.push_back(grid.time(step));
      res.rho.push_back(rho);
    }
  }
  res.times = Eigen::Map<RealVector>(times.data(), times.size());
  return res;
}

}  // namespace noisim
