#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <noisim/ising_exact.hpp>
#include <noisim/metrics.hpp>
#include <noisim/models.hpp>

#include "helpers.hpp"

using namespace noisim;
using namespace noisim::metrics;
using testutil::random_hermitian;
using testutil::random_state;

TEST_CASE("fidelity and purity have their textbook values", "[metrics]") {
  Vector up(2), down(2), plus(2);
  up << 1, 0;
  down << 0, 1;
  plus << M_SQRT1_2, M_SQRT1_2;

  CHECK(fidelity(up, up) == Catch::Approx(1.0));
  CHECK(fidelity(up, down) == Catch::Approx(0.0).margin(1e-15));
  CHECK(fidelity(plus, up) == Catch::Approx(0.5));

  const Matrix mixed = identity(2) / 2.0;
  CHECK(fidelity(mixed, up) == Catch::Approx(0.5));
  CHECK(purity(mixed) == Catch::Approx(0.5));
  CHECK(purity(Matrix(up * up.adjoint())) == Catch::Approx(1.0));

  Matrix not_square = Matrix::Zero(2, 3);
  CHECK_THROWS_AS(purity(not_square), std::invalid_argument);
  Vector wrong_dim(3);
  wrong_dim << 1, 0, 0;
  CHECK_THROWS_AS(fidelity(mixed, wrong_dim), std::invalid_argument);
}

TEST_CASE("bures length inverts the fidelity on its whole range", "[metrics]") {
  for (double f : {0.0, 0.1, 0.5, 0.9, 1.0}) {
    const double ell = bures_length(f);
    CHECK(std::cos(ell) * std::cos(ell) == Catch::Approx(f).margin(1e-12));
  }
  CHECK(bures_length(1.0) == Catch::Approx(0.0).margin(1e-12));
  CHECK(bures_length(0.0) == Catch::Approx(M_PI / 2).epsilon(1e-12));
  CHECK_THROWS_AS(bures_length(1.5), std::invalid_argument);
}

TEST_CASE("trace distance separates orthogonal states", "[metrics]") {
  Vector up(2), down(2);
  up << 1, 0;
  down << 0, 1;
  const Matrix a = up * up.adjoint();
  const Matrix b = down * down.adjoint();
  CHECK(trace_distance(a, b) == Catch::Approx(1.0));
  CHECK(trace_distance(a, a) == Catch::Approx(0.0).margin(1e-14));
  CHECK(trace_distance(a, identity(2) / 2.0) == Catch::Approx(0.5));
}

TEST_CASE("the seminorm is the spectral spread", "[metrics]") {
  CHECK(seminorm(pauli_z()) == Catch::Approx(2.0));
  Matrix d = Matrix::Zero(3, 3);
  d(0, 0) = 5.0;
  d(1, 1) = -1.0;
  d(2, 2) = 2.0;
  CHECK(seminorm(d) == Catch::Approx(6.0));
  Matrix non_herm = Matrix::Zero(2, 2);
  non_herm(0, 1) = 1.0;
  CHECK_THROWS_AS(seminorm(non_herm), std::invalid_argument);
}

TEST_CASE("variance vanishes on eigenstates and is bounded by the spread",
          "[metrics]") {
  Vector up(2), plus(2);
  up << 1, 0;
  plus << M_SQRT1_2, M_SQRT1_2;
  CHECK(variance(pauli_z(), up) == Catch::Approx(0.0).margin(1e-14));
  CHECK(variance(pauli_z(), plus) == Catch::Approx(1.0));

  for (int dim : {4, 8}) {
    const Matrix op = random_hermitian(dim, 300 + dim);
    const Vector psi = random_state(dim, 400 + dim);
    const double v = variance(op, psi);
    const double bound = seminorm(op);
    CHECK(v >= 0.0);
    CHECK(v <= bound * bound / 4.0 + 1e-12);
    const Matrix rho = psi * psi.adjoint();
    CHECK(variance(op, rho) == Catch::Approx(v).margin(1e-10));
  }
}

TEST_CASE("short-time fits recover an exactly linear decay", "[metrics]") {
  const double slope = 0.37;
  RealVector ts(8), fs(8);
  for (int i = 0; i < 8; ++i) {
    ts[i] = 0.01 * (i + 1);
    fs[i] = 1.0 - slope * ts[i];
  }
  const auto fit = short_time_fit(ts, fs);
  CHECK(fit.slope == Catch::Approx(slope).epsilon(1e-12));
  CHECK(fit.tau == Catch::Approx(1.0 / slope).epsilon(1e-12));

  RealVector few_t(4), few_f(4);
  for (int i = 0; i < 4; ++i) {
    few_t[i] = 0.01 * (i + 1);
    few_f[i] = 1.0;
  }
  CHECK_THROWS_WITH(short_time_fit(few_t, few_f),
                    Catch::Matchers::ContainsSubstring("window too coarse"));

  RealVector bad_t(5), bad_f(5);
  bad_t << 0.1, 0.2, 0.2, 0.3, 0.4;
  bad_f.setOnes();
  CHECK_THROWS_AS(short_time_fit(bad_t, bad_f), std::invalid_argument);
}

TEST_CASE("a noiseless flat curve fits to zero slope", "[metrics]") {
  // Uncoupled spins without noise: the fidelity stays at one.
  const auto spectra =
      ising::build_spectra(models::ising_power_law(3, 0.0, 0.0, 0.0));
  const Vector psi = ising::product_plus_state(3);
  RealVector ts(6);
  for (int i = 0; i < 6; ++i) ts[i] = 0.01 * (i + 1);
  const RealVector fs = ising::fidelity_curve(spectra, psi, 0.0, ts);
  const auto fit = short_time_fit(ts, fs);
  CHECK(std::abs(fit.slope) < 1e-9);
  // Rounding can leave a denormal-scale positive slope, so the decay time
  // is either infinite or astronomically large.
  CHECK(fit.tau > 1e9);
}

TEST_CASE("the initial decay rate is gamma times the coupling variance",
          "[metrics]") {
  // Plain collective dephasing (no couplings, so no phase curvature): fit on
  // a window well inside the decay.
  const int n = 4;
  const double gamma = 0.2;
  const auto spec = models::ising_power_law(n, 0.0, 0.0, 0.0);
  const auto spectra = ising::build_spectra(spec);
  const auto ops = models::build_ising(spec);
  const Vector psi = ising::product_plus_state(n);
  const double var = variance(ops.lindblad, psi);
  CHECK(var == Catch::Approx(double(ising::binomial(n, 2))).epsilon(1e-12));

  const double tau = 1.0 / (gamma * var);
  RealVector ts(20);
  for (int i = 0; i < 20; ++i) ts[i] = 0.002 * tau * (i + 1) / 20.0;
  const RealVector fs = ising::fidelity_curve(spectra, psi, gamma, ts);
  const auto fit = short_time_fit(ts, fs);
  CHECK(fit.slope == Catch::Approx(gamma * var).epsilon(0.01));

  // The two-branch state decays at exactly gamma ||L||^2 / 4.
  const Vector md = ising::max_decoherence_state(n);
  const double md_var = variance(ops.lindblad, md);
  const double spread = seminorm(ops.lindblad);
  CHECK(md_var == Catch::Approx(spread * spread / 4.0).epsilon(1e-12));
  const double md_tau = 1.0 / (gamma * md_var);
  RealVector mts(20);
  for (int i = 0; i < 20; ++i) mts[i] = 0.006 * md_tau * (i + 1) / 20.0;
  const RealVector mfs = ising::fidelity_curve(spectra, md, gamma, mts);
  const auto md_fit = short_time_fit(mts, mfs);
  CHECK(md_fit.slope == Catch::Approx(gamma * spread * spread / 4.0).epsilon(0.01));
}

TEST_CASE("decoherence reports order their three time scales", "[metrics]") {
  const int n = 4;
  const double gamma = 0.2;
  const auto spec = models::ising_power_law(n, 0.0, 0.0, 0.0);
  const auto spectra = ising::build_spectra(spec);
  const auto ops = models::build_ising(spec);

  // Product state: the variance estimate sits well above the seminorm bound,
  // and the fixed 5% fit window carries a few-percent curvature bias.
  const Vector psi = ising::product_plus_state(n);
  const ChannelMoments cm = channel_moments(gamma, ops.lindblad, psi);
  CHECK(cm.variance == Catch::Approx(6.0).epsilon(1e-12));
  CHECK(cm.sq_seminorm == Catch::Approx(64.0).epsilon(1e-12));

  const double tau_var = 1.0 / (gamma * cm.variance);
  RealVector ts(400);
  for (int i = 0; i < 400; ++i) ts[i] = tau_var * 0.2 * (i + 1) / 400.0;
  const RealVector fs = ising::fidelity_curve(spectra, psi, gamma, ts);
  const auto rep = make_decoherence_report({cm}, ts, fs);

  CHECK(rep.tau_variance == Catch::Approx(tau_var).epsilon(1e-12));
  CHECK(rep.tau_bound == Catch::Approx(4.0 / (gamma * 64.0)).epsilon(1e-12));
  CHECK(rep.tau_bound < rep.tau_variance);
  CHECK(rep.tau_fitted == Catch::Approx(tau_var).epsilon(0.10));
  CHECK(rep.samples_used >= 5);

  // Two-branch state: single decay rate, variance saturates the bound and the
  // fitted time lands within 5%.
  const Vector md = ising::max_decoherence_state(n);
  const ChannelMoments md_cm = channel_moments(gamma, ops.lindblad, md);
  CHECK(md_cm.variance == Catch::Approx(16.0).epsilon(1e-12));
  const double md_tau = 1.0 / (gamma * md_cm.variance);
  RealVector mts(400);
  for (int i = 0; i < 400; ++i) mts[i] = md_tau * 0.2 * (i + 1) / 400.0;
  const RealVector mfs = ising::fidelity_curve(spectra, md, gamma, mts);
  const auto md_rep = make_decoherence_report({md_cm}, mts, mfs);
  CHECK(md_rep.tau_bound == Catch::Approx(md_rep.tau_variance).epsilon(1e-12));
  CHECK(md_rep.tau_fitted == Catch::Approx(md_tau).epsilon(0.05));

  CHECK_THROWS_AS(make_decoherence_report({}, ts, fs), std::invalid_argument);
  ChannelMoments dead;
  dead.gamma = 0.0;
  dead.variance = 0.0;
  dead.sq_seminorm = 0.0;
  CHECK_THROWS_WITH(make_decoherence_report({dead}, ts, fs),
                    Catch::Matchers::ContainsSubstring("zero decoherence rate"));
}

TEST_CASE("z-string eigenvalues match the dense operators", "[metrics]") {
  // k = 1 counts the magnetization, k = 2 the pair coupling eigenvalue.
  for (int p = 0; p <= 5; ++p) {
    CHECK(zstring_eigenvalue(5, 1, p) == Catch::Approx(5.0 - 2.0 * p));
    CHECK(zstring_eigenvalue(5, 2, p) ==
          Catch::Approx(ising::lindblad_eigenvalue(5, p)));
  }
  CHECK(zstring_eigenvalue(4, 4, 0) == 1.0);
  CHECK(zstring_eigenvalue(4, 4, 1) == -1.0);
}

TEST_CASE("k-body variances have closed combinatorial forms", "[metrics]") {
  for (int n : {4, 6, 10}) {
    for (int k : {1, 2, 3}) {
      CHECK(kbody_variance(n, k, StateFamily::product_plus) ==
            Catch::Approx(double(ising::binomial(n, k))).epsilon(1e-12));
    }
  }
  // Cross-check both families against dense operators at small n.
  for (int n : {5, 6}) {
    for (int k : {1, 2, 3}) {
      const Matrix l = models::build_kbody(n, k);
      const double vp = variance(l, ising::product_plus_state(n));
      const double vm = variance(l, ising::max_decoherence_state(n));
      INFO("n " << n << " k " << k);
      CHECK(kbody_variance(n, k, StateFamily::product_plus) ==
            Catch::Approx(vp).epsilon(1e-10));
      CHECK(kbody_variance(n, k, StateFamily::max_decoherence) ==
            Catch::Approx(vm).epsilon(1e-10));
    }
  }
  CHECK_THROWS_AS(kbody_variance(1, 1, StateFamily::product_plus),
                  std::invalid_argument);
}

TEST_CASE("scaling studies recover known exponents", "[metrics]") {
  const std::vector<int> sizes{6, 8, 10, 12};

  // Magnetization noise on the product state: variance N, slope exactly 1.
  const auto lin = scaling_study(1, sizes, StateFamily::product_plus, 0.5);
  CHECK(lin.slope == Catch::Approx(1.0).margin(1e-9));

  // Pair coupling on the two-branch state: variance N^4/16, slope exactly 4.
  const auto quart = scaling_study(2, sizes, StateFamily::max_decoherence, 0.2);
  CHECK(quart.slope == Catch::Approx(4.0).margin(1e-9));

  // Pair coupling on the product state: variance C(N,2), approximately
  // quadratic on this grid; the exact log-log slope is 2.138026.
  const auto quad = scaling_study(2, sizes, StateFamily::product_plus, 0.2);
  CHECK(quad.slope > 1.9);
  CHECK(quad.slope < 2.2);
  CHECK(quad.slope == Catch::Approx(2.138025866372576).margin(1e-9));

  CHECK(quart.rates.size() == 4);
  CHECK(quart.rates[0] == Catch::Approx(0.2 * std::pow(6.0, 4) / 16.0));

  CHECK_THROWS_AS(scaling_study(2, {4, 6}, StateFamily::product_plus, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(scaling_study(2, sizes, StateFamily::product_plus, 0.0),
                  std::invalid_argument);
}
