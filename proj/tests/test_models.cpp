#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <noisim/metrics.hpp>
#include <noisim/models.hpp>

#include "helpers.hpp"

using namespace noisim;
using namespace noisim::models;
using testutil::expm_minus_i;
using testutil::max_abs_diff;

TEST_CASE("two-spin ising operators match the explicit kronecker form",
          "[models]") {
  IsingSpec spec = ising_power_law(2, 1.3, 0.0, 0.4);
  const auto ops = build_ising(spec);
  const Matrix zz = kron(pauli_z(), pauli_z());
  const Matrix hx =
      kron(pauli_x(), identity(2)) + kron(identity(2), pauli_x());
  CHECK(max_abs_diff(ops.h_target, -1.3 * zz - 0.4 * hx) < 1e-14);
  CHECK(max_abs_diff(ops.lindblad, zz) < 1e-14);
}

TEST_CASE("three-spin uniform ising diagonals follow pair counting",
          "[models]") {
  const auto ops = build_ising(ising_power_law(3, 1.0, 0.0, 0.0));
  // Aligned configurations have all three pairs agreeing; a single flipped
  // spin leaves one agreeing pair against two disagreeing ones.
  RealVector e_expected(8), l_expected(8);
  e_expected << -3, 1, 1, 1, 1, 1, 1, -3;
  l_expected << 3, -1, -1, -1, -1, -1, -1, 3;
  CHECK((ops.h_target.diagonal().real() - e_expected).cwiseAbs().maxCoeff() <
        1e-14);
  CHECK((ops.lindblad.diagonal().real() - l_expected).cwiseAbs().maxCoeff() <
        1e-14);
  CHECK(ops.h_target.cwiseAbs().sum() == Catch::Approx(12.0));  // diagonal
}

TEST_CASE("power-law couplings decay with distance", "[models]") {
  const IsingSpec spec = ising_power_law(4, 2.0, 3.0, 0.0);
  CHECK(spec.couplings(0, 1) == Catch::Approx(2.0));
  CHECK(spec.couplings(0, 2) == Catch::Approx(2.0 / 8.0));
  CHECK(spec.couplings(0, 3) == Catch::Approx(2.0 / 27.0));
  CHECK(spec.couplings(1, 3) == Catch::Approx(2.0 / 8.0));
  CHECK(spec.couplings(2, 1) == spec.couplings(1, 2));
  CHECK(spec.couplings(1, 1) == 0.0);

  const IsingSpec flat = ising_power_law(3, 5.0, 0.0, 0.0);
  CHECK(flat.couplings(0, 2) == Catch::Approx(5.0));
}

TEST_CASE("ising specs validate their couplings", "[models]") {
  IsingSpec spec = ising_power_law(3, 1.0, 1.0, 0.0);
  CHECK_NOTHROW(spec.validate());

  IsingSpec asym = spec;
  asym.couplings(0, 1) += 0.5;
  CHECK_THROWS_AS(asym.validate(), std::invalid_argument);

  IsingSpec diag = spec;
  diag.couplings(1, 1) = 1.0;
  CHECK_THROWS_AS(diag.validate(), std::invalid_argument);

  CHECK_THROWS_AS(ising_power_law(1, 1.0, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ising_power_law(15, 1.0, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("bose-hubbard operators conserve particle number", "[models]") {
  BoseHubbardSpec spec;
  spec.n_sites = 2;
  spec.n_max = 2;
  spec.hopping = 0.7;
  spec.interaction = 1.1;
  const auto ops = build_bose_hubbard(spec);
  REQUIRE(ops.h_target.rows() == 9);
  CHECK(is_hermitian(ops.h_target));
  CHECK(is_hermitian(ops.lindblad));
  CHECK(max_abs_diff(commutator(ops.h_target, ops.n_total),
                     Matrix::Zero(9, 9)) < 1e-12);

  // <1,0| H |0,1> = -J for a single particle hopping between the sites.
  const long long i10 = fock_index({1, 0}, 2);
  const long long i01 = fock_index({0, 1}, 2);
  CHECK(std::abs(ops.h_target(i10, i01) - Complex(-0.7)) < 1e-14);

  // |2,0>: interaction energy U/2 * 2 * 1, collision operator n(n-1) = 2.
  const long long i20 = fock_index({2, 0}, 2);
  CHECK(std::abs(ops.h_target(i20, i20) - Complex(1.1)) < 1e-14);
  CHECK(std::abs(ops.lindblad(i20, i20) - Complex(2.0)) < 1e-14);
  CHECK(std::abs(ops.n_total(i20, i20) - Complex(2.0)) < 1e-14);

  CHECK(fock_index({2, 0}, 3) == 8);
  CHECK_THROWS_AS(fock_index({3, 0}, 2), std::invalid_argument);
}

TEST_CASE("bose-hubbard specs validate their budget", "[models]") {
  BoseHubbardSpec spec;
  spec.n_sites = 0;
  spec.n_max = 2;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.n_sites = 16;
  spec.n_max = 9;  // 10^16 states: far over the dense budget
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("pairwise z strings reproduce the ising coupling operator",
          "[models]") {
  const Matrix from_kbody = build_kbody(3, 2);
  const auto ising = build_ising(ising_power_law(3, 1.0, 0.0, 0.0));
  CHECK(max_abs_diff(from_kbody, ising.lindblad) < 1e-14);
}

TEST_CASE("k-body operator eigenvalues follow the sector formula", "[models]") {
  const int n = 5;
  for (int k : {1, 2, 3}) {
    const Matrix l = build_kbody(n, k);
    for (long long idx = 0; idx < (1LL << n); ++idx) {
      int down = 0;
      for (int s = 0; s < n; ++s)
        if (config_sign(n, idx, s) < 0) ++down;
      const double expected = metrics::zstring_eigenvalue(n, k, down);
      INFO("k " << k << " index " << idx);
      CHECK(std::abs(l(idx, idx) - Complex(expected)) < 1e-12);
    }
  }
  CHECK_THROWS_AS(build_kbody(3, 4), std::invalid_argument);
  CHECK_THROWS_AS(build_kbody(3, 2, identity(2)), std::invalid_argument);
}

TEST_CASE("ms gates are unitary and invert cleanly", "[models]") {
  for (int k : {1, 2, 3}) {
    const Matrix u = ms_gate(0.9, 0.3, k);
    const long long dim = 1LL << k;
    CHECK(max_abs_diff(u.adjoint() * u, identity(dim)) < 1e-12);
    CHECK(max_abs_diff(ms_gate(-0.9, 0.3, k) * u, identity(dim)) < 1e-12);
  }
  // One spin: S_phi^2 = I, so the gate is a global phase e^{-i theta/4}.
  const Matrix u1 = ms_gate(0.8, 0.0, 1);
  CHECK(max_abs_diff(u1, std::exp(Complex(0, -0.2)) * identity(2)) < 1e-13);
  CHECK_THROWS_AS(ms_gate(1.0, 0.0, 8), std::invalid_argument);
}

TEST_CASE("digital sandwich equals the k-body exponential", "[models]") {
  for (int k : {1, 3, 5, 7}) {
    for (double gt : {0.3, 1.1}) {
      const Matrix digital = kbody_exponential_digital(1.0, gt, k);
      const Matrix direct = (k <= 3)
                                ? expm_minus_i(zx_string(k), gt)
                                : hermitian_exp(zx_string(k), gt);
      INFO("k " << k << " gt " << gt);
      CHECK(max_abs_diff(digital, direct) < 1e-12);
    }
  }
  CHECK_THROWS_AS(kbody_exponential_digital(1.0, 0.5, 2), std::invalid_argument);
  CHECK_THROWS_AS(kbody_exponential_digital(1.0, 0.5, 4), std::invalid_argument);
}

TEST_CASE("digital step unitary matches the synthesized exponential",
          "[models]") {
  const auto d = make_digital_kbody(3, 0.8);
  CHECK(max_abs_diff(d.h_target, 0.8 * zx_string(3)) < 1e-14);
  for (double theta : {0.05, 0.4}) {
    CHECK(max_abs_diff(d.step_unitary(theta),
                       kbody_exponential_digital(1.0, theta, 3)) < 1e-12);
  }
  CHECK_THROWS_AS(make_digital_kbody(4, 1.0), std::invalid_argument);
}

TEST_CASE("trotter products are exact for commuting terms", "[models]") {
  const Matrix z0 = kron(pauli_z(), identity(2));
  const Matrix z1 = kron(identity(2), pauli_z());
  const Matrix exact = hermitian_exp(z0 + z1, 0.9);
  CHECK(max_abs_diff(trotter_evolve({z0, z1}, 0.9, 1), exact) < 1e-12);
  CHECK(max_abs_diff(trotter_evolve({z0, z1}, 0.9, 5), exact) < 1e-12);
}

TEST_CASE("first-order trotter error scales with the step count", "[models]") {
  // Three spins, non-commuting split: pair couplings against a transverse
  // field. The first-order product error is O(t^2 / M).
  const auto ops = build_ising(ising_power_law(3, 1.0, 1.0, 0.0));
  Matrix field = Matrix::Zero(8, 8);
  const std::vector<int> dims(3, 2);
  for (int i = 0; i < 3; ++i) field += embed(pauli_x(), {i}, dims);
  field *= 0.7;

  const double t = 1.0;
  const Matrix exact = hermitian_exp(ops.h_target + field, t);
  const double err_m = max_abs_diff(trotter_evolve({ops.h_target, field}, t, 20), exact);
  const double err_10m =
      max_abs_diff(trotter_evolve({ops.h_target, field}, t, 200), exact);
  const double ratio = err_m / err_10m;
  CHECK(ratio > 8.0);
  CHECK(ratio < 12.0);
}
