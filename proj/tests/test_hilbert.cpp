#include <catch2/catch_amalgamated.hpp>

#include "qscope/hilbert.hpp"
#include "qscope/noise.hpp"

using namespace qscope;

TEST_CASE("harmonic oscillator ladder spectrum") {
  auto basis = TruncatedBasis::ho(2);
  auto ops = build_ho_operators(basis, 1.0);
  REQUIRE(ops.H_sys.entries(0, 0).real() == Catch::Approx(0.5));
  REQUIRE(ops.H_sys.entries(1, 1).real() == Catch::Approx(1.5));
  REQUIRE(std::abs(ops.H_sys.entries(0, 1)) == 0.0);
}

TEST_CASE("ground state has zero mean position") {
  auto basis = TruncatedBasis::ho(12);
  auto ops = build_ho_operators(basis, 1.0);
  auto rho = fock_state(basis, 0);
  REQUIRE(std::abs(expectation(ops.z_op, rho)) < 1e-14);
}

TEST_CASE("canonical commutator on the untruncated block") {
  auto basis = TruncatedBasis::ho(30);
  auto ops = build_ho_operators(basis, 1.0);
  Eigen::MatrixXcd comm = ops.z_op.entries * ops.p_op.entries -
                          ops.p_op.entries * ops.z_op.entries;
  Eigen::MatrixXcd expect = im * Eigen::MatrixXcd::Identity(30, 30);
  REQUIRE((comm - expect).topLeftCorner(25, 25).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("H_sys rebuilt from z and p on the lower block") {
  auto basis = TruncatedBasis::ho(30);
  const double omega = 1.0;
  auto ops = build_ho_operators(basis, omega);
  // m = 1/omega in l0 = 1 units
  const double mass = 1.0 / omega;
  Eigen::MatrixXcd H = ops.p_op.entries * ops.p_op.entries / (2.0 * mass) +
                       0.5 * mass * omega * omega * ops.z_op.entries *
                           ops.z_op.entries;
  REQUIRE((H - ops.H_sys.entries).topLeftCorner(25, 25).cwiseAbs().maxCoeff() <
          1e-8);
}

TEST_CASE("invalid dimensions rejected") {
  REQUIRE_THROWS_AS(TruncatedBasis::ho(1), InvalidBasisError);
  REQUIRE_THROWS_AS(TruncatedBasis::fock(0), InvalidBasisError);
}

TEST_CASE("matrix elements of constant function give the identity") {
  auto basis = TruncatedBasis::ho(10);
  auto f = matrix_elements_of_function([](double) { return 1.0; }, basis);
  REQUIRE((f.entries - Eigen::MatrixXcd::Identity(10, 10)).cwiseAbs().maxCoeff() <
          1e-10);
}

TEST_CASE("parity selection rule for even functions") {
  auto basis = TruncatedBasis::ho(12);
  auto f = matrix_elements_of_function(
      [](double z) { return std::exp(-z * z); }, basis);
  for (int m = 0; m < 12; ++m)
    for (int n = 0; n < 12; ++n)
      if ((m + n) % 2 == 1) REQUIRE(std::abs(f.entries(m, n)) < 1e-12);
}

TEST_CASE("Gaussian f00 matches a trapezoid-rule oracle") {
  const double sigma = 0.3;
  auto basis = TruncatedBasis::ho(16);
  auto gauss = [&](double z) { return std::exp(-z * z / (2.0 * sigma * sigma)); };
  auto f = matrix_elements_of_function(gauss, basis);
  // oracle: fine trapezoid over |z| < 10
  const int N = 400001;
  const double lo = -10.0, hi = 10.0, h = (hi - lo) / (N - 1);
  double integral = 0.0;
  for (int i = 0; i < N; ++i) {
    const double z = lo + i * h;
    const double psi0 = std::pow(pi, -0.25) * std::exp(-0.5 * z * z);
    const double w = (i == 0 || i == N - 1) ? 0.5 : 1.0;
    integral += w * h * psi0 * psi0 * gauss(z);
  }
  REQUIRE(f.entries(0, 0).real() == Catch::Approx(integral).epsilon(1e-8));
}

TEST_CASE("insufficient quadrature order raises an accuracy error") {
  auto basis = TruncatedBasis::ho(10);
  REQUIRE_THROWS_AS(matrix_elements_of_function(
                        [](double z) { return std::exp(-z * z); }, basis, 5),
                    AccuracyError);
}

TEST_CASE("quadrature output is exactly Hermitian") {
  auto basis = TruncatedBasis::ho(14);
  auto f = matrix_elements_of_function(
      [](double z) { return std::cos(3.0 * z) + 0.2 * z; }, basis);
  REQUIRE((f.entries - f.entries.adjoint()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(f.hermitian_hint);
}

TEST_CASE("coherent state mean occupation") {
  auto basis = TruncatedBasis::fock(30);
  auto rho = coherent_state(basis, 2.0);
  Eigen::MatrixXcd a = annihilation(30);
  OperatorMatrix n_op{basis, (a.adjoint() * a).eval(), true};
  REQUIRE(expectation(n_op, rho).real() == Catch::Approx(4.0).margin(1e-6));
  REQUIRE(purity(rho) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("trace one for any valid state") {
  auto basis = TruncatedBasis::ho(20);
  auto rho = thermal_state(basis, 0.6);
  REQUIRE(expectation(identity_op(basis), rho).real() ==
          Catch::Approx(1.0).margin(1e-12));
  REQUIRE(expectation(build_ho_operators(basis, 1.0).H_sys,
                      fock_state(basis, 0))
              .real() == Catch::Approx(0.5));
}

TEST_CASE("thermal state purity matches the geometric closed form") {
  const double n_th = 0.6;
  const int d = 20;
  auto rho = thermal_state(TruncatedBasis::ho(d), n_th);
  const double q = n_th / (1.0 + n_th);
  double norm = 0.0, sum_sq = 0.0;
  for (int n = 0; n < d; ++n) norm += std::pow(q, n);
  for (int n = 0; n < d; ++n) sum_sq += std::pow(std::pow(q, n) / norm, 2);
  REQUIRE(purity(rho) == Catch::Approx(sum_sq).margin(1e-6));
}

TEST_CASE("purity extremes") {
  auto basis = TruncatedBasis::ho(8);
  REQUIRE(purity(fock_state(basis, 3)) == Catch::Approx(1.0));
  DensityMatrix mixed{basis, Eigen::MatrixXcd::Identity(8, 8) / 8.0, 0.0};
  REQUIRE(purity(mixed) == Catch::Approx(1.0 / 8.0));
}

TEST_CASE("expectation is linear in both arguments") {
  auto basis = TruncatedBasis::ho(10);
  NoiseSource rng(11, 0);
  Eigen::MatrixXcd A(10, 10), B(10, 10);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      A(i, j) = complex(rng.gaussian(), rng.gaussian());
      B(i, j) = complex(rng.gaussian(), rng.gaussian());
    }
  A = (A + A.adjoint()).eval();
  B = (B + B.adjoint()).eval();
  OperatorMatrix opA{basis, A, true}, opB{basis, B, true};
  Eigen::MatrixXcd sum = 0.3 * A + 0.7 * B;
  OperatorMatrix opSum{basis, sum, true};
  auto rho1 = thermal_state(basis, 0.5);
  auto rho2 = fock_state(basis, 2);
  DensityMatrix mix{basis, 0.4 * rho1.entries + 0.6 * rho2.entries, 0.0};
  REQUIRE(expectation(opSum, rho1).real() ==
          Catch::Approx(0.3 * expectation(opA, rho1).real() +
                        0.7 * expectation(opB, rho1).real()));
  REQUIRE(expectation(opA, mix).real() ==
          Catch::Approx(0.4 * expectation(opA, rho1).real() +
                        0.6 * expectation(opA, rho2).real()));
}

TEST_CASE("basis mismatch is rejected") {
  auto rho = fock_state(TruncatedBasis::ho(8), 0);
  auto op = identity_op(TruncatedBasis::ho(10));
  REQUIRE_THROWS_AS(expectation(op, rho), BasisMismatchError);
}

TEST_CASE("tensor product dimensions and structure") {
  auto a = TruncatedBasis::ho(3);
  auto b = TruncatedBasis::fock(4);
  auto prod = TruncatedBasis::product(a, b);
  REQUIRE(prod.dimension == 12);
  auto op = tensor(identity_op(a), identity_op(b));
  REQUIRE(op.basis == prod);
  REQUIRE((op.entries - Eigen::MatrixXcd::Identity(12, 12)).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("density-matrix checks catch violations") {
  auto basis = TruncatedBasis::ho(6);
  DensityMatrix bad{basis, 2.0 * Eigen::MatrixXcd::Identity(6, 6), 0.0};
  REQUIRE_THROWS(check_density_matrix(bad));
  Eigen::MatrixXcd neg = Eigen::MatrixXcd::Zero(6, 6);
  neg(0, 0) = 1.5;
  neg(1, 1) = -0.5;
  DensityMatrix negative{basis, neg, 0.0};
  REQUIRE_THROWS_AS(check_density_matrix(negative), PositivityError);
  REQUIRE_NOTHROW(check_density_matrix(thermal_state(basis, 0.3)));
}

TEST_CASE("Gauss-Hermite rule integrates monomials exactly") {
  auto rule = gauss_hermite(12);
  // integral z^2 exp(-z^2) dz = sqrt(pi)/2 via total weights against exp(-x^2)
  double val = 0.0;
  for (int i = 0; i < 12; ++i)
    val += rule.total_weights(i) * rule.nodes(i) * rule.nodes(i) *
           std::exp(-rule.nodes(i) * rule.nodes(i));
  REQUIRE(val == Catch::Approx(0.5 * std::sqrt(pi)).epsilon(1e-12));
}

TEST_CASE("hermite functions are orthonormal under the quadrature") {
  const int d = 8;
  auto rule = gauss_hermite(4 * d);
  // total_weights carry exp(x^2) while the h products carry exp(-x^2)
  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < rule.nodes.size(); ++i) {
    Eigen::VectorXd h = hermite_functions(d - 1, rule.nodes(i));
    overlap += rule.total_weights(i) * (h * h.transpose());
  }
  REQUIRE((overlap - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() <
          1e-12);
}
