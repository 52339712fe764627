#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "qscope/common.hpp"

namespace qscope {

enum class BasisKind { harmonic_oscillator, cavity_fock, tensor_product };

/// Truncated single-mode or product basis. length_scale is l0 = sqrt(hbar/m w)
/// for the harmonic oscillator (dimensionless, default 1).
struct TruncatedBasis {
  BasisKind kind = BasisKind::harmonic_oscillator;
  int dimension = 0;
  double length_scale = 1.0;
  std::vector<int> factor_dims;  // tensor_product only

  static TruncatedBasis ho(int dim, double l0 = 1.0) {
    check_dim(dim);
    return {BasisKind::harmonic_oscillator, dim, l0, {}};
  }
  static TruncatedBasis fock(int dim) {
    check_dim(dim);
    return {BasisKind::cavity_fock, dim, 1.0, {}};
  }
  static TruncatedBasis product(const TruncatedBasis& a,
                                const TruncatedBasis& b) {
    return {BasisKind::tensor_product, a.dimension * b.dimension,
            a.length_scale, {a.dimension, b.dimension}};
  }

  bool operator==(const TruncatedBasis& o) const {
    return kind == o.kind && dimension == o.dimension &&
           factor_dims == o.factor_dims;
  }
  bool operator!=(const TruncatedBasis& o) const { return !(*this == o); }

 private:
  static void check_dim(int dim) {
    if (dim < 2) throw InvalidBasisError("basis dimension must be >= 2");
  }
};

struct OperatorMatrix {
  TruncatedBasis basis;
  Eigen::MatrixXcd entries;
  bool hermitian_hint = false;
};

struct DensityMatrix {
  TruncatedBasis basis;
  Eigen::MatrixXcd entries;
  double time = 0.0;
};

/// Uniform real-space grid holding <z|n> style samples.
struct WaveFunctionGrid {
  Eigen::VectorXd points;
  Eigen::VectorXd values;
  double spacing = 0.0;
};

inline void require_same_basis(const TruncatedBasis& a,
                               const TruncatedBasis& b) {
  if (a != b) throw BasisMismatchError("operands live on different bases");
}

// ---------------------------------------------------------------------------
// Elementary operators

inline Eigen::MatrixXcd annihilation(int dim) {
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(double(n));
  return a;
}

struct HoOperators {
  OperatorMatrix H_sys;
  OperatorMatrix z_op;
  OperatorMatrix p_op;
};

/// H = w(n + 1/2), z = (l0/sqrt2)(a + a+), p = i/(l0 sqrt2)(a+ - a).
inline HoOperators build_ho_operators(const TruncatedBasis& basis,
                                      double omega) {
  if (basis.kind != BasisKind::harmonic_oscillator)
    throw InvalidBasisError("build_ho_operators needs a HO basis");
  if (basis.dimension < 2) throw InvalidBasisError("dimension < 2");
  if (omega <= 0) throw Error("omega must be positive");
  const int d = basis.dimension;
  const double l0 = basis.length_scale;
  Eigen::MatrixXcd a = annihilation(d);
  Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(d, d);
  for (int n = 0; n < d; ++n) H(n, n) = omega * (n + 0.5);
  Eigen::MatrixXcd z = (l0 / std::sqrt(2.0)) * (a + a.adjoint());
  Eigen::MatrixXcd p = im / (l0 * std::sqrt(2.0)) * (a.adjoint() - a);
  return {{basis, H, true}, {basis, z, true}, {basis, p, true}};
}

inline OperatorMatrix identity_op(const TruncatedBasis& basis) {
  return {basis, Eigen::MatrixXcd::Identity(basis.dimension, basis.dimension),
          true};
}

inline OperatorMatrix tensor(const OperatorMatrix& a, const OperatorMatrix& b) {
  const int da = a.basis.dimension, db = b.basis.dimension;
  Eigen::MatrixXcd out(da * db, da * db);
  for (int i = 0; i < da; ++i)
    for (int j = 0; j < da; ++j)
      out.block(i * db, j * db, db, db) = a.entries(i, j) * b.entries;
  return {TruncatedBasis::product(a.basis, b.basis), out,
          a.hermitian_hint && b.hermitian_hint};
}

inline DensityMatrix tensor(const DensityMatrix& a, const DensityMatrix& b) {
  OperatorMatrix oa{a.basis, a.entries, false}, ob{b.basis, b.entries, false};
  OperatorMatrix prod = tensor(oa, ob);
  return {prod.basis, prod.entries, a.time};
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (Golub-Welsch)

struct GaussHermiteRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd total_weights;  // w_i * exp(x_i^2)
};

/// Normalized Hermite functions h_0..h_{nmax}(x) by upward recurrence.
inline Eigen::VectorXd hermite_functions(int nmax, double x) {
  Eigen::VectorXd h(nmax + 1);
  h(0) = std::pow(pi, -0.25) * std::exp(-0.5 * x * x);
  if (nmax >= 1) h(1) = std::sqrt(2.0) * x * h(0);
  for (int n = 1; n < nmax; ++n)
    h(n + 1) = std::sqrt(2.0 / (n + 1)) * x * h(n) -
               std::sqrt(double(n) / (n + 1)) * h(n - 1);
  return h;
}

inline constexpr int max_quadrature_order = 600;

/// Nodes from the Jacobi matrix; weights from the closed form
/// w_i exp(x_i^2) = 1 / (n h_{n-1}(x_i)^2), which stays accurate at the tail
/// nodes where the Golub-Welsch first-eigenvector-component weights underflow.
inline GaussHermiteRule gauss_hermite(int order) {
  if (order < 1) throw Error("quadrature order must be positive");
  if (order > max_quadrature_order)
    throw Error("quadrature order above the stable limit " +
                std::to_string(max_quadrature_order));
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const double b = std::sqrt(k / 2.0);
    J(k - 1, k) = b;
    J(k, k - 1) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J,
                                                    Eigen::EigenvaluesOnly);
  GaussHermiteRule rule;
  rule.nodes = es.eigenvalues();
  rule.total_weights.resize(order);
  for (int i = 0; i < order; ++i) {
    const double hn1 = hermite_functions(order - 1, rule.nodes(i))(order - 1);
    rule.total_weights(i) = 1.0 / (order * hn1 * hn1);
  }
  return rule;
}

/// HO eigenfunction <z|n> for length scale l0.
inline double ho_eigenfunction(int n, double z, double l0 = 1.0) {
  return hermite_functions(n, z / l0)(n) / std::sqrt(l0);
}

namespace detail {

inline Eigen::MatrixXd gh_matrix_elements(
    const std::function<double(double)>& f, int dim, double l0, int order) {
  GaussHermiteRule rule = gauss_hermite(order);
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(dim, dim);
  for (int i = 0; i < order; ++i) {
    const double x = rule.nodes(i);
    const double w = rule.total_weights(i);
    const Eigen::VectorXd h = hermite_functions(dim - 1, x);
    const double fv = f(l0 * x);
    F.noalias() += (w * fv) * (h * h.transpose());
  }
  return F;
}

}  // namespace detail

namespace detail {

/// Compare against a higher-order rule; returns the refined matrix or throws.
inline Eigen::MatrixXd checked_gh_matrix_elements(
    const std::function<double(double)>& f, int d, double l0, int order,
    bool* converged = nullptr) {
  const int order2 = std::min(order + order / 2 + 8, max_quadrature_order);
  if (order2 <= order)
    throw Error("no refinement headroom above quadrature order " +
                std::to_string(order));
  Eigen::MatrixXd F = gh_matrix_elements(f, d, l0, order);
  Eigen::MatrixXd F2 = gh_matrix_elements(f, d, l0, order2);
  const double scale = std::max(1e-300, F2.cwiseAbs().maxCoeff());
  const double diff = (F - F2).cwiseAbs().maxCoeff();
  const bool ok = diff <= 1e-8 * scale;
  if (converged) {
    *converged = ok;
  } else if (!ok) {
    throw AccuracyError(
        "Gauss-Hermite quadrature not converged at the requested order: "
        "max element change " +
        std::to_string(diff / scale) + " (relative) on order refinement");
  }
  return F2;
}

/// Smallest order in the doubling sequence 4d, 8d, ... whose refinement check
/// passes; narrow profiles need many more nodes than smooth ones.
inline int converged_gh_order(const std::function<double(double)>& f, int d,
                              double l0) {
  // Leave room above the last candidate so the refinement check still has a
  // strictly higher order to compare against.
  const int top = max_quadrature_order - 40;
  int order = 4 * d;
  for (;;) {
    order = std::min(order, top);
    bool ok = false;
    checked_gh_matrix_elements(f, d, l0, order, &ok);
    if (ok) return order;
    if (order >= top) break;
    order *= 2;
  }
  throw AccuracyError(
      "Gauss-Hermite quadrature not converged below the stable order limit; "
      "the profile is too narrow for this basis");
}

/// A discrete rule for F_mn = sum_i w_i f(l0 x_i) h_m(x_i) h_n(x_i) in the
/// dimensionless coordinate x = z / l0.
struct QuadratureGrid {
  Eigen::VectorXd x;
  Eigen::VectorXd weights;
};

inline QuadratureGrid gh_grid(int order) {
  GaussHermiteRule rule = gauss_hermite(order);
  return {rule.nodes, rule.total_weights};
}

/// Uniform trapezoid grid covering the classically allowed region of the
/// highest basis state plus an evanescent margin.
inline QuadratureGrid trapezoid_grid(int dim, int n_points) {
  const double xmax = std::sqrt(2.0 * dim) + 8.0;
  QuadratureGrid g;
  g.x.setLinSpaced(n_points, -xmax, xmax);
  const double dx = 2.0 * xmax / (n_points - 1);
  g.weights.setConstant(n_points, dx);
  g.weights(0) = g.weights(n_points - 1) = 0.5 * dx;
  return g;
}

inline Eigen::MatrixXd grid_matrix_elements(
    const std::function<double(double)>& f, int dim, double l0,
    const QuadratureGrid& grid) {
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(dim, dim);
  for (int i = 0; i < grid.x.size(); ++i) {
    const double x = grid.x(i);
    const double fv = f(l0 * x);
    if (fv == 0.0) continue;
    const Eigen::VectorXd h = hermite_functions(dim - 1, x);
    F.noalias() += (grid.weights(i) * fv) * (h * h.transpose());
  }
  return F;
}

/// Gauss-Hermite escalation first; profiles too structured for the stable
/// GH order limit (e.g. periodic combs of narrow peaks) fall back to a
/// refinement-checked trapezoid rule.
inline QuadratureGrid converged_quadrature_grid(
    const std::function<double(double)>& f, int d, double l0) {
  try {
    return gh_grid(converged_gh_order(f, d, l0));
  } catch (const AccuracyError&) {
  }
  int n = 4096;
  Eigen::MatrixXd prev = grid_matrix_elements(f, d, l0, trapezoid_grid(d, n));
  while (n <= (1 << 21)) {
    n *= 2;
    QuadratureGrid g = trapezoid_grid(d, n);
    Eigen::MatrixXd cur = grid_matrix_elements(f, d, l0, g);
    const double scale = std::max(1e-300, cur.cwiseAbs().maxCoeff());
    if ((cur - prev).cwiseAbs().maxCoeff() <= 1e-8 * scale) return g;
    prev = std::move(cur);
  }
  throw AccuracyError(
      "quadrature not converged: neither Gauss-Hermite escalation nor "
      "trapezoid refinement reached 1e-8 relative agreement");
}

}  // namespace detail

/// f_{mn} = <m| f(z) |n> over HO eigenfunctions, via Gauss-Hermite
/// quadrature. The result is symmetrized, hence exactly Hermitian. An
/// explicit `quadrature_order` is cross-checked against a higher order and an
/// AccuracyError is raised if they disagree; the default order starts at
/// 4*dimension and escalates until the cross-check passes.
inline OperatorMatrix matrix_elements_of_function(
    const std::function<double(double)>& f, const TruncatedBasis& basis,
    int quadrature_order = 0) {
  if (basis.kind != BasisKind::harmonic_oscillator)
    throw InvalidBasisError("matrix_elements_of_function needs a HO basis");
  const int d = basis.dimension;
  const double l0 = basis.length_scale;
  Eigen::MatrixXd F2;
  if (quadrature_order > 0) {
    if (quadrature_order < 2 * d)
      throw AccuracyError("quadrature_order must be at least 2*dimension");
    F2 = detail::checked_gh_matrix_elements(f, d, l0, quadrature_order);
  } else {
    F2 = detail::grid_matrix_elements(f, d, l0,
                                      detail::converged_quadrature_grid(f, d, l0));
  }
  F2 = 0.5 * (F2 + F2.transpose().eval());
  return {basis, F2.cast<complex>(), true};
}

// ---------------------------------------------------------------------------
// Density matrix constructors and diagnostics

inline DensityMatrix fock_state(const TruncatedBasis& basis, int n) {
  if (n < 0 || n >= basis.dimension) throw Error("fock index out of range");
  Eigen::MatrixXcd rho =
      Eigen::MatrixXcd::Zero(basis.dimension, basis.dimension);
  rho(n, n) = 1.0;
  return {basis, rho, 0.0};
}

inline Eigen::VectorXcd coherent_amplitudes(int dim, complex alpha) {
  Eigen::VectorXcd psi(dim);
  psi(0) = std::exp(-0.5 * std::norm(alpha));
  for (int n = 1; n < dim; ++n) psi(n) = psi(n - 1) * alpha / std::sqrt(double(n));
  return psi;
}

inline DensityMatrix coherent_state(const TruncatedBasis& basis,
                                    complex alpha) {
  Eigen::VectorXcd psi = coherent_amplitudes(basis.dimension, alpha);
  psi /= psi.norm();  // absorb truncation loss
  return {basis, psi * psi.adjoint(), 0.0};
}

/// Truncated geometric (thermal) distribution with mean occupation n_th,
/// renormalized on the kept levels.
inline DensityMatrix thermal_state(const TruncatedBasis& basis, double n_th) {
  if (n_th < 0) throw Error("n_th must be >= 0");
  const int d = basis.dimension;
  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(d, d);
  if (n_th == 0) {
    rho(0, 0) = 1.0;
    return {basis, rho, 0.0};
  }
  const double q = n_th / (1.0 + n_th);
  double norm = 0.0;
  for (int n = 0; n < d; ++n) norm += std::pow(q, n);
  for (int n = 0; n < d; ++n) rho(n, n) = std::pow(q, n) / norm;
  return {basis, rho, 0.0};
}

inline complex expectation(const OperatorMatrix& O, const DensityMatrix& rho) {
  require_same_basis(O.basis, rho.basis);
  return (O.entries * rho.entries).trace();
}

inline double expectation_real(const OperatorMatrix& O,
                               const DensityMatrix& rho) {
  return expectation(O, rho).real();
}

inline double purity(const DensityMatrix& rho) {
  return (rho.entries * rho.entries).trace().real();
}

inline double hermiticity_defect(const Eigen::MatrixXcd& m) {
  const double scale = std::max(1e-300, m.cwiseAbs().maxCoeff());
  return (m - m.adjoint()).cwiseAbs().maxCoeff() / scale;
}

inline double min_eigenvalue(const DensityMatrix& rho) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho.entries);
  return es.eigenvalues().minCoeff();
}

/// Validity gates used by the integrators: trace one, Hermitian, positive up
/// to integrator error. Throws PositivityError when the eigenvalue floor is
/// crossed.
inline void check_density_matrix(const DensityMatrix& rho,
                                 double eig_floor = -1e-8) {
  const double tr = rho.entries.trace().real();
  if (std::abs(tr - 1.0) > 1e-8)
    throw Error("density matrix trace deviates from 1 by " +
                std::to_string(tr - 1.0));
  if (hermiticity_defect(rho.entries) > 1e-10)
    throw Error("density matrix is not Hermitian");
  const double lam = min_eigenvalue(rho);
  if (lam < eig_floor)
    throw PositivityError(
        "density matrix minimum eigenvalue " + std::to_string(lam) +
        " below tolerance; reduce the step size");
}

inline void check_hermitian_hint(OperatorMatrix& op) {
  const double scale = std::max(1e-300, op.entries.cwiseAbs().maxCoeff());
  op.hermitian_hint =
      (op.entries - op.entries.adjoint()).cwiseAbs().maxCoeff() <=
      1e-12 * scale;
}

}  // namespace qscope
