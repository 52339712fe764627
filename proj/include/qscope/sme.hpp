#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <vector>

#include "qscope/common.hpp"
#include "qscope/hilbert.hpp"
#include "qscope/noise.hpp"

namespace qscope {

struct CavityParams {
  double kappa = 1.0;   // cavity decay rate
  double delta = 0.0;   // cavity detuning
  double drive = 0.0;   // coherent drive amplitude E
  double phi = -0.5 * pi;  // homodyne angle

  void validate() const {
    if (kappa <= 0) throw ConfigError("kappa must be positive");
  }
};

struct MeasurementParams {
  double gamma = 0.0;              // effective measurement rate
  double coupling_amplitude = 0.0; // epsilon = (A E/hbar) sqrt(kappa/(kappa^2/4+delta^2))
  double omega = 1.0;              // trap frequency

  /// gamma = 4 eps^2 / kappa for the resonantly driven cavity.
  static MeasurementParams from_coupling(double coupling_amplitude,
                                         double kappa, double omega) {
    MeasurementParams m;
    m.coupling_amplitude = coupling_amplitude;
    m.gamma = 4.0 * coupling_amplitude * coupling_amplitude / kappa;
    m.omega = omega;
    return m;
  }
};

// ---------------------------------------------------------------------------
// Superoperators

/// Lindblad dissipator D[L] rho = L rho L+ - 1/2 {L+L, rho}
inline Eigen::MatrixXcd lindblad_D(const Eigen::MatrixXcd& L,
                                   const Eigen::MatrixXcd& rho) {
  Eigen::MatrixXcd LdL = L.adjoint() * L;
  return L * rho * L.adjoint() - 0.5 * (LdL * rho + rho * LdL);
}

/// Measurement superoperator H[L] rho = L rho + rho L+ - <L + L+> rho
inline Eigen::MatrixXcd measurement_H(const Eigen::MatrixXcd& L,
                                      const Eigen::MatrixXcd& rho) {
  Eigen::MatrixXcd out = L * rho + rho * L.adjoint();
  out -= out.trace() * rho;
  return out;
}

struct StepResult {
  DensityMatrix rho;
  double dW = 0.0;
  double trace_drift = 0.0;  // |Tr - 1| before renormalization
  double clip = 0.0;         // SRE only: total probability clipped at zero
};

namespace detail {

/// Hermitize and renormalize after a stepper update; reports the
/// pre-renormalization trace drift and enforces the step-size gate.
inline StepResult finalize_step(const TruncatedBasis& basis,
                                Eigen::MatrixXcd&& entries, double time,
                                double dW) {
  const double tr = entries.trace().real();
  const double drift = std::abs(tr - 1.0);
  if (drift > 1e-4)
    throw StepSizeError("pre-renormalization trace drift " +
                        std::to_string(drift) + " exceeds 1e-4");
  entries = 0.5 * (entries + entries.adjoint().eval());
  entries /= entries.trace().real();
  return {{basis, std::move(entries), time}, dW, drift, 0.0};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Full atom-cavity SME

/// Precomputed cavity operators on the atom (x) cavity product basis.
struct FullSmeWorkspace {
  TruncatedBasis basis;
  CavityParams cavity;
  Eigen::MatrixXcd c;        // I (x) annihilation
  Eigen::MatrixXcd H_c;      // drive + detuning
  Eigen::MatrixXcd c_phase;  // c e^{-i phi}

  FullSmeWorkspace(const TruncatedBasis& b, const CavityParams& cav)
      : basis(b), cavity(cav) {
    cav.validate();
    if (b.kind != BasisKind::tensor_product || b.factor_dims.size() != 2)
      throw InvalidBasisError("full SME needs an atom (x) cavity basis");
    const int da = b.factor_dims[0], dc = b.factor_dims[1];
    Eigen::MatrixXcd a = annihilation(dc);
    c = Eigen::MatrixXcd::Zero(da * dc, da * dc);
    for (int i = 0; i < da; ++i) c.block(i * dc, i * dc, dc, dc) = a;
    H_c = im * std::sqrt(cav.kappa) * cav.drive * (c - c.adjoint()) +
          cav.delta * (c.adjoint() * c);
    c_phase = std::exp(-im * cav.phi) * c;
  }
};

/// One step of the full atom-cavity SME. `H` carries the atom and
/// dispersive-coupling terms; the cavity drive and detuning are added from
/// the workspace.
///
/// The update is the normalized Kraus form of the homodyne conditional map,
///   rho' = M rho M+ / Tr,  M = 1 - (i H_tot + kappa c~+c~/2) dt
///                              + sqrt(kappa) e^{-i phi} c~ dW,
/// with c~ = c - <c> centered so the record-likelihood factor drops out of
/// the raw trace. Displacing the dissipator channel by <c> is compensated by
/// the Hamiltonian term kappa (<c> c+ - <c>* c)/(2i). The map agrees with
/// the Euler-Maruyama update to O(dt^{3/2}) but is completely positive and
/// normalized by construction.
inline StepResult step_full_sme(const DensityMatrix& rho,
                                const OperatorMatrix& H,
                                const FullSmeWorkspace& ws, double dt,
                                NoiseSource& noise) {
  require_same_basis(rho.basis, ws.basis);
  require_same_basis(rho.basis, H.basis);
  if (dt * ws.cavity.kappa > 0.05)
    throw StepSizeError("dt * kappa must be <= 0.05");
  const double dW = noise.wiener(dt);
  const double kappa = ws.cavity.kappa;
  const int d = rho.basis.dimension;
  const complex c_mean = (ws.c * rho.entries).trace();
  Eigen::MatrixXcd ct = ws.c;
  ct.diagonal().array() -= c_mean;
  Eigen::MatrixXcd Htot =
      H.entries + ws.H_c +
      (kappa / (2.0 * im)) *
          (c_mean * ws.c.adjoint() - std::conj(c_mean) * ws.c);
  Eigen::VectorXd Hdiag = Htot.diagonal().real();
  Htot.diagonal().setZero();
  Eigen::MatrixXcd M = Eigen::MatrixXcd::Identity(d, d);
  M -= (im * Htot + 0.5 * kappa * (ct.adjoint() * ct)) * dt;
  M += (std::sqrt(kappa) * std::exp(-im * ws.cavity.phi) * dW) * ct;
  // exact rotation by the diagonal part of the Hamiltonian
  for (int i = 0; i < d; ++i) M.row(i) *= std::exp(-im * Hdiag(i) * dt);
  Eigen::MatrixXcd sigma = M * rho.entries * M.adjoint();
  sigma /= sigma.trace().real();
  return detail::finalize_step(rho.basis, std::move(sigma), rho.time + dt, dW);
}

inline StepResult step_full_sme(const DensityMatrix& rho,
                                const OperatorMatrix& H,
                                const CavityParams& cavity, double dt,
                                NoiseSource& noise) {
  FullSmeWorkspace ws(rho.basis, cavity);
  return step_full_sme(rho, H, ws, dt, noise);
}

// ---------------------------------------------------------------------------
// Bad-cavity SME (cavity adiabatically eliminated)

/// One step of the eliminated SME
///   drho = -i[H_sys, rho] dt + gamma D[f] rho dt + sqrt(gamma) H[f] rho dW,
/// in the normalized Kraus form
///   rho' = M rho M / Tr,  M = 1 - (i H + gamma g^2 / 2) dt
///                             + sqrt(gamma) g dW,  g = f - <f>,
/// which matches Euler-Maruyama to O(dt^{3/2}) and is completely positive
/// and normalized by construction (D[f] = D[g] exactly for Hermitian f).
/// When `cavity` is supplied with nonzero detuning, the effective-Hamiltonian
/// correction  delta eps^2 f^2 / ((kappa/2)^2 + delta^2)  is included.
inline StepResult step_bad_cavity_sme(const DensityMatrix& rho,
                                      const OperatorMatrix& H_sys,
                                      const OperatorMatrix& f_op,
                                      const MeasurementParams& meas, double dt,
                                      NoiseSource& noise,
                                      const CavityParams* cavity = nullptr) {
  require_same_basis(rho.basis, H_sys.basis);
  require_same_basis(rho.basis, f_op.basis);
  if (dt * meas.gamma > 0.01 || dt * meas.omega > 0.01)
    throw StepSizeError("bad-cavity step needs dt*gamma <= 0.01 and "
                        "dt*omega <= 0.01");
  const double dW = noise.wiener(dt);
  Eigen::MatrixXcd H = H_sys.entries;
  if (cavity && cavity->delta != 0.0) {
    const double eps = meas.coupling_amplitude;
    const double denom = 0.25 * cavity->kappa * cavity->kappa +
                         cavity->delta * cavity->delta;
    H += (cavity->delta * eps * eps / denom) * (f_op.entries * f_op.entries);
  }
  // The diagonal part of H enters as an exact phase rotation so that
  // diagonal states under a diagonal Hamiltonian are exactly stationary.
  const int d = rho.basis.dimension;
  Eigen::MatrixXcd Hod = H;
  Hod.diagonal().setZero();
  Eigen::MatrixXcd M = Eigen::MatrixXcd::Identity(d, d);
  M -= im * dt * Hod;
  if (meas.gamma > 0.0) {
    const double f_mean = (f_op.entries * rho.entries).trace().real();
    Eigen::MatrixXcd g = f_op.entries;
    g.diagonal().array() -= f_mean;
    M -= (0.5 * meas.gamma * dt) * (g * g);
    M += (std::sqrt(meas.gamma) * dW) * g;
  }
  for (int i = 0; i < d; ++i)
    M.row(i) *= std::exp(-im * H.diagonal()(i).real() * dt);
  Eigen::MatrixXcd sigma = M * rho.entries * M.adjoint();
  sigma /= sigma.trace().real();
  return detail::finalize_step(rho.basis, std::move(sigma), rho.time + dt, dW);
}

// ---------------------------------------------------------------------------
// Sideband decomposition and the eQND projection

/// f^(l) = sum_n f_{n,n+l} |n><n+l|: the l-th diagonal of f in the energy
/// eigenbasis.
struct SidebandDecomposition {
  TruncatedBasis basis;
  std::map<int, Eigen::MatrixXcd> operators;
  double omega = 1.0;
};

inline SidebandDecomposition sideband_decompose(const OperatorMatrix& f_op,
                                                double omega) {
  const int d = f_op.basis.dimension;
  SidebandDecomposition out;
  out.basis = f_op.basis;
  out.omega = omega;
  for (int ell = -(d - 1); ell <= d - 1; ++ell) {
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(d, d);
    for (int n = 0; n < d; ++n) {
      const int np = n + ell;
      if (np >= 0 && np < d) m(n, np) = f_op.entries(n, np);
    }
    out.operators[ell] = std::move(m);
  }
  return out;
}

/// Energy-diagonal part of an observable: the emergent QND observable.
inline OperatorMatrix eqnd_projection(const OperatorMatrix& O) {
  Eigen::MatrixXcd m = O.entries.diagonal().asDiagonal();
  return {O.basis, m, O.hermitian_hint};
}

// ---------------------------------------------------------------------------
// Good-cavity SME

/// One step of the good-cavity SME
///   drho = -i[H_sys, rho] dt
///        + sum_{l != 0} gamma/(1+(2 w l/kappa)^2) D[f^(l)] rho dt
///        + gamma D[f^(0)] rho dt + sqrt(gamma) H[f^(0)] rho dW.
///
/// H_sys must be diagonal (energy eigenbasis, as the sidebands assume); the
/// unitary part is applied as an exact phase rotation so that the step size
/// is limited by gamma rather than omega, and the dissipative and stochastic
/// parts are Euler-Maruyama. All superoperators act on single diagonals and
/// cost O(d^2).
inline StepResult step_good_cavity_sme(const DensityMatrix& rho,
                                       const OperatorMatrix& H_sys,
                                       const SidebandDecomposition& sidebands,
                                       const MeasurementParams& meas,
                                       double kappa, double dt,
                                       NoiseSource& noise, int ell_max = 1) {
  require_same_basis(rho.basis, H_sys.basis);
  require_same_basis(rho.basis, sidebands.basis);
  if (ell_max < 1) throw ConfigError("ell_max must be >= 1");
  if (kappa <= 0) throw ConfigError("kappa must be positive");
  if (dt * meas.gamma > 0.01)
    throw StepSizeError("good-cavity step needs dt*gamma <= 0.01");
  const int d = rho.basis.dimension;
  {
    Eigen::MatrixXcd off = H_sys.entries;
    off.diagonal().setZero();
    const double scale =
        std::max(1e-300, H_sys.entries.cwiseAbs().maxCoeff());
    if (off.cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw InvalidBasisError("good-cavity step requires diagonal H_sys");
  }
  const double dW = noise.wiener(dt);
  const double gamma = meas.gamma;
  const double omega = meas.omega;

  // exact unitary rotation: rho -> U rho U+, U = exp(-i H dt)
  Eigen::VectorXcd u(d);
  for (int n = 0; n < d; ++n)
    u(n) = std::exp(-im * H_sys.entries(n, n).real() * dt);
  Eigen::MatrixXcd r = u.asDiagonal() * rho.entries * u.adjoint().asDiagonal();

  Eigen::MatrixXcd drho = Eigen::MatrixXcd::Zero(d, d);
  const Eigen::VectorXd f0 =
      sidebands.operators.at(0).diagonal().real();
  const double f0_mean = (f0.array() * r.diagonal().real().array()).sum();
  // l = 0: dephasing D[f0] and the conditioning term H[f0]
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const double df = f0(i) - f0(j);
      drho(i, j) += (-0.5 * gamma * df * df * dt +
                     std::sqrt(gamma) * (f0(i) + f0(j) - 2.0 * f0_mean) * dW) *
                    r(i, j);
    }
  // l != 0: sideband dissipators, rates suppressed by the cavity filter
  for (int ell = -ell_max; ell <= ell_max; ++ell) {
    if (ell == 0) continue;
    auto it = sidebands.operators.find(ell);
    if (it == sidebands.operators.end()) continue;
    const double rate =
        gamma / (1.0 + std::pow(2.0 * omega * ell / kappa, 2));
    const Eigen::MatrixXcd& F = it->second;
    // F rho F+ : shifted block; F+F : diagonal
    Eigen::VectorXd fdf = Eigen::VectorXd::Zero(d);
    for (int n = 0; n < d; ++n) {
      const int np = n + ell;
      if (np >= 0 && np < d) fdf(np) += std::norm(F(n, np));
    }
    for (int i = 0; i < d; ++i) {
      const int ip = i + ell;
      if (ip < 0 || ip >= d) continue;
      for (int j = 0; j < d; ++j) {
        const int jp = j + ell;
        if (jp < 0 || jp >= d) continue;
        drho(i, j) +=
            rate * dt * F(i, ip) * std::conj(F(j, jp)) * r(ip, jp);
      }
    }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        drho(i, j) += -0.5 * rate * dt * (fdf(i) + fdf(j)) * r(i, j);
  }
  return detail::finalize_step(rho.basis, r + drho, rho.time + dt, dW);
}

// ---------------------------------------------------------------------------
// Stochastic rate equation for the trap populations

struct SreStepResult {
  Eigen::VectorXd p;
  double dW = 0.0;
  double clip = 0.0;
};

/// dp_n = gamma/(1+(2w/kappa)^2) [A+_n p_{n+1} + A-_n p_{n-1} - B_n p_n] dt
///        + 2 sqrt(gamma) p_n [f_nn - sum_m f_mm p_m] dW
/// with A+/-_n = |f_{n,n+-1}|^2. Negative populations from the noise are
/// clipped at zero and the vector renormalized; the clipped mass is reported.
inline SreStepResult step_sre(const Eigen::VectorXd& p,
                              const OperatorMatrix& f_matrix,
                              const MeasurementParams& meas, double kappa,
                              double dt, NoiseSource& noise) {
  const int d = int(p.size());
  if (f_matrix.basis.dimension != d)
    throw BasisMismatchError("population vector does not match f matrix");
  if (std::abs(p.sum() - 1.0) > 1e-8)
    throw Error("populations must sum to 1");
  if (p.minCoeff() < -1e-6)
    throw StepSizeError("negative input population beyond tolerance");
  if (dt * meas.gamma > 0.01)
    throw StepSizeError("SRE step needs dt*gamma <= 0.01");
  const double dW = noise.wiener(dt);
  const double jump_rate =
      meas.gamma / (1.0 + std::pow(2.0 * meas.omega / kappa, 2));
  Eigen::VectorXd f_nn = f_matrix.entries.diagonal().real();
  const double f_mean = f_nn.dot(p);
  Eigen::VectorXd dp = Eigen::VectorXd::Zero(d);
  for (int n = 0; n < d; ++n) {
    const double a_plus = n + 1 < d ? std::norm(f_matrix.entries(n, n + 1)) : 0.0;
    const double a_minus = n > 0 ? std::norm(f_matrix.entries(n, n - 1)) : 0.0;
    double det = -(a_plus + a_minus) * p(n);
    if (n + 1 < d) det += a_plus * p(n + 1);
    if (n > 0) det += a_minus * p(n - 1);
    dp(n) = jump_rate * det * dt +
            2.0 * std::sqrt(meas.gamma) * p(n) * (f_nn(n) - f_mean) * dW;
  }
  Eigen::VectorXd out = p + dp;
  double clip = 0.0;
  for (int n = 0; n < d; ++n) {
    if (out(n) < 0) {
      clip -= out(n);
      out(n) = 0.0;
    }
  }
  out /= out.sum();
  return {std::move(out), dW, clip};
}

// ---------------------------------------------------------------------------
// Deterministic (unconditional) master equation

struct LindbladTerm {
  double rate;
  Eigen::MatrixXcd op;
};

namespace detail {

inline Eigen::MatrixXcd liouvillian_apply(
    const Eigen::MatrixXcd& H, const std::vector<LindbladTerm>& ops,
    const Eigen::MatrixXcd& rho) {
  Eigen::MatrixXcd out = -im * (H * rho - rho * H);
  for (const auto& t : ops) out += t.rate * lindblad_D(t.op, rho);
  return out;
}

}  // namespace detail

/// One RK4 step of drho/dt = -i[H, rho] + sum_k rate_k D[L_k] rho.
inline DensityMatrix step_master_equation(const DensityMatrix& rho,
                                          const OperatorMatrix& H,
                                          const std::vector<LindbladTerm>& ops,
                                          double dt) {
  require_same_basis(rho.basis, H.basis);
  for (const auto& t : ops)
    if (t.rate < 0) throw ConfigError("Lindblad rates must be >= 0");
  const Eigen::MatrixXcd& r = rho.entries;
  Eigen::MatrixXcd k1 = detail::liouvillian_apply(H.entries, ops, r);
  Eigen::MatrixXcd k2 =
      detail::liouvillian_apply(H.entries, ops, r + 0.5 * dt * k1);
  Eigen::MatrixXcd k3 =
      detail::liouvillian_apply(H.entries, ops, r + 0.5 * dt * k2);
  Eigen::MatrixXcd k4 = detail::liouvillian_apply(H.entries, ops, r + dt * k3);
  Eigen::MatrixXcd out = r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  return {rho.basis, std::move(out), rho.time + dt};
}

}  // namespace qscope
