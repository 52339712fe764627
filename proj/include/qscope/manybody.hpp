#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

#include "qscope/common.hpp"
#include "qscope/hilbert.hpp"
#include "qscope/noise.hpp"
#include "qscope/sme.hpp"

namespace qscope {

/// Non-interacting fermions in a box of length L with a hard (U -> infinity)
/// impurity at z = 0. n_orbitals counts kept single-particle modes per parity
/// sector.
struct BoxImpurityModel {
  int n_fermions = 16;
  double box_length = 1.0;
  int n_orbitals = 11;
  double mass = 1.0;

  void validate() const {
    if (n_fermions <= 0 || n_fermions % 2 != 0)
      throw ConfigError("n_fermions must be even and positive");
    if (box_length <= 0 || mass <= 0)
      throw ConfigError("box_length and mass must be positive");
    if (n_orbitals < n_fermions / 2)
      throw ConfigError("n_orbitals must be >= N/2 per parity sector");
  }

  double energy_unit() const {  // eps_n = energy_unit * n^2, hbar = 1
    return 2.0 * pi * pi / (mass * box_length * box_length);
  }
  double fermi_density() const { return n_fermions / box_length; }
  double fermi_wavevector() const { return pi * fermi_density(); }
};

enum class Parity { odd, even };
enum class OrbitalBasisKind { parity, left_right };

/// Single-particle eigenmodes of the box-with-impurity. Orbitals are indexed
/// 0..2*n_orbitals-1, energy-ordered, with the degenerate (n, odd)/(n, even)
/// partners adjacent. The left/right combinations (psi_o -/+ psi_e)/sqrt(2)
/// are supported on one half of the box only.
struct OrbitalSet {
  BoxImpurityModel model;
  OrbitalBasisKind basis_kind = OrbitalBasisKind::parity;
  std::vector<double> energies;
  std::vector<Parity> parity_labels;  // parity basis only
  std::vector<int> quantum_number;    // n = 1, 2, ...

  int size() const { return int(energies.size()); }

  double psi(int idx, double z) const {
    const double L = model.box_length;
    if (std::abs(z) > 0.5 * L) return 0.0;
    const int n = quantum_number[idx];
    const double norm = std::sqrt(2.0 / L);
    const double arg = 2.0 * pi * n / L;
    const double psi_o = norm * std::sin(arg * z);
    const double psi_e = norm * std::sin(arg * std::abs(z));
    if (basis_kind == OrbitalBasisKind::parity)
      return (idx % 2 == 0) ? psi_o : psi_e;
    // left (idx even) / right (idx odd)
    return (idx % 2 == 0) ? (psi_o - psi_e) / std::sqrt(2.0)
                          : (psi_o + psi_e) / std::sqrt(2.0);
  }
};

inline OrbitalSet build_orbitals(
    const BoxImpurityModel& model,
    OrbitalBasisKind kind = OrbitalBasisKind::parity) {
  model.validate();
  OrbitalSet orbitals;
  orbitals.model = model;
  orbitals.basis_kind = kind;
  const double unit = model.energy_unit();
  for (int n = 1; n <= model.n_orbitals; ++n) {
    for (int s = 0; s < 2; ++s) {
      orbitals.energies.push_back(unit * n * n);
      orbitals.parity_labels.push_back(s == 0 ? Parity::odd : Parity::even);
      orbitals.quantum_number.push_back(n);
    }
  }
  return orbitals;
}

/// Closed-form ground-state density n(z) = n_F + (1/L){1 - sin[2pi(N+1)z/L] /
/// sin(2pi z/L)}, with the removable singularities at z = 0 and z = +-L/2
/// handled by their limits.
inline double ground_state_density(const BoxImpurityModel& model, double z) {
  model.validate();
  const double L = model.box_length;
  if (std::abs(z) > 0.5 * L) throw Error("z outside the box");
  const int N = model.n_fermions;
  const double u = 2.0 * pi * z / L;
  const double s = std::sin(u);
  double ratio;
  if (std::abs(s) < 1e-9) {
    // l'Hopital at the zeros of sin(2 pi z / L)
    ratio = (N + 1) * std::cos((N + 1) * u) / std::cos(u);
  } else {
    ratio = std::sin((N + 1) * u) / s;
  }
  return model.fermi_density() + (1.0 - ratio) / L;
}

/// Single-particle matrix elements f_{vv'} = <v| f_{z0}(z) |v'> by composite
/// Simpson quadrature, split at the impurity kink. `support` restricts the
/// integration window for localized probes.
inline Eigen::MatrixXd single_particle_f_elements(
    const std::function<double(double)>& f, const OrbitalSet& orbitals,
    int n_points = 4001, const Interval* support = nullptr) {
  const double L = orbitals.model.box_length;
  double lo = -0.5 * L, hi = 0.5 * L;
  if (support) {
    lo = std::max(lo, support->lo);
    hi = std::min(hi, support->hi);
  }
  const int d = orbitals.size();
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(d, d);
  if (hi <= lo) return F;
  auto integrate = [&](double a, double b) {
    if (b <= a) return;
    int n = std::max(8, int(n_points * (b - a) / (hi - lo)));
    if (n % 2 == 1) ++n;  // Simpson needs an even interval count
    const double h = (b - a) / n;
    Eigen::VectorXd psi(d);
    for (int i = 0; i <= n; ++i) {
      const double z = a + i * h;
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      for (int k = 0; k < d; ++k) psi(k) = orbitals.psi(k, z);
      F.noalias() += (w * h / 3.0 * f(z)) * (psi * psi.transpose());
    }
  };
  if (lo < 0 && hi > 0) {
    integrate(lo, 0.0);
    integrate(0.0, hi);
  } else {
    integrate(lo, hi);
  }
  F = 0.5 * (F + F.transpose().eval());
  return F;
}

// ---------------------------------------------------------------------------
// Many-body occupation basis and operator structure

struct ManyBodyBasis {
  OrbitalSet orbitals;
  std::vector<std::uint64_t> states;  // occupation bitstrings
  std::vector<double> energies;       // total energy per state
  std::vector<std::vector<int>> occupied;  // occupied orbitals per state

  int size() const { return int(states.size()); }
  int n_particles() const { return int(occupied.at(0).size()); }
};

struct Transition {
  int to_state;    // bra configuration
  int from_state;  // ket configuration
  int orb_create;  // a in b+_a b_b
  int orb_destroy; // b
  double sign;     // fermionic sign
};

struct JumpGroup {
  double delta_e;  // E_to - E_from, shared within the group
  std::vector<Transition> transitions;
};

/// Basis construction and the z0-independent transition structure; the
/// z0-dependent amplitudes f_{ab} are filled in from a single-particle matrix
/// at step time.
struct ManyBodyStructure {
  ManyBodyBasis basis;
  std::vector<JumpGroup> groups;  // grouped by (quasi-)degenerate delta E
};

namespace detail {

inline double config_energy(const OrbitalSet& orbitals, std::uint64_t bits) {
  double e = 0.0;
  for (int k = 0; k < orbitals.size(); ++k)
    if (bits & (1ULL << k)) e += orbitals.energies[k];
  return e;
}

inline std::vector<int> occupied_list(std::uint64_t bits, int n_orb) {
  std::vector<int> occ;
  for (int k = 0; k < n_orb; ++k)
    if (bits & (1ULL << k)) occ.push_back(k);
  return occ;
}

/// Sign of b+_a b_b acting on |bits> (b occupied, a empty after removal).
inline double fermion_sign(std::uint64_t bits, int create, int destroy) {
  auto count_below = [](std::uint64_t b, int k) {
    return std::popcount(b & ((1ULL << k) - 1));
  };
  double sign = (count_below(bits, destroy) % 2 == 0) ? 1.0 : -1.0;
  std::uint64_t after = bits & ~(1ULL << destroy);
  if (count_below(after, create) % 2 != 0) sign = -sign;
  return sign;
}

}  // namespace detail

/// Ground Slater configuration plus particle-hole excitations: holes among
/// the `window` highest occupied orbitals, particles among the `window`
/// lowest empty ones, up to `excitation_cutoff` pairs.
inline ManyBodyStructure build_manybody_structure(const OrbitalSet& orbitals,
                                                  int window = 6,
                                                  int excitation_cutoff = 1) {
  if (excitation_cutoff < 1) throw ConfigError("excitation cutoff must be >= 1");
  const int n_orb = orbitals.size();
  if (n_orb > 62) throw ConfigError("too many orbitals for the bitstring basis");
  const int N = orbitals.model.n_fermions;
  if (N > n_orb)
    throw ConfigError("more fermions than kept orbitals");
  ManyBodyStructure s;
  s.basis.orbitals = orbitals;
  // orbitals are already energy-ordered
  std::uint64_t ground = (N == 64) ? ~0ULL : ((1ULL << N) - 1);
  const int w = std::min({window, N, n_orb - N});
  std::vector<int> holes, parts;
  for (int k = N - w; k < N; ++k) holes.push_back(k);
  for (int k = N; k < N + w; ++k) parts.push_back(k);

  std::vector<std::uint64_t> states{ground};
  auto add_excitations = [&](const std::vector<std::uint64_t>& seeds) {
    std::vector<std::uint64_t> out;
    for (std::uint64_t b : seeds)
      for (int h : holes)
        for (int p : parts) {
          if (!(b & (1ULL << h)) || (b & (1ULL << p))) continue;
          std::uint64_t nb = (b & ~(1ULL << h)) | (1ULL << p);
          out.push_back(nb);
        }
    return out;
  };
  std::vector<std::uint64_t> frontier{ground};
  for (int k = 0; k < excitation_cutoff; ++k) {
    frontier = add_excitations(frontier);
    states.insert(states.end(), frontier.begin(), frontier.end());
  }
  std::sort(states.begin(), states.end());
  states.erase(std::unique(states.begin(), states.end()), states.end());
  // keep the ground configuration first
  auto it = std::find(states.begin(), states.end(), ground);
  std::iter_swap(states.begin(), it);

  for (std::uint64_t b : states) {
    s.basis.states.push_back(b);
    s.basis.energies.push_back(detail::config_energy(orbitals, b));
    s.basis.occupied.push_back(detail::occupied_list(b, n_orb));
  }

  // enumerate single-move transitions inside the kept basis and group them by
  // exact energy difference (box energies are integer multiples of the unit)
  const double unit = orbitals.model.energy_unit();
  std::map<long long, std::vector<Transition>> by_delta;
  const int ns = int(s.basis.states.size());
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < ns; ++j) {
      if (i == j) continue;
      std::uint64_t x = s.basis.states[i] ^ s.basis.states[j];
      if (std::popcount(x) != 2) continue;
      std::uint64_t in_i = x & s.basis.states[i];
      std::uint64_t in_j = x & s.basis.states[j];
      if (std::popcount(in_i) != 1) continue;
      const int a = std::countr_zero(in_i);   // created
      const int b = std::countr_zero(in_j);   // destroyed
      const double de = s.basis.energies[i] - s.basis.energies[j];
      const long long key = llround(de / unit);
      by_delta[key].push_back(
          {i, j, a, b, detail::fermion_sign(s.basis.states[j], a, b)});
    }
  for (auto& [key, trans] : by_delta)
    s.groups.push_back({key * unit, std::move(trans)});
  return s;
}

struct ManyBodyState {
  const ManyBodyStructure* structure = nullptr;
  Eigen::MatrixXcd density_matrix;
  double time = 0.0;
};

inline ManyBodyState ground_configuration_state(
    const ManyBodyStructure& structure) {
  ManyBodyState st;
  st.structure = &structure;
  st.density_matrix =
      Eigen::MatrixXcd::Zero(structure.basis.size(), structure.basis.size());
  st.density_matrix(0, 0) = 1.0;
  return st;
}

/// QND observable diagonal: <state_i| f^(0) |state_i> = sum_{occupied} f_vv.
inline Eigen::VectorXd manybody_f0_diagonal(const ManyBodyStructure& structure,
                                            const Eigen::MatrixXd& f_sp) {
  const int ns = structure.basis.size();
  Eigen::VectorXd diag(ns);
  for (int i = 0; i < ns; ++i) {
    double v = 0.0;
    for (int k : structure.basis.occupied[i]) v += f_sp(k, k);
    diag(i) = v;
  }
  return diag;
}

struct ManyBodyOperators {
  Eigen::VectorXd f0_diag;
  std::vector<std::pair<double, Eigen::MatrixXcd>> jump_ops;  // {rate, op}
};

/// Dense jump operators f^(Delta E_j) with rates gamma/(1+4 dE^2/kappa^2),
/// for inspection and for oracle-style tests; the stepper uses the sparse
/// transition structure directly.
inline ManyBodyOperators build_manybody_operators(
    const Eigen::MatrixXd& f_sp, const ManyBodyStructure& structure,
    double gamma, double kappa) {
  if (kappa <= 0) throw ConfigError("kappa must be positive");
  ManyBodyOperators ops;
  ops.f0_diag = manybody_f0_diagonal(structure, f_sp);
  const int ns = structure.basis.size();
  for (const auto& g : structure.groups) {
    Eigen::MatrixXcd J = Eigen::MatrixXcd::Zero(ns, ns);
    for (const auto& t : g.transitions)
      J(t.to_state, t.from_state) +=
          t.sign * f_sp(t.orb_create, t.orb_destroy);
    const double rate =
        gamma / (1.0 + 4.0 * g.delta_e * g.delta_e / (kappa * kappa));
    ops.jump_ops.emplace_back(rate, std::move(J));
  }
  return ops;
}

struct ManyBodyStepResult {
  ManyBodyState state;
  double dW = 0.0;
  double increment = 0.0;   // homodyne dX for this step
  double trace_drift = 0.0;
};

/// One step of the many-body good-cavity SME (resonant drive, phi = -pi/2):
/// exact phase rotation for the diagonal Hamiltonian, Euler-Maruyama for the
/// f^(0) measurement terms and the suppressed dissipation channels. The
/// cavity-mediated Hamiltonian correction is omitted. Also returns the
/// homodyne increment 2 sqrt(gamma) <f^(0)> dt + dW built from the same dW.
inline ManyBodyStepResult step_manybody_sme(const ManyBodyState& state,
                                            const Eigen::MatrixXd& f_sp,
                                            double gamma, double kappa,
                                            double dt, NoiseSource& noise) {
  const ManyBodyStructure& s = *state.structure;
  const int ns = s.basis.size();
  if (dt * gamma > 0.01)
    throw StepSizeError("many-body step needs dt*gamma <= 0.01");
  const double dW = noise.wiener(dt);

  Eigen::VectorXcd u(ns);
  for (int i = 0; i < ns; ++i)
    u(i) = std::exp(-im * s.basis.energies[i] * dt);
  Eigen::MatrixXcd r =
      u.asDiagonal() * state.density_matrix * u.adjoint().asDiagonal();

  const Eigen::VectorXd f0 = manybody_f0_diagonal(s, f_sp);
  const double f0_mean = (f0.array() * r.diagonal().real().array()).sum();
  Eigen::MatrixXcd drho = Eigen::MatrixXcd::Zero(ns, ns);
  const double sqrt_gamma = std::sqrt(gamma);
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < ns; ++j) {
      const double df = f0(i) - f0(j);
      drho(i, j) += (-0.5 * gamma * df * df * dt +
                     sqrt_gamma * (f0(i) + f0(j) - 2.0 * f0_mean) * dW) *
                    r(i, j);
    }
  for (const auto& g : s.groups) {
    const double rate =
        gamma / (1.0 + 4.0 * g.delta_e * g.delta_e / (kappa * kappa));
    // J rho J+ over transition pairs
    for (const auto& t1 : g.transitions) {
      const double a1 = t1.sign * f_sp(t1.orb_create, t1.orb_destroy);
      if (a1 == 0.0) continue;
      for (const auto& t2 : g.transitions) {
        const double a2 = t2.sign * f_sp(t2.orb_create, t2.orb_destroy);
        if (a2 == 0.0) continue;
        drho(t1.to_state, t2.to_state) +=
            rate * dt * a1 * a2 * r(t1.from_state, t2.from_state);
      }
    }
    // -1/2 {J+J, rho}
    for (const auto& t1 : g.transitions) {
      const double a1 = t1.sign * f_sp(t1.orb_create, t1.orb_destroy);
      if (a1 == 0.0) continue;
      for (const auto& t2 : g.transitions) {
        if (t1.to_state != t2.to_state) continue;
        const double a2 = t2.sign * f_sp(t2.orb_create, t2.orb_destroy);
        if (a2 == 0.0) continue;
        const double v = a1 * a2;  // (J+J)(from1, from2)
        drho.row(t1.from_state) -= 0.5 * rate * dt * v * r.row(t2.from_state);
        drho.col(t1.from_state) -= 0.5 * rate * dt * v * r.col(t2.from_state);
      }
    }
  }
  Eigen::MatrixXcd out = r + drho;
  const double tr = out.trace().real();
  const double drift = std::abs(tr - 1.0);
  if (drift > 1e-4)
    throw StepSizeError("many-body trace drift exceeds 1e-4");
  out = 0.5 * (out + out.adjoint().eval());
  out /= out.trace().real();

  ManyBodyStepResult res;
  res.state = {state.structure, std::move(out), state.time + dt};
  res.dW = dW;
  res.trace_drift = drift;
  res.increment = 2.0 * sqrt_gamma * f0_mean * dt + dW;
  return res;
}

/// Non-demolition scan condition kappa <= hbar^2 / (m sigma^2).
inline bool nondemolition_condition(const BoxImpurityModel& model,
                                    double sigma, double kappa) {
  return kappa <= 1.0 / (model.mass * sigma * sigma);
}

}  // namespace qscope
