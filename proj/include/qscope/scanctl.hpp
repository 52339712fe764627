#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qscope/common.hpp"
#include "qscope/focusing.hpp"
#include "qscope/hilbert.hpp"
#include "qscope/homodyne.hpp"
#include "qscope/manybody.hpp"
#include "qscope/noise.hpp"
#include "qscope/sme.hpp"

namespace qscope {

enum class Regime { full, bad_cavity, good_cavity, sre, manybody };
enum class ScanMode { fixed_point, linear_scan };

/// Focal-point schedule z0(t): constant, or an affine ramp repeated over
/// n_scans consecutive scans of length duration each (no state reset between
/// scans).
struct ScanSchedule {
  ScanMode mode = ScanMode::fixed_point;
  double z0_start = 0.0;
  double z0_end = 0.0;
  double duration = 1.0;  // T, per scan
  int n_scans = 1;

  double total_time() const { return duration * n_scans; }

  double z0_at(double t) const {
    if (mode == ScanMode::fixed_point) return z0_start;
    double local = std::fmod(t, duration);
    if (local < 0) local += duration;
    if (t >= total_time()) local = duration;  // clamp at the end
    return z0_start + (z0_end - z0_start) * local / duration;
  }
};

struct InitialState {
  enum class Kind { coherent, fock, thermal, fermi_ground };
  Kind kind = Kind::coherent;
  double alpha = 2.0;
  int fock_n = 0;
  double n_th = 0.6;
};

struct RunConfig {
  Regime regime = Regime::bad_cavity;
  // physics (units hbar = omega = l0 = 1; box runs hbar = m = L = 1)
  double gamma = 1.0;
  double kappa = 10.0;
  double omega = 1.0;
  double sigma = 0.3;
  double drive = 0.0;
  double delta = 0.0;
  double phi = -0.5 * pi;
  InitialState initial;
  ScanSchedule schedule;
  double dt = 0.0;   // 0: default per regime
  double tau = 0.0;  // 0: suggested filter time
  int n_trajectories = 1;
  std::uint64_t seed = 0;
  // numerics
  int dim = 30;
  int cavity_dim = 12;
  int ell_max = 1;
  int sample_stride = 0;  // 0: aim for ~2000 samples
  int z0_grid_points = 512;
  // probe
  std::optional<ProbeKind> probe_kind;  // default depends on schedule mode
  double probe_period = 4.0;
  double probe_norm = 1.0;
  // many-body
  int n_fermions = 16;
  double box_length = 1.0;
  int orbital_window = 6;
  int excitation_cutoff = 1;

  ProbeKind effective_probe_kind() const {
    if (probe_kind) return *probe_kind;
    if (regime == Regime::manybody) return ProbeKind::gaussian;
    return schedule.mode == ScanMode::linear_scan ? ProbeKind::dark_periodic
                                                  : ProbeKind::gaussian;
  }

  double effective_dt() const {
    if (dt > 0) return dt;
    const double by_gamma =
        gamma > 0 ? 0.01 / gamma : std::numeric_limits<double>::infinity();
    switch (regime) {
      case Regime::full:
        return std::min({by_gamma, 0.01 / omega, 0.05 / kappa});
      case Regime::bad_cavity:
        return std::min(by_gamma, 0.01 / omega);
      default:
        // phase-exact steppers: the rate alone limits the step
        return std::isfinite(by_gamma) ? by_gamma : 0.01 / omega;
    }
  }

  double effective_tau() const {
    if (tau > 0) return tau;
    const double dt_eff = effective_dt();
    double t = 0.0;
    if (schedule.mode == ScanMode::linear_scan) {
      const double span = std::abs(schedule.z0_end - schedule.z0_start);
      t = span > 0 ? sigma * schedule.duration / span : 0.0;
    } else if (initial.kind == InitialState::Kind::coherent) {
      // tau ~ sigma / v with v the transit velocity of the wave packet
      const double v = std::sqrt(2.0) * std::abs(initial.alpha) * omega;
      t = v > 0 ? sigma / v : 0.0;
    }
    return std::max(t, 2.0 * dt_eff);
  }

  MeasurementParams measurement() const {
    MeasurementParams m;
    m.gamma = gamma;
    m.coupling_amplitude = 0.5 * std::sqrt(gamma * kappa);
    m.omega = omega;
    return m;
  }

  CavityParams cavity_params() const { return {kappa, delta, drive, phi}; }

  std::uint64_t hash() const;
};

// ---------------------------------------------------------------------------
// Guards

struct GuardReport {
  std::string name;
  double value = 0.0;
  bool ok = true;
  std::string message;
};

inline std::vector<GuardReport> evaluate_guards(const RunConfig& c) {
  std::vector<GuardReport> out;
  const double ko = c.kappa / c.omega;
  if (c.regime == Regime::bad_cavity) {
    out.push_back({"kappa_over_omega", ko, ko >= 5.0,
                   ko >= 5.0 ? "bad-cavity regime"
                             : "warning: bad-cavity elimination assumes "
                               "kappa/omega >= 5"});
  }
  if (c.regime == Regime::good_cavity || c.regime == Regime::sre) {
    out.push_back({"kappa_over_omega", ko, ko <= 0.5,
                   ko <= 0.5 ? "good-cavity regime"
                             : "warning: good-cavity elimination assumes "
                               "kappa/omega <= 0.5"});
    const double t_coll = 1.0 / c.gamma;
    const double t_dwell = std::pow(2.0 * c.omega / c.kappa, 2) / c.gamma;
    const double T = c.schedule.duration;
    out.push_back({"T_coll", t_coll, t_coll < T,
                   "collapse time 1/gamma vs scan time"});
    out.push_back({"T_dwell", t_dwell, T <= 10.0 * t_dwell,
                   "dwell time (2 omega/kappa)^2/gamma vs scan time"});
  }
  if (c.regime == Regime::manybody) {
    BoxImpurityModel model{c.n_fermions, c.box_length, 1 + c.n_fermions / 2,
                           1.0};
    const bool nd = c.kappa <= 1.0 / (model.mass * c.sigma * c.sigma);
    out.push_back({"nondemolition", c.kappa * model.mass * c.sigma * c.sigma,
                   nd,
                   nd ? "kappa <= hbar^2/(m sigma^2)"
                      : "non-demolition condition kappa <= hbar^2/(m sigma^2) "
                        "violated"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cached focusing-operator schedule

/// f_{mn}(z0) precomputed on a uniform z0 grid and linearly interpolated; the
/// Gauss-Hermite machinery runs once per grid point instead of once per step.
class FocusOperatorCache {
 public:
  FocusOperatorCache(const TruncatedBasis& basis,
                     std::function<std::function<double(double)>(double)>
                         probe_at_z0,
                     double z0_lo, double z0_hi, int n_points)
      : basis_(basis), z0_lo_(z0_lo), z0_hi_(z0_hi) {
    if (n_points < 2) n_points = 2;
    if (z0_hi_ <= z0_lo_) {
      z0_hi_ = z0_lo_ + 1.0;
      n_points = 2;
    }
    const int d = basis.dimension;
    // probe shape is z0-independent up to translation, so one convergence
    // search fixes the quadrature grid for the whole scan range
    qscope::detail::QuadratureGrid grid =
        qscope::detail::converged_quadrature_grid(
            probe_at_z0(0.5 * (z0_lo_ + z0_hi_)), d, basis.length_scale);
    const int n_nodes = int(grid.x.size());
    Eigen::MatrixXd H(n_nodes, d);  // h_n(x_i)
    for (int i = 0; i < n_nodes; ++i)
      H.row(i) = hermite_functions(d - 1, grid.x(i)).transpose();
    mats_.reserve(n_points);
    const double l0 = basis.length_scale;
    for (int k = 0; k < n_points; ++k) {
      const double z0 =
          z0_lo_ + (z0_hi_ - z0_lo_) * k / double(n_points - 1);
      auto f = probe_at_z0(z0);
      Eigen::VectorXd wf(n_nodes);
      for (int i = 0; i < n_nodes; ++i)
        wf(i) = grid.weights(i) * f(l0 * grid.x(i));
      Eigen::MatrixXd F = H.transpose() * wf.asDiagonal() * H;
      F = 0.5 * (F + F.transpose().eval());
      mats_.push_back(F);
    }
    dz0_ = (z0_hi_ - z0_lo_) / (n_points - 1);
  }

  const TruncatedBasis& basis() const { return basis_; }

  Eigen::MatrixXd at(double z0) const {
    double x = (z0 - z0_lo_) / dz0_;
    int k = int(std::floor(x));
    k = std::clamp(k, 0, int(mats_.size()) - 2);
    const double w = std::clamp(x - k, 0.0, 1.0);
    return (1.0 - w) * mats_[k] + w * mats_[k + 1];
  }

  OperatorMatrix op_at(double z0) const {
    return {basis_, at(z0).cast<complex>(), true};
  }

 private:
  TruncatedBasis basis_;
  double z0_lo_, z0_hi_, dz0_ = 1.0;
  std::vector<Eigen::MatrixXd> mats_;
};

// ---------------------------------------------------------------------------
// Trajectory records and jump detection

struct JumpEvent {
  double time;
  int from_n;
  int to_n;
};

struct TrajectoryRecord {
  std::uint64_t config_hash = 0;
  std::uint64_t stream_id = 0;
  CurrentRecord current;
  std::vector<double> sample_times;
  std::vector<Eigen::VectorXd> populations;
  std::vector<double> mean_energy;
  std::vector<double> purity_series;
  std::vector<JumpEvent> jump_events;
  double max_trace_drift = 0.0;
};

/// Jump = the dominant population index changes and the new index persists
/// for at least hold_time.
inline std::vector<JumpEvent> detect_jumps(
    const std::vector<double>& times,
    const std::vector<Eigen::VectorXd>& populations, double hold_time) {
  std::vector<JumpEvent> events;
  if (times.size() != populations.size() || times.empty()) return events;
  auto argmax = [](const Eigen::VectorXd& p) {
    int k = 0;
    p.maxCoeff(&k);
    return k;
  };
  int current = argmax(populations[0]);
  std::size_t i = 1;
  while (i < times.size()) {
    int cand = argmax(populations[i]);
    if (cand != current) {
      // candidate jump: require the new index to hold for hold_time
      bool held = true;
      std::size_t j = i;
      while (j < times.size() && times[j] - times[i] < hold_time) {
        if (argmax(populations[j]) != cand) {
          held = false;
          break;
        }
        ++j;
      }
      if (held) {
        events.push_back({times[i], current, cand});
        current = cand;
      } else {
        i = j;  // skip past the failed excursion
        continue;
      }
    }
    ++i;
  }
  return events;
}

// ---------------------------------------------------------------------------
// Single-trajectory drivers

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline SidebandDecomposition sidebands_truncated(const Eigen::MatrixXd& f_mat,
                                                 const TruncatedBasis& basis,
                                                 double omega, int ell_max) {
  const int d = basis.dimension;
  SidebandDecomposition out;
  out.basis = basis;
  out.omega = omega;
  for (int ell = -ell_max; ell <= ell_max; ++ell) {
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(d, d);
    for (int n = 0; n < d; ++n) {
      const int np = n + ell;
      if (np >= 0 && np < d) m(n, np) = f_mat(n, np);
    }
    out.operators[ell] = std::move(m);
  }
  return out;
}

inline DensityMatrix initial_atom_state(const RunConfig& c,
                                        const TruncatedBasis& basis) {
  switch (c.initial.kind) {
    case InitialState::Kind::coherent:
      return coherent_state(basis, c.initial.alpha);
    case InitialState::Kind::fock:
      return fock_state(basis, c.initial.fock_n);
    case InitialState::Kind::thermal:
      return thermal_state(basis, c.initial.n_th);
    default:
      throw ConfigError("initial state incompatible with a single-atom run");
  }
}

inline std::function<std::function<double(double)>(double)> probe_builder(
    const RunConfig& c) {
  const ProbeKind kind = c.effective_probe_kind();
  const double sigma = c.sigma;
  const double norm = c.probe_norm;
  const double period = c.probe_period;
  return [=](double z0) {
    return make_probe(kind, sigma, z0, norm, period);
  };
}

}  // namespace detail

inline std::uint64_t RunConfig::hash() const {
  std::ostringstream os;
  os.precision(17);
  os << int(regime) << '|' << gamma << '|' << kappa << '|' << omega << '|'
     << sigma << '|' << drive << '|' << delta << '|' << phi << '|'
     << int(initial.kind) << '|' << initial.alpha << '|' << initial.fock_n
     << '|' << initial.n_th << '|' << int(schedule.mode) << '|'
     << schedule.z0_start << '|' << schedule.z0_end << '|' << schedule.duration
     << '|' << schedule.n_scans << '|' << dt << '|' << tau << '|'
     << n_trajectories << '|' << seed << '|' << dim << '|' << cavity_dim << '|'
     << ell_max << '|' << int(effective_probe_kind()) << '|' << probe_period
     << '|' << probe_norm << '|' << n_fermions << '|' << box_length << '|'
     << orbital_window << '|' << excitation_cutoff;
  return detail::fnv1a(os.str());
}

/// Run one conditioned trajectory: steps the regime's SME with the focal
/// point updated each step, synthesizing the homodyne increment from the same
/// Wiener increment, and recording populations, energy, purity and jumps on a
/// decimated sample grid.
inline TrajectoryRecord run_trajectory(const RunConfig& config,
                                       std::uint64_t stream_id,
                                       const FocusOperatorCache* cache = nullptr) {
  if (config.regime == Regime::manybody)
    throw ConfigError("many-body runs use run_friedel_trajectory");
  const double dt = config.effective_dt();
  const double T = config.schedule.total_time();
  const long n_steps = long(std::llround(T / dt));
  const int stride = config.sample_stride > 0
                         ? config.sample_stride
                         : std::max(1L, n_steps / 2000);
  const MeasurementParams meas = config.measurement();
  const CavityParams cav = config.cavity_params();
  NoiseSource noise(config.seed, stream_id);

  TruncatedBasis atom_basis = TruncatedBasis::ho(config.dim);
  HoOperators ho = build_ho_operators(atom_basis, config.omega);

  std::optional<FocusOperatorCache> local_cache;
  if (!cache) {
    double lo = config.schedule.z0_start, hi = config.schedule.z0_end;
    if (lo > hi) std::swap(lo, hi);
    local_cache.emplace(atom_basis, detail::probe_builder(config), lo, hi,
                        config.schedule.mode == ScanMode::fixed_point
                            ? 2
                            : config.z0_grid_points);
    cache = &*local_cache;
  }

  TrajectoryRecord rec;
  rec.config_hash = config.hash();
  rec.stream_id = stream_id;
  rec.current.dt = dt;
  rec.current.times.reserve(n_steps);
  rec.current.increments.reserve(n_steps);

  auto sample = [&](double t, const Eigen::VectorXd& pops, double energy,
                    double pur) {
    rec.sample_times.push_back(t);
    rec.populations.push_back(pops);
    rec.mean_energy.push_back(energy);
    rec.purity_series.push_back(pur);
  };

  const double hbar_omega = config.omega;
  Eigen::VectorXd level_energy(config.dim);
  for (int n = 0; n < config.dim; ++n)
    level_energy(n) = hbar_omega * (n + 0.5);

  switch (config.regime) {
    case Regime::bad_cavity: {
      rec.current.mode = CurrentMode::bad_cavity;
      DensityMatrix rho = detail::initial_atom_state(config, atom_basis);
      for (long k = 0; k < n_steps; ++k) {
        const double t = k * dt;
        OperatorMatrix f_op = cache->op_at(config.schedule.z0_at(t));
        const double f_exp = expectation(f_op, rho).real();
        StepResult step =
            step_bad_cavity_sme(rho, ho.H_sys, f_op, meas, dt, noise);
        rec.max_trace_drift = std::max(rec.max_trace_drift, step.trace_drift);
        rec.current.push(t, 2.0 * std::sqrt(meas.gamma) * f_exp * dt +
                                step.dW);
        rho = std::move(step.rho);
        if (k % stride == 0) {
          Eigen::VectorXd pops = rho.entries.diagonal().real();
          sample(t, pops, pops.dot(level_energy), purity(rho));
        }
        if (k % 2000 == 1999) check_density_matrix(rho);
      }
      break;
    }
    case Regime::good_cavity: {
      rec.current.mode = CurrentMode::good_cavity;
      DensityMatrix rho = detail::initial_atom_state(config, atom_basis);
      for (long k = 0; k < n_steps; ++k) {
        const double t = k * dt;
        Eigen::MatrixXd f_mat = cache->at(config.schedule.z0_at(t));
        SidebandDecomposition sb = detail::sidebands_truncated(
            f_mat, atom_basis, config.omega, config.ell_max);
        const double f0_exp =
            (f_mat.diagonal().array() * rho.entries.diagonal().real().array())
                .sum();
        StepResult step = step_good_cavity_sme(
            rho, ho.H_sys, sb, meas, config.kappa, dt, noise, config.ell_max);
        rec.max_trace_drift = std::max(rec.max_trace_drift, step.trace_drift);
        rec.current.push(t, 2.0 * std::sqrt(meas.gamma) * f0_exp * dt +
                                step.dW);
        rho = std::move(step.rho);
        if (k % stride == 0) {
          Eigen::VectorXd pops = rho.entries.diagonal().real();
          sample(t, pops, pops.dot(level_energy), purity(rho));
        }
        if (k % 20000 == 19999) check_density_matrix(rho);
      }
      break;
    }
    case Regime::sre: {
      rec.current.mode = CurrentMode::good_cavity;
      DensityMatrix rho0 = detail::initial_atom_state(config, atom_basis);
      Eigen::VectorXd p = rho0.entries.diagonal().real();
      for (long k = 0; k < n_steps; ++k) {
        const double t = k * dt;
        OperatorMatrix f_op = cache->op_at(config.schedule.z0_at(t));
        const double f0_exp = f_op.entries.diagonal().real().dot(p);
        SreStepResult step =
            step_sre(p, f_op, meas, config.kappa, dt, noise);
        rec.current.push(t, 2.0 * std::sqrt(meas.gamma) * f0_exp * dt +
                                step.dW);
        p = std::move(step.p);
        if (k % stride == 0)
          sample(t, p, p.dot(level_energy), p.squaredNorm());
      }
      break;
    }
    case Regime::full: {
      rec.current.mode = CurrentMode::full;
      if (config.drive <= 0)
        throw ConfigError("full-model run needs a positive drive");
      TruncatedBasis cav_basis = TruncatedBasis::fock(config.cavity_dim);
      TruncatedBasis prod = TruncatedBasis::product(atom_basis, cav_basis);
      FullSmeWorkspace ws(prod, cav);
      OperatorMatrix X_phi = quadrature_op(ws);
      // A from gamma = [4 A E/(hbar kappa)]^2
      const double A = std::sqrt(meas.gamma) * cav.kappa / (4.0 * cav.drive);
      // steady cavity amplitude sqrt(kappa) E / (i delta - kappa/2)
      const complex alpha_ss =
          std::sqrt(cav.kappa) * cav.drive /
          complex(-0.5 * cav.kappa, cav.delta);
      DensityMatrix rho =
          tensor(detail::initial_atom_state(config, atom_basis),
                 coherent_state(cav_basis, alpha_ss));
      OperatorMatrix I_cav = identity_op(cav_basis);
      const double comp = A * std::norm(alpha_ss);  // Raman compensation
      Eigen::MatrixXcd nc = annihilation(config.cavity_dim);
      OperatorMatrix n_op{cav_basis, (nc.adjoint() * nc).eval(), true};
      Eigen::MatrixXcd H_atom_part = tensor(ho.H_sys, I_cav).entries;
      for (long k = 0; k < n_steps; ++k) {
        const double t = k * dt;
        OperatorMatrix f_atom = cache->op_at(config.schedule.z0_at(t));
        Eigen::MatrixXcd Hm = H_atom_part + A * tensor(f_atom, n_op).entries -
                              comp * tensor(f_atom, I_cav).entries;
        OperatorMatrix H_total{prod, std::move(Hm), true};
        const double x_exp = expectation(X_phi, rho).real();
        StepResult step = step_full_sme(rho, H_total, ws, dt, noise);
        rec.max_trace_drift = std::max(rec.max_trace_drift, step.trace_drift);
        rec.current.push(t, std::sqrt(cav.kappa) * x_exp * dt + step.dW);
        rho = std::move(step.rho);
        if (k % stride == 0) {
          // reduced atom populations
          Eigen::VectorXd pops(config.dim);
          for (int n = 0; n < config.dim; ++n) {
            double v = 0.0;
            for (int m = 0; m < config.cavity_dim; ++m)
              v += rho.entries(n * config.cavity_dim + m,
                               n * config.cavity_dim + m)
                       .real();
            pops(n) = v;
          }
          sample(t, pops, pops.dot(level_energy), purity(rho));
        }
        if (k % 2000 == 1999) check_density_matrix(rho);
      }
      break;
    }
    default:
      throw ConfigError("unsupported regime in run_trajectory");
  }

  rec.jump_events = detect_jumps(rec.sample_times, rec.populations,
                                 50.0 / std::max(config.gamma, 1e-300));
  return rec;
}

// ---------------------------------------------------------------------------
// Ensembles

struct EnsembleResult {
  EnsembleStats filtered_stats;
  std::vector<double> filtered_times;
  std::vector<TrajectoryRecord> records;  // currents dropped for large runs
  std::vector<double> oracle_times;       // unconditional ME trace
  std::vector<double> oracle_f_trace;     // <f> (or <f0>) from the ME
};

inline int worker_threads() {
  if (const char* env = std::getenv("QSCOPE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return int(std::max(1u, std::thread::hardware_concurrency()));
}

namespace detail {

/// Unconditional master-equation oracle for the run, on the sample grid.
/// Bad-cavity and full regimes integrate the Lindblad ME; good-cavity and SRE
/// regimes integrate the population rate equation (their unconditional
/// average for diagonal initial states).
inline void me_oracle(const RunConfig& config, const FocusOperatorCache& cache,
                      std::vector<double>& times, std::vector<double>& trace) {
  const double T = config.schedule.total_time();
  const int n_out = 400;
  times.clear();
  trace.clear();
  TruncatedBasis basis = TruncatedBasis::ho(config.dim);
  HoOperators ho = build_ho_operators(basis, config.omega);
  if (config.regime == Regime::bad_cavity || config.regime == Regime::full) {
    // eliminated ME: drho = -i[H, rho] + gamma D[f] rho
    const double dt = std::min(0.01 / std::max(config.gamma, 1e-300),
                               0.01 / config.omega);
    DensityMatrix rho = initial_atom_state(config, basis);
    const long n_steps = long(std::llround(T / dt));
    const long stride = std::max(1L, n_steps / n_out);
    for (long k = 0; k < n_steps; ++k) {
      const double t = k * dt;
      OperatorMatrix f_op = cache.op_at(config.schedule.z0_at(t));
      if (k % stride == 0) {
        times.push_back(t);
        trace.push_back(expectation(f_op, rho).real());
      }
      rho = step_master_equation(rho, ho.H_sys,
                                 {{config.gamma, f_op.entries}}, dt);
    }
  } else {
    // classical rate equation for the populations
    const double dt = 0.01 / std::max(config.gamma, 1e-300);
    DensityMatrix rho0 = initial_atom_state(config, basis);
    Eigen::VectorXd p = rho0.entries.diagonal().real();
    const double jump_rate =
        config.gamma /
        (1.0 + std::pow(2.0 * config.omega / config.kappa, 2));
    const long n_steps = long(std::llround(T / dt));
    const long stride = std::max(1L, n_steps / n_out);
    const int d = config.dim;
    for (long k = 0; k < n_steps; ++k) {
      const double t = k * dt;
      Eigen::MatrixXd f_mat = cache.at(config.schedule.z0_at(t));
      if (k % stride == 0) {
        times.push_back(t);
        trace.push_back(f_mat.diagonal().dot(p));
      }
      Eigen::VectorXd dp = Eigen::VectorXd::Zero(d);
      for (int n = 0; n < d; ++n) {
        const double ap = n + 1 < d ? f_mat(n, n + 1) * f_mat(n, n + 1) : 0.0;
        const double am = n > 0 ? f_mat(n, n - 1) * f_mat(n, n - 1) : 0.0;
        double det = -(ap + am) * p(n);
        if (n + 1 < d) det += ap * p(n + 1);
        if (n > 0) det += am * p(n - 1);
        dp(n) = jump_rate * det;
      }
      p += dt * dp;
    }
  }
}

}  // namespace detail

/// Concurrent ensemble run with distinct noise streams, merged filtered-
/// current statistics, and the matching unconditional ME attached as oracle.
/// Full current records are dropped from the returned TrajectoryRecords when
/// keep_currents is false (summaries and filtered statistics remain).
inline EnsembleResult run_ensemble(const RunConfig& config, int n_trajectories,
                                   bool keep_currents = false,
                                   int filtered_stride = 0) {
  if (n_trajectories < 1) throw ConfigError("need at least one trajectory");
  if (config.regime == Regime::manybody)
    throw ConfigError("many-body runs use run_friedel_scan");
  double lo = config.schedule.z0_start, hi = config.schedule.z0_end;
  if (lo > hi) std::swap(lo, hi);
  FocusOperatorCache cache(TruncatedBasis::ho(config.dim),
                           detail::probe_builder(config), lo, hi,
                           config.schedule.mode == ScanMode::fixed_point
                               ? 2
                               : config.z0_grid_points);
  const double tau = config.effective_tau();
  const double dt = config.effective_dt();
  const long n_steps = long(std::llround(config.schedule.total_time() / dt));
  const int fstride =
      filtered_stride > 0 ? filtered_stride : std::max(1L, n_steps / 2000);

  EnsembleResult result;
  WelfordAccumulator acc;
  result.records.resize(n_trajectories);

  auto worker = [&](int traj) {
    TrajectoryRecord rec = run_trajectory(config, traj, &cache);
    FilteredSignal sig = lowpass_filter(rec.current, tau);
    FilteredSignal dec;
    dec.tau = sig.tau;
    for (std::size_t i = 0; i < sig.values.size(); i += fstride) {
      dec.times.push_back(sig.times[i]);
      dec.values.push_back(sig.values[i]);
    }
    if (!keep_currents) rec.current = CurrentRecord{};
    return std::make_pair(std::move(rec), std::move(dec));
  };

  const int n_workers = std::min(worker_threads(), n_trajectories);
  std::vector<FilteredSignal> filtered(n_trajectories);
  if (n_workers <= 1) {
    for (int i = 0; i < n_trajectories; ++i) {
      auto [rec, sig] = worker(i);
      result.records[i] = std::move(rec);
      filtered[i] = std::move(sig);
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::mutex mu;
    std::exception_ptr error;
    for (int w = 0; w < n_workers; ++w) {
      pool.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < n_trajectories;
             i = next.fetch_add(1)) {
          try {
            auto [rec, sig] = worker(i);
            std::lock_guard<std::mutex> lock(mu);
            result.records[i] = std::move(rec);
            filtered[i] = std::move(sig);
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  for (const auto& sig : filtered)
    acc.add(Eigen::Map<const Eigen::VectorXd>(sig.values.data(),
                                              long(sig.values.size())));
  result.filtered_stats = acc.stats();
  result.filtered_times = filtered.front().times;
  detail::me_oracle(config, cache, result.oracle_times,
                    result.oracle_f_trace);
  return result;
}

// ---------------------------------------------------------------------------
// Many-body Friedel scan

struct FriedelScanResult {
  std::vector<double> z0;         // filtered-signal positions
  std::vector<double> signal;     // density estimate from I_tau
  std::vector<double> theory;     // n_F [1 - sin(2 k_F z)/(2 k_F z)]
  CurrentRecord current;
  double excited_probability = 0.0;  // max over the run
};

/// Single scanned trajectory over the Friedel region. The filtered current is
/// converted to a density estimate via the probe normalization:
/// n_est = I_tau / (2 sqrt(gamma tau) probe_norm).
inline FriedelScanResult run_friedel_trajectory(const RunConfig& config,
                                                std::uint64_t stream_id) {
  BoxImpurityModel model{config.n_fermions, config.box_length,
                         config.n_fermions / 2 + config.orbital_window / 2 + 2,
                         1.0};
  model.validate();
  OrbitalSet orbitals = build_orbitals(model);
  ManyBodyStructure structure = build_manybody_structure(
      orbitals, config.orbital_window, config.excitation_cutoff);

  const double dt = 0.01 / std::max(config.gamma, 1e-300);
  const double T = config.schedule.duration;
  const long n_steps = long(std::llround(T / dt));
  const double z0_lo = std::min(config.schedule.z0_start, config.schedule.z0_end);
  const double z0_hi = std::max(config.schedule.z0_start, config.schedule.z0_end);

  // precompute single-particle f matrices on the z0 grid
  const int ng = config.z0_grid_points;
  std::vector<Eigen::MatrixXd> f_grid(ng);
  const double s_gauss = config.sigma / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  for (int k = 0; k < ng; ++k) {
    const double z0 = z0_lo + (z0_hi - z0_lo) * k / double(ng - 1);
    auto probe = make_probe(config.effective_probe_kind(), config.sigma, z0,
                            config.probe_norm, config.probe_period);
    Interval support{z0 - 8.0 * s_gauss, z0 + 8.0 * s_gauss};
    const Interval* sp =
        config.effective_probe_kind() == ProbeKind::gaussian ? &support
                                                             : nullptr;
    f_grid[k] = single_particle_f_elements(probe, orbitals, 4001, sp);
  }
  const double dz0 = (z0_hi - z0_lo) / (ng - 1);
  auto f_at = [&](double z0) {
    double x = (z0 - z0_lo) / dz0;
    int k = std::clamp(int(std::floor(x)), 0, ng - 2);
    const double w = std::clamp(x - k, 0.0, 1.0);
    return ((1.0 - w) * f_grid[k] + w * f_grid[k + 1]).eval();
  };

  NoiseSource noise(config.seed, stream_id);
  ManyBodyState state = ground_configuration_state(structure);
  FriedelScanResult out;
  out.current.dt = dt;
  out.current.mode = CurrentMode::manybody;
  for (long k = 0; k < n_steps; ++k) {
    const double t = k * dt;
    const double z0 = config.schedule.z0_at(t);
    ManyBodyStepResult step = step_manybody_sme(state, f_at(z0), config.gamma,
                                                config.kappa, dt, noise);
    out.current.push(t, step.increment);
    state = std::move(step.state);
    if (k % 200 == 0) {
      const double pg = state.density_matrix(0, 0).real();
      out.excited_probability = std::max(out.excited_probability, 1.0 - pg);
    }
  }

  const double tau = config.tau > 0 ? config.tau : 0.01 * T;
  FilteredSignal sig = lowpass_filter(out.current, tau);
  const double scale =
      2.0 * std::sqrt(config.gamma * tau) * config.probe_norm;
  // center the window: the density estimate at z0(t + tau/2)
  for (std::size_t i = 0; i < sig.times.size(); i += 25) {
    const double z = config.schedule.z0_at(sig.times[i] + 0.5 * tau);
    out.z0.push_back(z);
    out.signal.push_back(sig.values[i] / scale);
    const double kf = model.fermi_wavevector();
    const double x = 2.0 * kf * z;
    const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(x) / x;
    out.theory.push_back(model.fermi_density() * (1.0 - sinc));
  }
  return out;
}

}  // namespace qscope
