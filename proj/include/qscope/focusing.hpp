#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "qscope/common.hpp"
#include "qscope/hilbert.hpp"

namespace qscope {

/// Lambda-system laser configuration producing the dark-state focal spot.
/// Omega_0 = epsilon * Omega_c, Omega_1(z) = Omega_c [1 + beta - cos k1(z-z0)].
struct LambdaConfig {
  double omega_c = 1.0;
  double epsilon = 0.1;
  double beta = 0.0;
  double k1 = 2.0 * pi;  // lambda_1 = 2 pi / k1
  double z0 = 0.0;
  double delta_e = 0.0;
  double gamma_e = 0.0;
  // Optional Gaussian envelope on Omega_0 for a single-peak focal spot.
  std::optional<double> envelope_waist;

  double lambda1() const { return 2.0 * pi / k1; }

  std::vector<std::string> validate() const {
    if (omega_c <= 0 || k1 <= 0 || epsilon <= 0 || beta < 0 || gamma_e < 0)
      throw ConfigError("LambdaConfig: omega_c, k1, epsilon must be > 0; "
                        "beta, gamma_e >= 0");
    if (epsilon > 0.3)
      throw ConfigError("LambdaConfig: epsilon must be <= 0.3");
    std::vector<std::string> warnings;
    if (epsilon > 0.1)
      warnings.push_back("epsilon > 0.1: closed-form resolution assumes "
                         "epsilon << 1");
    return warnings;
  }

  double omega0(double z) const {
    double env = 1.0;
    if (envelope_waist) {
      const double u = (z - z0) / *envelope_waist;
      env = std::exp(-0.5 * u * u);
    }
    return epsilon * omega_c * env;
  }
  double omega1(double z) const {
    return omega_c * (1.0 + beta - std::cos(k1 * (z - z0)));
  }
  /// |<r|D(z)>|^2 = cos^2 theta(z)
  double overlap(double z) const {
    const double o0 = omega0(z), o1 = omega1(z);
    const double s = o0 * o0 + o1 * o1;
    if (s == 0)
      throw DegenerateConfigurationError("both Rabi frequencies vanish");
    return o0 * o0 / s;
  }
};

struct LambdaEigensystem {
  double theta;
  complex chi;
  complex E_plus;
  complex E_minus;
};

/// Dressed-state angles and energies of the Lambda system at position z, with
/// the excited-state decay folded in as a complex detuning.
inline LambdaEigensystem lambda_eigensystem(const LambdaConfig& config,
                                            double z) {
  const double o0 = config.omega0(z), o1 = config.omega1(z);
  if (o0 == 0 && o1 == 0)
    throw DegenerateConfigurationError("both Rabi frequencies vanish at z");
  const double theta = std::atan2(o1, o0);
  const complex delta_tilde = config.delta_e + 0.5 * im * config.gamma_e;
  const complex root = std::sqrt(complex(o0 * o0 + o1 * o1) +
                                 delta_tilde * delta_tilde);
  const complex E_plus = -0.5 * (delta_tilde - root);
  const complex E_minus = -0.5 * (delta_tilde + root);
  const complex chi =
      -0.5 * std::atan(std::sqrt(complex(o0 * o0 + o1 * o1)) / delta_tilde);
  return {theta, chi, E_plus, E_minus};
}

struct FocusProfile {
  LambdaConfig config;
  WaveFunctionGrid grid;    // f_{z0}(z) samples, dimensionless
  double amplitude = 0.0;   // A = hbar g^2(z0)/Delta_t before rescaling
  double norm_length = 1.0; // integral of f over the window
};

/// f_{z0}(z) on a grid: cos^2 theta(z) with a slowly varying g^2(z) folded in,
/// rescaled so that the window integral equals norm_length.
inline FocusProfile focus_profile(
    const LambdaConfig& config,
    const std::function<double(double)>& g_of_z, double delta_t,
    double norm_length, Interval window, int n_points = 0) {
  if (delta_t == 0) throw ConfigError("focus_profile: Delta_t must be nonzero");
  if (norm_length <= 0)
    throw ConfigError("focus_profile: norm_length must be positive");
  if (window.hi - window.lo < config.lambda1() - 1e-12)
    throw ConfigError("focus_profile: window must cover one period");
  if (n_points <= 0)
    n_points = std::max(
        1001, int((window.hi - window.lo) / (config.lambda1() / 1e4)) + 1);
  const double g0 = g_of_z ? g_of_z(config.z0) : 1.0;
  FocusProfile prof;
  prof.config = config;
  prof.amplitude = g0 * g0 / delta_t;  // hbar = 1
  prof.norm_length = norm_length;
  prof.grid.points.resize(n_points);
  prof.grid.values.resize(n_points);
  prof.grid.spacing = (window.hi - window.lo) / (n_points - 1);
  for (int i = 0; i < n_points; ++i) {
    const double z = window.lo + i * prof.grid.spacing;
    double v = config.overlap(z);
    if (g_of_z) {
      const double g = g_of_z(z);
      v *= g * g / (g0 * g0);
    }
    prof.grid.points(i) = z;
    prof.grid.values(i) = v;
  }
  // trapezoid normalization
  double integral = 0.0;
  for (int i = 0; i + 1 < n_points; ++i)
    integral += 0.5 * (prof.grid.values(i) + prof.grid.values(i + 1)) *
                prof.grid.spacing;
  if (integral <= 0) throw ConfigError("focus_profile: negative normalization");
  prof.grid.values *= norm_length / integral;
  return prof;
}

struct FwhmResult {
  double analytic;
  double numeric;
};

namespace detail {

/// FWHM of |<r|D(z)>|^2 by grid bisection on one period around z0.
inline double numeric_fwhm(const LambdaConfig& config, double spacing_frac = 1e-4) {
  const double lam = config.lambda1();
  const double half = 0.5 * config.overlap(config.z0);
  const double dz = lam * spacing_frac;
  // walk outward from the peak until the profile drops below half maximum
  double right = 0.0;
  for (double z = config.z0; z < config.z0 + 0.5 * lam; z += dz) {
    if (config.overlap(z + dz) < half) {
      // linear interpolation inside the bracketing cell
      const double f0 = config.overlap(z), f1 = config.overlap(z + dz);
      right = z - config.z0 + dz * (f0 - half) / (f0 - f1);
      break;
    }
  }
  return 2.0 * right;
}

}  // namespace detail

inline FwhmResult fwhm_resolution(const LambdaConfig& config) {
  config.validate();
  const double lam = config.lambda1();
  const double analytic =
      (std::sqrt(2.0) * lam / pi) *
      std::sqrt(std::sqrt(config.epsilon * config.epsilon +
                          2.0 * config.beta * config.beta) -
                config.beta);
  return {analytic, detail::numeric_fwhm(config)};
}

/// Non-adiabatic potential of the dark state at z, from the spatial variation
/// of the mixing angle.
inline double nonadiabatic_potential(const LambdaConfig& config, double mass,
                                     double z) {
  if (config.epsilon <= 0) throw ConfigError("epsilon must be positive");
  const double k1 = config.k1;
  const double eps = config.epsilon, beta = config.beta;
  const double u = k1 * (z - config.z0);
  const double denom = 1.0 + std::pow(1.0 + beta - std::cos(u), 2) / (eps * eps);
  const double s = std::sin(u) / denom;
  return (k1 * k1 / (2.0 * mass * eps * eps)) * s * s;  // hbar = 1
}

/// Raman-resonance offset Delta_r = g^2(z0) |alpha|^2 / Delta_t compensating
/// the optical-lattice force of the stationary intracavity field.
inline double raman_compensation(double g_z0, double drive, double kappa,
                                 double delta, double delta_t) {
  if (kappa <= 0) throw ConfigError("kappa must be positive");
  if (delta_t == 0) throw ConfigError("Delta_t must be nonzero");
  const double alpha_sq =
      kappa * drive * drive / (delta * delta + 0.25 * kappa * kappa);
  return g_z0 * g_z0 * alpha_sq / delta_t;
}

struct CavityAtomBudget {
  double cooperativity;
  double sigma_over_l0;
  double max_overlap;
  double gamma_over_gamma_sp;
};

/// Measurement-vs-spontaneous-emission budget gamma/gamma_sp =
/// 4 C (sigma/l0) |<r|D>|^2_max.
inline CavityAtomBudget decay_budget(double cooperativity,
                                     double sigma_over_l0,
                                     double max_overlap) {
  if (cooperativity <= 0 || sigma_over_l0 <= 0 || max_overlap <= 0 ||
      max_overlap > 1)
    throw ConfigError("decay_budget: inputs must be > 0, max_overlap <= 1");
  return {cooperativity, sigma_over_l0, max_overlap,
          4.0 * cooperativity * sigma_over_l0 * max_overlap};
}

// ---------------------------------------------------------------------------
// Run-mode probe functions
//
// The SME integrators consume f_{z0}(z) as a plain function of z. The scan
// runs use the dark-state profile itself (periodic peaks every lambda_1, or a
// single peak when an envelope is requested); some run modes use a plain
// Gaussian stand-in of the same width.

enum class ProbeKind { dark_periodic, dark_single, gaussian };

/// Dark-state lambda configuration whose focal spot has the requested FWHM
/// sigma, with peaks separated by `period` (beta = 0).
inline LambdaConfig lambda_config_for_resolution(double sigma, double period,
                                                 double z0,
                                                 bool single_peak = false) {
  LambdaConfig cfg;
  cfg.k1 = 2.0 * pi / period;
  cfg.z0 = z0;
  cfg.beta = 0.0;
  cfg.epsilon = std::pow(pi * sigma / (std::sqrt(2.0) * period), 2);
  if (cfg.epsilon > 0.3)
    throw ConfigError("requested sigma too large for the given probe period");
  if (single_peak) cfg.envelope_waist = 0.25 * period;
  return cfg;
}

/// Normalized probe f_{z0}(z) with integral norm_length (per period for the
/// periodic kind).
inline std::function<double(double)> make_probe(ProbeKind kind, double sigma,
                                                double z0, double norm_length,
                                                double period = 4.0) {
  switch (kind) {
    case ProbeKind::gaussian: {
      const double s = sigma / (2.0 * std::sqrt(2.0 * std::log(2.0)));
      const double peak = norm_length / (s * std::sqrt(2.0 * pi));
      return [=](double z) {
        const double u = (z - z0) / s;
        return peak * std::exp(-0.5 * u * u);
      };
    }
    case ProbeKind::dark_periodic:
    case ProbeKind::dark_single: {
      LambdaConfig cfg = lambda_config_for_resolution(
          sigma, period, z0, kind == ProbeKind::dark_single);
      // Single peak: also fold in a Gaussian coupling-intensity envelope.
      // The Omega_0 envelope alone leaves vanishing-width parasitic peaks at
      // the other Omega_1 zeros, where the overlap snaps back to one.
      const double waist = 0.25 * period;
      const bool single = kind == ProbeKind::dark_single;
      auto shape = [cfg, single, z0, waist](double z) {
        double v = cfg.overlap(z);
        if (single) {
          const double u = (z - z0) / waist;
          v *= std::exp(-u * u);
        }
        return v;
      };
      // normalize over one period (periodic) or the full envelope support
      const double half_window = single ? 3.0 * period : 0.5 * period;
      const int n = 4001;
      const double dz = 2.0 * half_window / (n - 1);
      double integral = 0.0;
      for (int i = 0; i < n; ++i) {
        const double z = z0 - half_window + i * dz;
        const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        integral += w * shape(z) * dz;
      }
      const double scale = norm_length / integral;
      return [shape, scale](double z) { return scale * shape(z); };
    }
  }
  throw ConfigError("unknown probe kind");
}

}  // namespace qscope
