#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "qscope/common.hpp"
#include "qscope/hilbert.hpp"
#include "qscope/sme.hpp"

namespace qscope {

enum class CurrentMode { full, bad_cavity, good_cavity, manybody };

/// Homodyne record: dX_phi per integrator step on a uniform time grid.
struct CurrentRecord {
  std::vector<double> times;
  std::vector<double> increments;
  double dt = 0.0;
  CurrentMode mode = CurrentMode::bad_cavity;

  void push(double t, double dX) {
    times.push_back(t);
    increments.push_back(dX);
  }
};

/// Boxcar-filtered current I_tau(t) = (1/sqrt(tau)) * integral_[t, t+tau) I dt.
struct FilteredSignal {
  std::vector<double> times;
  std::vector<double> values;
  double tau = 0.0;
};

/// Deterministic part of the homodyne increment for each regime; the Wiener
/// increment must be the one consumed by the paired SME step.
inline double synthesize_increment(double expectation_value, CurrentMode mode,
                                   const MeasurementParams& meas,
                                   const CavityParams& cavity, double dW,
                                   double dt) {
  switch (mode) {
    case CurrentMode::full:
      return std::sqrt(cavity.kappa) * expectation_value * dt + dW;
    case CurrentMode::bad_cavity:
    case CurrentMode::good_cavity:
    case CurrentMode::manybody:
      return 2.0 * std::sqrt(meas.gamma) * expectation_value * dt + dW;
  }
  throw Error("unknown current mode");
}

/// Convenience overload computing <X_phi>_c (full model) or <f>_c from the
/// conditional state.
inline double synthesize_increment(const DensityMatrix& state,
                                   const OperatorMatrix& observable,
                                   CurrentMode mode,
                                   const MeasurementParams& meas,
                                   const CavityParams& cavity, double dW,
                                   double dt) {
  require_same_basis(state.basis, observable.basis);
  return synthesize_increment(expectation(observable, state).real(), mode,
                              meas, cavity, dW, dt);
}

/// Quadrature operator X_phi = e^{i phi} c+ + e^{-i phi} c on the product
/// basis of a FullSmeWorkspace.
inline OperatorMatrix quadrature_op(const FullSmeWorkspace& ws) {
  Eigen::MatrixXcd x = std::exp(im * ws.cavity.phi) * ws.c.adjoint() +
                       std::exp(-im * ws.cavity.phi) * ws.c;
  return {ws.basis, std::move(x), true};
}

/// Sliding boxcar filter, window anchored at t (forward integral), output on
/// the input grid for every start time with a full window.
inline FilteredSignal lowpass_filter(const CurrentRecord& record, double tau) {
  if (record.dt <= 0) throw Error("record has no time step");
  if (tau < 2.0 * record.dt)
    throw ConfigError("filter time tau must be at least 2*dt");
  const int w = int(std::lround(tau / record.dt));
  const int n = int(record.increments.size());
  FilteredSignal out;
  out.tau = tau;
  if (n < w) return out;
  const double inv_sqrt_tau = 1.0 / std::sqrt(tau);
  double window_sum = 0.0;
  for (int i = 0; i < w; ++i) window_sum += record.increments[i];
  out.times.reserve(n - w + 1);
  out.values.reserve(n - w + 1);
  out.times.push_back(record.times.front());
  out.values.push_back(window_sum * inv_sqrt_tau);
  for (int k = 1; k + w <= n; ++k) {
    window_sum += record.increments[k + w - 1] - record.increments[k - 1];
    out.times.push_back(record.times[k]);
    out.values.push_back(window_sum * inv_sqrt_tau);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ensemble statistics (Welford, associative merge)

struct EnsembleStats {
  int n_traj = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd std_error;
};

/// Streaming mean/variance accumulator over equal-length signals; partial
/// accumulators from concurrent workers merge associatively.
class WelfordAccumulator {
 public:
  void add(const Eigen::VectorXd& x) {
    if (count_ == 0) {
      mean_ = x;
      m2_ = Eigen::VectorXd::Zero(x.size());
      count_ = 1;
      return;
    }
    if (x.size() != mean_.size()) throw Error("signal grid mismatch");
    ++count_;
    Eigen::VectorXd delta = x - mean_;
    mean_ += delta / double(count_);
    m2_ += delta.cwiseProduct(x - mean_);
  }

  void merge(const WelfordAccumulator& other) {
    if (other.count_ == 0) return;
    if (count_ == 0) {
      *this = other;
      return;
    }
    if (other.mean_.size() != mean_.size())
      throw Error("signal grid mismatch");
    const double na = count_, nb = other.count_;
    Eigen::VectorXd delta = other.mean_ - mean_;
    mean_ = (na * mean_ + nb * other.mean_) / (na + nb);
    m2_ += other.m2_ + delta.cwiseAbs2() * (na * nb / (na + nb));
    count_ += other.count_;
  }

  EnsembleStats stats() const {
    EnsembleStats s;
    s.n_traj = count_;
    s.mean = mean_;
    if (count_ > 1)
      s.variance = m2_ / double(count_ - 1);
    else
      s.variance = Eigen::VectorXd::Zero(mean_.size());
    s.std_error = (s.variance / double(std::max(count_, 1))).cwiseSqrt();
    return s;
  }

  int count() const { return count_; }

 private:
  int count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

inline EnsembleStats ensemble_average(
    const std::vector<FilteredSignal>& records) {
  if (records.empty()) throw Error("empty ensemble");
  WelfordAccumulator acc;
  for (const auto& r : records)
    acc.add(Eigen::Map<const Eigen::VectorXd>(r.values.data(),
                                              long(r.values.size())));
  return acc.stats();
}

inline EnsembleStats ensemble_average(
    const std::vector<CurrentRecord>& records) {
  if (records.empty()) throw Error("empty ensemble");
  WelfordAccumulator acc;
  for (const auto& r : records)
    acc.add(Eigen::Map<const Eigen::VectorXd>(r.increments.data(),
                                              long(r.increments.size())));
  return acc.stats();
}

/// SNR = <I_tau(t)>^2_st / <delta I_tau^2(t)>_st at the grid point nearest
/// at_time.
inline double snr(const std::vector<FilteredSignal>& ensemble,
                  double at_time) {
  if (ensemble.size() < 2) throw Error("snr needs at least two signals");
  const auto& t = ensemble.front().times;
  for (const auto& s : ensemble) {
    if (s.tau != ensemble.front().tau || s.times.size() != t.size())
      throw Error("snr needs a common tau and grid");
  }
  int k = 0;
  double best = std::abs(t[0] - at_time);
  for (int i = 1; i < int(t.size()); ++i) {
    const double d = std::abs(t[i] - at_time);
    if (d < best) {
      best = d;
      k = i;
    }
  }
  double mean = 0.0;
  for (const auto& s : ensemble) mean += s.values[k];
  mean /= double(ensemble.size());
  double var = 0.0;
  for (const auto& s : ensemble) var += std::pow(s.values[k] - mean, 2);
  var /= double(ensemble.size() - 1);
  if (var <= 0) throw Error("snr: degenerate ensemble with zero variance");
  return mean * mean / var;
}

/// Filter-time guidance tau ~ (sigma/l0) * tau_transit; a default, not a
/// constraint.
inline double suggested_filter_time(double sigma_over_l0,
                                    double transit_time) {
  return sigma_over_l0 * transit_time;
}

}  // namespace qscope
