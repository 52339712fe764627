#include <catch2/catch_amalgamated.hpp>

#include "qscope/homodyne.hpp"
#include "qscope/noise.hpp"

using namespace qscope;

TEST_CASE("increment synthesis per regime") {
  MeasurementParams meas;
  meas.gamma = 4.0;
  CavityParams cavity{9.0, 0.0, 0.0, -0.5 * pi};
  const double dt = 0.01, dW = 0.3;
  // vacuum cavity: deterministic part zero
  REQUIRE(synthesize_increment(0.0, CurrentMode::full, meas, cavity, dW, dt) ==
          dW);
  // bad cavity with <f> = f_nn
  const double f_nn = 0.7;
  REQUIRE(synthesize_increment(f_nn, CurrentMode::bad_cavity, meas, cavity, dW,
                               dt) ==
          Catch::Approx(2.0 * 2.0 * f_nn * dt + dW));
  // full with <X> = 1.5
  REQUIRE(synthesize_increment(1.5, CurrentMode::full, meas, cavity, dW, dt) ==
          Catch::Approx(3.0 * 1.5 * dt + dW));
}

TEST_CASE("boxcar filter of a constant current gives c sqrt(tau)") {
  CurrentRecord rec;
  rec.dt = 0.01;
  const double c = 0.8;
  for (int k = 0; k < 1000; ++k) rec.push(k * rec.dt, c * rec.dt);
  const double tau = 0.5;
  auto sig = lowpass_filter(rec, tau);
  REQUIRE(!sig.values.empty());
  for (double v : sig.values)
    REQUIRE(v == Catch::Approx(c * std::sqrt(tau)).epsilon(1e-12));
  REQUIRE(sig.values.size() == rec.increments.size() - 50 + 1);
}

TEST_CASE("filter rejects too-short windows") {
  CurrentRecord rec;
  rec.dt = 0.01;
  rec.push(0.0, 0.0);
  REQUIRE_THROWS_AS(lowpass_filter(rec, 0.015), ConfigError);
}

TEST_CASE("pure-noise filtered variance approaches one") {
  CurrentRecord rec;
  rec.dt = 0.01;
  NoiseSource noise(21, 0);
  const int n = 400000;
  for (int k = 0; k < n; ++k) rec.push(k * rec.dt, noise.wiener(rec.dt));
  const double tau = 0.4;  // 40 steps per window
  auto sig = lowpass_filter(rec, tau);
  // use non-overlapping windows for an independent sample
  const int w = 40;
  double sum = 0.0, sq = 0.0;
  int count = 0;
  for (std::size_t i = 0; i + 1 < sig.values.size(); i += w) {
    sum += sig.values[i];
    sq += sig.values[i] * sig.values[i];
    ++count;
  }
  const double mean = sum / count;
  const double var = sq / count - mean * mean;
  // var(I_tau) = 1 exactly for Wiener input; 5 sigma gate on ~10^4 windows
  REQUIRE(count >= 9000);
  REQUIRE(std::abs(var - 1.0) < 5.0 * std::sqrt(2.0 / count));
  REQUIRE(std::abs(mean) < 5.0 / std::sqrt(double(count)));
}

TEST_CASE("filter is linear") {
  CurrentRecord a, b, comb;
  a.dt = b.dt = comb.dt = 0.01;
  NoiseSource noise(22, 0);
  for (int k = 0; k < 500; ++k) {
    const double x = noise.gaussian(), y = noise.gaussian();
    a.push(k * 0.01, x);
    b.push(k * 0.01, y);
    comb.push(k * 0.01, 2.0 * x - 3.0 * y);
  }
  auto fa = lowpass_filter(a, 0.1), fb = lowpass_filter(b, 0.1),
       fc = lowpass_filter(comb, 0.1);
  for (std::size_t i = 0; i < fc.values.size(); ++i)
    REQUIRE(fc.values[i] ==
            Catch::Approx(2.0 * fa.values[i] - 3.0 * fb.values[i])
                .margin(1e-12));
}

TEST_CASE("welford accumulator matches direct statistics and merges") {
  NoiseSource noise(23, 0);
  std::vector<Eigen::VectorXd> data;
  for (int i = 0; i < 50; ++i) {
    Eigen::VectorXd v(20);
    for (int j = 0; j < 20; ++j) v(j) = noise.gaussian() + 0.5 * j;
    data.push_back(v);
  }
  WelfordAccumulator all;
  for (const auto& v : data) all.add(v);
  // split in three and merge in a different order
  WelfordAccumulator p1, p2, p3;
  for (int i = 0; i < 15; ++i) p1.add(data[i]);
  for (int i = 15; i < 35; ++i) p2.add(data[i]);
  for (int i = 35; i < 50; ++i) p3.add(data[i]);
  WelfordAccumulator merged = p3;
  merged.merge(p1);
  merged.merge(p2);
  auto sa = all.stats(), sm = merged.stats();
  REQUIRE((sa.mean - sm.mean).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((sa.variance - sm.variance).cwiseAbs().maxCoeff() < 1e-12);
  // direct two-pass oracle
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(20);
  for (const auto& v : data) mean += v;
  mean /= 50.0;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(20);
  for (const auto& v : data) var += (v - mean).cwiseAbs2();
  var /= 49.0;
  REQUIRE((sa.mean - mean).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((sa.variance - var).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single record has zero variance") {
  FilteredSignal s;
  s.tau = 0.1;
  s.times = {0.0, 0.1};
  s.values = {1.0, 2.0};
  auto stats = ensemble_average(std::vector<FilteredSignal>{s});
  REQUIRE(stats.n_traj == 1);
  REQUIRE(stats.variance.maxCoeff() == 0.0);
}

TEST_CASE("standard error scales as the inverse square root of N") {
  // fit log(se) vs log(N): slope -0.5 +- 0.05
  std::vector<double> logN, logSE;
  for (int N : {50, 100, 200, 400, 800, 1600}) {
    NoiseSource noise(24, N);
    WelfordAccumulator acc;
    for (int i = 0; i < N; ++i) {
      Eigen::VectorXd v(1);
      v(0) = noise.gaussian();
      acc.add(v);
    }
    logN.push_back(std::log(double(N)));
    logSE.push_back(std::log(acc.stats().std_error(0)));
  }
  const int n = int(logN.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += logN[i];
    sy += logSE[i];
    sxx += logN[i] * logN[i];
    sxy += logN[i] * logSE[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  REQUIRE(slope == Catch::Approx(-0.5).margin(0.05));
}

TEST_CASE("snr definition and degenerate cases") {
  FilteredSignal proto;
  proto.tau = 0.1;
  proto.times = {0.0, 1.0, 2.0};
  // identical signals: zero variance -> error
  proto.values = {1.0, 1.0, 1.0};
  std::vector<FilteredSignal> same{proto, proto};
  REQUIRE_THROWS(snr(same, 1.0));
  // constructed mean/variance
  std::vector<FilteredSignal> ens;
  for (double v : {1.0, 2.0, 3.0}) {
    FilteredSignal s = proto;
    s.values = {v, v, v};
    ens.push_back(s);
  }
  // mean 2, sample variance 1 -> snr 4 at any time
  REQUIRE(snr(ens, 1.0) == Catch::Approx(4.0));
  // zero-mean noise ensemble: snr near 0
  NoiseSource noise(25, 0);
  std::vector<FilteredSignal> noise_ens;
  for (int i = 0; i < 200; ++i) {
    FilteredSignal s = proto;
    s.values = {noise.gaussian(), noise.gaussian(), noise.gaussian()};
    noise_ens.push_back(s);
  }
  REQUIRE(snr(noise_ens, 0.0) < 0.05);
}

TEST_CASE("filter-time guidance helper") {
  REQUIRE(suggested_filter_time(0.3, 10.0) == Catch::Approx(3.0));
}
