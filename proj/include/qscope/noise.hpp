#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "qscope/common.hpp"

namespace qscope {

/// Seeded Gaussian noise stream. Each (seed, stream_id) pair yields a
/// reproducible, bit-identical sequence of Wiener increments; distinct
/// trajectories of an ensemble use distinct stream_ids on the same seed.
///
/// The normal deviates are produced by an explicit Box-Muller transform on
/// top of mt19937_64, since std::normal_distribution is not pinned down by
/// the standard.
class NoiseSource {
 public:
  NoiseSource(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), rng_(mix(seed, stream_id)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Standard normal deviate N(0, 1).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1], u2 in [0, 1)
    const double u1 =
        (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * pi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * pi * u2);
  }

  /// Wiener increment dW over a step dt: N(0, dt).
  double wiener(double dt) { return std::sqrt(dt) * gaussian(); }

 private:
  // splitmix64 over the (seed, stream) pair decorrelates nearby streams.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace qscope
