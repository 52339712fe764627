#pragma once

#include <complex>
#include <stdexcept>
#include <string>

namespace qscope {

using complex = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr complex im{0.0, 1.0};
inline constexpr const char* version = "0.1.0";

// hbar = 1 everywhere; single-particle runs additionally use omega = l0 = 1,
// box runs use m = L = 1.

struct Interval {
  double lo, hi;
};

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidBasisError : Error {
  using Error::Error;
};
struct BasisMismatchError : Error {
  using Error::Error;
};
struct AccuracyError : Error {
  using Error::Error;
};
struct StepSizeError : Error {
  using Error::Error;
};
struct PositivityError : Error {
  using Error::Error;
};
struct DegenerateConfigurationError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace qscope
