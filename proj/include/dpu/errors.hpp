#pragma once
#include <stdexcept>
#include <string>

namespace dpu {

// Error hierarchy shared by every module. Each condition the library can
// reject has its own type so callers (and tests) can catch it precisely.

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct InvalidInputError : Error {
  using Error::Error;
};
struct NotFittedError : Error {
  using Error::Error;
};
struct SingularSystemError : Error {
  using Error::Error;
};
struct FidelityKindError : Error {
  using Error::Error;
};
struct UnsupportedFrameworkError : Error {
  using Error::Error;
};
struct UnsupportedOpError : Error {
  using Error::Error;
};
struct DegenerateStatisticsError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct BatchError : Error {
  using Error::Error;
};
struct CheckpointError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// Non-finite value detected inside an iterative scheme. Carries the
// iteration (or optimizer step) at which the blow-up was observed.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, long at)
      : Error(what + " (iteration " + std::to_string(at) + ")"), iteration(at) {}
  long iteration;
};

}  // namespace dpu
