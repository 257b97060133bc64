#pragma once

#include <stdexcept>
#include <string>

namespace blockopt {

struct RetriesExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateWeight : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidSchedule : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceDetected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvariantViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace blockopt
