#pragma once

#include <stdexcept>
#include <string>

namespace multipruner {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid argument or malformed input data.
struct InputError : Error {
  using Error::Error;
};

// Operation not allowed in the current model/mask state.
struct StateError : Error {
  using Error::Error;
};

// Checkpoint or token file does not match the expected layout.
struct FormatError : Error {
  using Error::Error;
};

// A pruning stage ran out of removable structure before its threshold.
struct ExhaustionError : Error {
  using Error::Error;
};

// The evolutionary archive has no individual near the requested ratio.
struct SearchError : Error {
  using Error::Error;
};

// Training diverged.
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace multipruner
