#pragma once

#include <stdexcept>

namespace topogen {

/// Bad command line or API usage (missing/contradictory arguments).
/// The CLI maps this to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid input data: malformed files, out-of-range values, shape
/// mismatches between a checkpoint and a model config, and so on.
/// The CLI maps this to exit code 3.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A numerical failure detected at runtime (non-finite loss or gradient,
/// divergent optimizer state).  The CLI maps this to exit code 4.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace topogen
