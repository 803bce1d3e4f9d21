#pragma once

#include <stdexcept>

namespace rephop {

inline constexpr const char* kVersionTag = "rephop 0.1.0";

// Malformed or inconsistent input data (files, manifests, sequences).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure (non-convergence, domain violation at runtime).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rephop
