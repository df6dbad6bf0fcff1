#pragma once

#include <stdexcept>
#include <string>

namespace mfcl {

// Error classes map one-to-one onto CLI exit codes (see tools/mfcl.cpp).

/// Invalid configuration value or cross-field violation. Exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, missing or unreadable data (WAV, manifest, checkpoint). Exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value or diverging optimization. Exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or matrix shapes that do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace mfcl
