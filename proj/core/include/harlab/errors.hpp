#pragma once

#include <stdexcept>
#include <string>

namespace harlab {

/// Invalid configuration: bad architecture, inconsistent feature block
/// arithmetic, malformed config documents. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input data: schema violations, label problems, wrong shapes
/// fed to an operation. Maps to CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced non-finite values or could not be stabilized.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace harlab
