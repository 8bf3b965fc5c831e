#pragma once

#include <stdexcept>
#include <string>

namespace milpf {

// Malformed or invariant-violating data: bad containers, leakage, dimension
// mismatches, non-finite values. The CLI maps these to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent arguments or configuration (programmer or operator error).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace milpf

namespace milpf {

// A computation produced a non-finite value (overflowing loss, exploding
// gradient). The message names the parameter tensor involved.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace milpf
