#pragma once

#include <stdexcept>
#include <string>

namespace deae {

// Raised for malformed or inconsistent input data (bad records, broken
// invariants, schema violations). Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised for failures during a run that are not the user's data (non-finite
// loss, I/O on outputs). Maps to CLI exit code 3.
class ComputeError : public std::runtime_error {
 public:
  explicit ComputeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace deae
