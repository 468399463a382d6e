#pragma once

#include <stdexcept>
#include <string>

namespace sml {

// Input data is unusable (unreadable file, bad schema, nothing left after
// filtering, corrupted model file).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent configuration or command-line arguments.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sml
