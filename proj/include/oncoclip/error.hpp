#pragma once

#include <stdexcept>
#include <string>

namespace oncoclip {

// Input data is malformed or inconsistent (missing phases, bad file, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An operation was invoked on an object in the wrong state (no forward cache,
// non-converged fit, ...).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A statistic is mathematically undefined on the given input (single-class
// labels, no comparable pairs, zero censoring survival, ...).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// An iterative fit or training run failed to converge or produced non-finite
// values.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace oncoclip
