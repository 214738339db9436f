#pragma once

#include <stdexcept>
#include <string>

namespace vrcpi {

/// Malformed caller input: bad shapes, out-of-range parameters, non-finite data.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A probability vector or transition row does not sum to one.
class StochasticityError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

/// Schema violations while reading JSON documents.
class SchemaError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

/// A probability-one guarantee or a dual-route cross-check failed at runtime.
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A geometric rollout phase exceeded its safety cap. The partial sample is
/// discarded so that every returned sample stays unbiased.
class TruncationError : public std::runtime_error {
 public:
  TruncationError(const std::string& what, std::size_t steps)
      : std::runtime_error(what), steps_(steps) {}
  std::size_t steps_consumed() const noexcept { return steps_; }

 private:
  std::size_t steps_;
};

/// The parameter planner could not satisfy its conditions.
class InfeasiblePlan : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure that should be impossible for valid inputs.
class InternalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vrcpi
