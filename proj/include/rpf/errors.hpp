#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rpf {

// Input failed validation. `field()` carries a dotted path to the offending
// value (e.g. "stations[2].rate_mbps") when one is known.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what, std::string field = {})
      : std::invalid_argument(field.empty() ? what : field + ": " + what),
        message_(what),
        field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }
  // The description without the field prefix.
  const std::string& message() const noexcept { return message_; }

  // `prefix` joined in front of this error's field path.
  std::string nested_field(const std::string& prefix) const {
    return field_.empty() ? prefix : prefix + "." + field_;
  }

 private:
  std::string message_;
  std::string field_;
};

class InvalidRateError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A requested operating point cannot be realized (e.g. tau = 0 has no CW).
class InfeasibleError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Caller broke a documented precondition that cannot be checked by types.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Iterative solver gave up. Carries the best iterate it found.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double best_residual,
              std::vector<double> best_iterate)
      : std::runtime_error(what),
        best_residual_(best_residual),
        best_iterate_(std::move(best_iterate)) {}

  double best_residual() const noexcept { return best_residual_; }
  const std::vector<double>& best_iterate() const noexcept {
    return best_iterate_;
  }

 private:
  double best_residual_;
  std::vector<double> best_iterate_;
};

}  // namespace rpf
