#pragma once

#include <stdexcept>
#include <string>

namespace mts3 {

/// Input violates a mathematical precondition (non-PD covariance, non-positive variance).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operand dimensions disagree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable dataset / checkpoint / config.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss or gradient became non-finite. `where` carries the offending step or batch index.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long where)
      : std::runtime_error(what + " (index " + std::to_string(where) + ")"), where_(where) {}

  long where() const noexcept { return where_; }

 private:
  long where_;
};

}  // namespace mts3
