#pragma once

#include <stdexcept>
#include <string>

namespace choiceset {

/// Precondition violated by the caller (bad index, malformed model, empty cell).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input text could not be parsed. The message names the offending line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The data do not pin down the mixture (singular pivots, inseparable components).
class IdentificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical trouble above a configured tolerance (complex eigenvalues, negative
/// eigenvector entries).
class IllConditionedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A search was refused because its size exceeds the configured budget.
class BudgetExceededError : public std::runtime_error {
 public:
  BudgetExceededError(const std::string& what, unsigned long long count)
      : std::runtime_error(what), count_(count) {}
  unsigned long long count() const noexcept { return count_; }

 private:
  unsigned long long count_;
};

}  // namespace choiceset
