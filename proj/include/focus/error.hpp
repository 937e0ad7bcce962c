#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace focus {

/// Malformed arguments handed to a library call (dimension mismatch, empty data, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration that cannot be realised (shard would be empty, bad key, ...).
class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Local SGD produced a non-finite loss.
class TrainingDivergence : public std::runtime_error {
 public:
  explicit TrainingDivergence(std::size_t step)
      : std::runtime_error("training diverged at local step " + std::to_string(step)),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Every participating client received zero credibility mass (sum n_k C_k == 0).
class DegenerateCredibility : public std::runtime_error {
 public:
  DegenerateCredibility()
      : std::runtime_error("degenerate credibility: sum of n_k * C_k is zero") {}
};

/// Wraps a failure inside a federated round with the round index attached.
class RoundError : public std::runtime_error {
 public:
  RoundError(std::size_t round, const std::string& what)
      : std::runtime_error("round " + std::to_string(round) + ": " + what), round_(round) {}

  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

}  // namespace focus
