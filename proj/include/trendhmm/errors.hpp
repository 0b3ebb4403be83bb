#pragma once

#include <stdexcept>
#include <string>

namespace trendhmm {

/// Input that violates a documented invariant (bad parameters, bad config).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Weighted least-squares system without full column rank.
class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(int rank, int columns)
      : std::runtime_error("rank-deficient least-squares system: rank " + std::to_string(rank) +
                           " < " + std::to_string(columns) + " columns"),
        rank_(rank),
        columns_(columns) {}

  int rank() const noexcept { return rank_; }
  int columns() const noexcept { return columns_; }

 private:
  int rank_;
  int columns_;
};

/// A hidden state whose posterior mass is too small to support its M-step.
class DegenerateStateError : public std::runtime_error {
 public:
  DegenerateStateError(int state, double mass)
      : std::runtime_error("degenerate state " + std::to_string(state + 1) +
                           ": posterior mass " + std::to_string(mass)),
        state_(state) {}

  /// Zero-based state index.
  int state() const noexcept { return state_; }

 private:
  int state_;
};

/// Tolerance-based trend equivalence that is not transitive.
class NonTransitiveBlocksError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problem instance too large for an exhaustive routine.
class SizeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Every EM restart failed.
class FitFailedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace trendhmm
