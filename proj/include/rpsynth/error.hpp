#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rpsynth {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent matrix or vector dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An algebraic loop (I - X Y) that cannot be inverted. Carries the smallest
// singular value of the interconnection matrix.
class IllPosedError : public Error {
 public:
  IllPosedError(const std::string& what, double min_singular_value)
      : Error(what), min_singular_value_(min_singular_value) {}
  double min_singular_value() const { return min_singular_value_; }

 private:
  double min_singular_value_;
};

// Decomposition failure, stagnation, or exhausted iteration budgets.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Evaluation outside the domain of a function, e.g. the H-infinity norm of
// an unstable closed loop.
class DomainError : public Error {
 public:
  using Error::Error;
};

// An active eigenvalue with fewer eigenvectors than its multiplicity; the
// spectral abscissa may fail to be locally Lipschitz there.
class DefectiveEigenvalueError : public Error {
 public:
  using Error::Error;
};

// Synthesis could not produce a controller; lists the scenarios (indices
// into the scenario set) still unstable at the returned gain.
class SynthesisError : public Error {
 public:
  SynthesisError(const std::string& what, std::vector<int> scenarios)
      : Error(what), scenarios_(std::move(scenarios)) {}
  const std::vector<int>& scenarios() const { return scenarios_; }

 private:
  std::vector<int> scenarios_;
};

}  // namespace rpsynth
