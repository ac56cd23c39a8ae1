#ifndef DUALFILTER_ERRORS_H_
#define DUALFILTER_ERRORS_H_

#include <stdexcept>
#include <string>

namespace dualfilter {

// Base class for every error raised by the library. `kind()` is a stable
// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

// Invalid model parameters: dimensions, stochasticity, covariance structure.
class ModelError : public Error {
 public:
  explicit ModelError(const std::string& what) : Error("model_error", what) {}
};

// Argument shapes or ranges that violate an operation's precondition.
class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what)
      : Error("argument_error", what) {}
};

// Linear algebra breakdown (singular system that should not be singular).
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error("numeric_error", what) {}
};

// Observation sequence has zero probability under the model.
class ImpossiblePathError : public Error {
 public:
  ImpossiblePathError(int step, const std::string& what)
      : Error("impossible_path", what), step_(step) {}
  // Observation index (1-based) at which the normalizer vanished.
  int step() const { return step_; }

 private:
  int step_;
};

// Iterative solver stopped at max_iter; carries the last update size.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual, int iterations)
      : Error("non_convergence", what),
        residual_(residual),
        iterations_(iterations) {}
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

// Exact tree enumeration refused because (m+1)^T exceeds the guard.
class TreeTooLargeError : public Error {
 public:
  explicit TreeTooLargeError(const std::string& what)
      : Error("tree_too_large", what) {}
};

}  // namespace dualfilter

#endif  // DUALFILTER_ERRORS_H_
