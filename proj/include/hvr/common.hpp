#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hvr {

// Coefficient matrices are at most 2x2; fixed max size keeps them off the heap.
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 2, 2>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 2, 1>;

inline SmallMat scaled_identity(int d, double c) {
  SmallMat m = SmallMat::Identity(d, d);
  return m * c;
}

/// Smallest eigenvalue of a symmetric 1x1 or 2x2 matrix.
double min_eigenvalue(const SmallMat& m);

/// Largest absolute entrywise difference.
double max_abs_diff(const SmallMat& a, const SmallMat& b);

class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedOperation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual, std::size_t iterations)
      : std::runtime_error(what), residual_(residual), iterations_(iterations) {}
  double residual() const { return residual_; }
  std::size_t iterations() const { return iterations_; }

 private:
  double residual_;
  std::size_t iterations_;
};

// Raised by estimators when one realization fails; carries its index.
class RealizationError : public std::runtime_error {
 public:
  RealizationError(std::size_t index, const std::string& cause)
      : std::runtime_error("realization " + std::to_string(index) + ": " + cause), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

}  // namespace hvr
