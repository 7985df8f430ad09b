#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ogen {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Bad input data or configuration. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated file contents.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Non-finite loss or parameters during optimization. Exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rounds every entry to the nearest float32 value. Parameters are kept in
// double for arithmetic but only ever hold float32-representable values, so
// float32 checkpoints are lossless.
template <typename Derived>
void round_to_float(Eigen::MatrixBase<Derived>& m) {
  m = m.template cast<float>().template cast<double>();
}

}  // namespace ogen
