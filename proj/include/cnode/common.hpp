#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cnode {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or size disagreement between caller and callee.
struct DimensionError : Error {
  DimensionError(const std::string& where, Index expected, Index actual)
      : Error(where + ": expected size " + std::to_string(expected) +
              ", got " + std::to_string(actual)),
        expected(expected),
        actual(actual) {}
  Index expected;
  Index actual;
};

// Violated precondition on an API that is not a plain size mismatch.
struct ContractError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct TaskError : Error {
  using Error::Error;
};

struct UnsupportedMethodError : Error {
  using Error::Error;
};

// Non-finite value produced while integrating; carries the time it appeared.
struct InstabilityError : Error {
  InstabilityError(const std::string& msg, double s)
      : Error(msg + " at s=" + std::to_string(s)), s(s) {}
  double s;
};

// NaN/Inf gradient handed to the optimizer; names the parameter segment.
struct PoisonedGradientError : Error {
  explicit PoisonedGradientError(const std::string& segment)
      : Error("non-finite gradient in segment '" + segment + "'"),
        segment(segment) {}
  std::string segment;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace cnode
