#pragma once

#include <stdexcept>
#include <string>

namespace cvxspline {

/// Precondition violations on public entry points (bad degree, x outside [0,1], ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A reduced system F Lambda F^T (or X^T X) is numerically singular.
class SingularSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The active-set solver hit its iteration cap or its final certificate failed.
class NotCertified : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The pointwise procedure cannot place x0 far enough from the boundary bins.
class BoundaryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace detail
}  // namespace cvxspline
