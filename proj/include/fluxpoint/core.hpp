#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <exception>
#include <stdexcept>
#include <string>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fluxpoint {

using Vec = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Base for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDomain : public Error {
 public:
  using Error::Error;
};

// A point (or candidate position) has fewer support members than the
// monomial count required for second-order consistency.
class InsufficientSupport : public Error {
 public:
  explicit InsufficientSupport(int point_id, int have, int need)
      : Error("insufficient support at point " + std::to_string(point_id) +
              ": " + std::to_string(have) + " members, need " +
              std::to_string(need)),
        point_id(point_id) {}
  int point_id;
};

class IllConditioned : public Error {
 public:
  using Error::Error;
};

class DegenerateCell : public Error {
 public:
  using Error::Error;
};

class InvalidBoundary : public Error {
 public:
  using Error::Error;
};

class SolverBreakdown : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class SolveError : public Error {
 public:
  using Error::Error;
};

enum class ExecPolicy { Serial, Parallel };

// Data-parallel loop over [0, n). Exceptions thrown by the body are captured
// and the one with the lowest index is rethrown after the loop, so failure
// behaviour is identical between the serial and OpenMP paths.
template <typename F>
void parallel_for(std::int64_t n, F&& body,
                  ExecPolicy policy = ExecPolicy::Parallel) {
#ifdef _OPENMP
  if (policy == ExecPolicy::Parallel && n > 1) {
    std::exception_ptr first_error = nullptr;
    std::int64_t first_error_index = n;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      try {
        body(i);
      } catch (...) {
#pragma omp critical(fluxpoint_parallel_for_error)
        if (i < first_error_index) {
          first_error_index = i;
          first_error = std::current_exception();
        }
      }
    }
    if (first_error) std::rethrow_exception(first_error);
    return;
  }
#else
  (void)policy;
#endif
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace fluxpoint
