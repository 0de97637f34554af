#ifndef NLME_ERRORS_HPP
#define NLME_ERRORS_HPP

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace nlme {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cholesky factorization failed. `pivot` is the zero-based index of the
/// first non-positive pivot, or -1 when the failure is not attributable to
/// one pivot (e.g. the jitter ladder was exhausted).
class FactorizationError : public Error {
 public:
  FactorizationError(const std::string& what, Eigen::Index pivot)
      : Error(what), pivot_(pivot) {}
  Eigen::Index pivot() const noexcept { return pivot_; }

 private:
  Eigen::Index pivot_;
};

/// The structural model produced a non-finite prediction at `time_index`.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, Eigen::Index time_index)
      : Error(what), time_index_(time_index) {}
  Eigen::Index time_index() const noexcept { return time_index_; }

 private:
  Eigen::Index time_index_;
};

/// A parameter lies outside the domain of a structural model.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A Jacobian entry could not be estimated as a finite number.
class DerivativeError : public Error {
 public:
  DerivativeError(const std::string& what, Eigen::Index row, Eigen::Index col)
      : Error(what), row_(row), col_(col) {}
  Eigen::Index row() const noexcept { return row_; }
  Eigen::Index col() const noexcept { return col_; }

 private:
  Eigen::Index row_;
  Eigen::Index col_;
};

/// Malformed input data or configuration. `line` is 1-based, 0 if unknown.
class InputError : public Error {
 public:
  InputError(const std::string& what, std::size_t line = 0)
      : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace nlme

#endif  // NLME_ERRORS_HPP
