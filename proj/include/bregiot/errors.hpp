#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace bregiot {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the (interior of the) domain of phi or psi.
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Operation needs a generator property it does not have (e.g. phi'_0 = -inf).
class GeneratorError : public Error {
 public:
  using Error::Error;
};

class UnsupportedCase : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class MaxIterationsExceeded : public Error {
 public:
  MaxIterationsExceeded(const std::string& what, std::vector<double> residuals)
      : Error(what), residuals_(std::move(residuals)) {}
  const std::vector<double>& residuals() const noexcept { return residuals_; }

 private:
  std::vector<double> residuals_;
};

class LineSearchFailure : public Error {
 public:
  using Error::Error;
};

class EigenFailure : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace bregiot
