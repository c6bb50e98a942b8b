#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace pirl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was broken by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// The integrator produced a non-finite state.
class IntegrationDiverged : public Error {
 public:
  IntegrationDiverged(const std::string& what, std::vector<double> state)
      : Error(what), state_(std::move(state)) {}
  const std::vector<double>& state() const { return state_; }

 private:
  std::vector<double> state_;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Explicit time step too large for the monotone scheme.
class CflError : public Error {
 public:
  CflError(const std::string& what, double suggested_dtau)
      : Error(what), suggested_dtau_(suggested_dtau) {}
  double suggested_dtau() const { return suggested_dtau_; }

 private:
  double suggested_dtau_;
};

/// Training hit a non-finite loss; `snapshot` is a human-readable dump.
class NumericAbort : public Error {
 public:
  NumericAbort(const std::string& what, std::string snapshot)
      : Error(what), snapshot_(std::move(snapshot)) {}
  const std::string& snapshot() const { return snapshot_; }

 private:
  std::string snapshot_;
};

}  // namespace pirl
