#pragma once

#include <stdexcept>
#include <string>

namespace stepmppi {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class SingularMatrix : public Error {
 public:
  using Error::Error;
};

/// A user-supplied function produced non-finite output.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Integration produced a non-finite state. `step` is the offending time
/// index (or sample index, depending on the caller) when known, -1 otherwise.
class DivergedState : public Error {
 public:
  DivergedState(const std::string& what, long step = -1)
      : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericOverflow : public Error {
 public:
  using Error::Error;
};

}  // namespace stepmppi
