#pragma once

#include <stdexcept>
#include <string>

namespace t3d {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside its mathematical domain (t outside [0,1], token >= vocab, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Object used in a state that no longer permits the call.
class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Exact enumeration would exceed the configured support budget.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// A forward op produced inf/NaN from finite inputs.
class OverflowError : public Error {
 public:
  using Error::Error;
};

class CorruptRecordError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace t3d
