#pragma once

#include <stdexcept>
#include <string>

namespace enlm {

// Base of every error raised by the library. The CLI maps subclasses to exit
// codes, so new failure kinds should derive from the closest existing class.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// A documented precondition or state-machine rule was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

// Entity embedding missing from (or inconsistent with) the registry.
class LifecycleError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace enlm
