#pragma once

#include <stdexcept>
#include <string>

namespace relforge {

// Base class for all library errors. The subclasses map onto the CLI exit
// codes: usage/config = 1, data = 2, backend exhaustion = 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or invalid arguments.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// A remote backend (LLM or NLI) failed, possibly after retries.
class BackendError : public Error {
 public:
  using Error::Error;
};

}  // namespace relforge
