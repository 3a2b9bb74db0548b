#pragma once

#include <stdexcept>
#include <string>

namespace epitraj {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input-side failures (CLI exit code 2).
class FormatError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class ArgError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

// Geometric failures.
class DegenerateError : public Error { using Error::Error; };
class EpipoleError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };

// Estimation could not produce a usable model (CLI exit code 3).
class EstimationError : public Error { using Error::Error; };

}  // namespace epitraj
