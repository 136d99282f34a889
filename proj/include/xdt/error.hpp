#pragma once

#include <stdexcept>
#include <string>

namespace xdt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (manifests, split files, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Binary file decoding failures: bad magic, version, truncation, checksum.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Failures raised by, or attributed to, an encoder adapter.
class AdapterError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (head, loss, training, experiment files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace xdt
