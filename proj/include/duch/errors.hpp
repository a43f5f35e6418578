#ifndef DUCH_ERRORS_HPP_
#define DUCH_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace duch {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Batch of size 1 in train-mode batch norm, or a zero-norm row where a
// direction is required.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset / code file / checkpoint ingestion failures. Each subclass is a
// distinct, catchable condition.
class FormatError : public Error {
 public:
  using Error::Error;
};
class MissingFileError : public FormatError {
 public:
  using FormatError::FormatError;
};
class SizeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};
class NonFiniteError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace duch

#endif  // DUCH_ERRORS_HPP_
