#pragma once

#include <stdexcept>
#include <string>

namespace ttogm {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data is unreadable, malformed or violates a precondition.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Declared record count disagrees with the records actually present.
class RecordCountError : public FormatError {
 public:
  using FormatError::FormatError;
};

class PreconditionError : public DataError {
 public:
  using DataError::DataError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Registration found no point pairs within the correspondence radius.
class NoCorrespondencesError : public DataError {
 public:
  using DataError::DataError;
};

/// External cleaning model failed to start, answer, or answered badly.
class ModelError : public Error {
 public:
  using Error::Error;
};

class ShapeMismatchError : public ModelError {
 public:
  using ModelError::ModelError;
};

}  // namespace ttogm
