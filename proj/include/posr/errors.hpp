#pragma once

#include <stdexcept>
#include <string>

namespace posr {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes passed to an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Math domain violations (log of a non-positive value and friends).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Bad argument values: labels out of range, empty inputs, invalid counts.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Config file parsing / validation failures.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A model/loss combination that cannot service the request.
class UnsupportedConfigurationError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failures (open/write).
class FileIoError : public Error {
 public:
  using Error::Error;
};

// Structural problems in a binary container.
class FileFormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FileFormatError {
 public:
  using FileFormatError::FileFormatError;
};

class UnsupportedVersionError : public FileFormatError {
 public:
  using FileFormatError::FileFormatError;
};

class TruncatedFileError : public FileFormatError {
 public:
  using FileFormatError::FileFormatError;
};

class CsvParseError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

// grad_check detected a loss closure that is not reproducible.
class NondeterministicLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace posr
