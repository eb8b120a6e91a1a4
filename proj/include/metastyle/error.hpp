#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace metastyle {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can separate our errors from unexpected ones.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class WeightError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class CodecError : public Error {
 public:
  using Error::Error;
};

// Malformed archive contents (bad header, unreadable metadata).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Archive whose payload does not agree with its header (truncation, bad
// offsets, checksum mismatch).
class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  VersionError(std::int64_t found, std::int64_t supported);
  std::int64_t found() const { return found_; }
  std::int64_t supported() const { return supported_; }

 private:
  std::int64_t found_;
  std::int64_t supported_;
};

// Archive is well formed but lacks a tensor or has one of the wrong shape.
class LoadError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t iteration, const std::string& what);
  std::int64_t iteration() const { return iteration_; }

 private:
  std::int64_t iteration_;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string key, std::string value, std::string constraint);
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace metastyle
