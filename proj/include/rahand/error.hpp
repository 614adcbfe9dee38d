#pragma once

#include <stdexcept>
#include <string>

namespace rahand {

enum class ErrorKind {
  kSchema,
  kValidation,
  kConfiguration,
  kCheckpoint,
  kNumerical,
  kIo,
  kUndefinedLoss,
};

const char* ErrorKindName(ErrorKind kind);

// Every failure raised by the library carries a kind so the CLI can emit a
// one-line machine-parseable error.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& m) : Error(ErrorKind::kSchema, m) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& m) : Error(ErrorKind::kValidation, m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorKind::kConfiguration, m) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& m) : Error(ErrorKind::kCheckpoint, m) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& m) : Error(ErrorKind::kNumerical, m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorKind::kIo, m) {}
};

class UndefinedLossError : public Error {
 public:
  explicit UndefinedLossError(const std::string& m) : Error(ErrorKind::kUndefinedLoss, m) {}
};

}  // namespace rahand
