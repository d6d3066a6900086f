#pragma once

#include <stdexcept>
#include <string>

namespace ectfusion {

/// Error classes map onto distinct CLI exit codes.
enum class ErrorClass : int {
  usage = 1,
  schema = 2,
  init = 3,
  adaptation = 4,
  convergence = 5,
  config = 6,
  domain = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what)
      : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }
  int exit_code() const noexcept { return static_cast<int>(cls_); }

 private:
  ErrorClass cls_;
};

/// Missing column, malformed row, or inconsistent per-subject covariates.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what)
      : Error(ErrorClass::schema, what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(ErrorClass::domain, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorClass::config, what) {}
};

class InitError : public Error {
 public:
  explicit InitError(const std::string& what) : Error(ErrorClass::init, what) {}
};

class AdaptationError : public Error {
 public:
  explicit AdaptationError(const std::string& what)
      : Error(ErrorClass::adaptation, what) {}
};

}  // namespace ectfusion
