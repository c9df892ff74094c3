#ifndef TOBITIV_ERRORS_HPP
#define TOBITIV_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace tobitiv {

enum class ErrorKind {
  Domain,
  UnsupportedOrder,
  Convergence,
  InsufficientAcceptance,
  Configuration,
  UnsupportedMode,
  EmptySystem,
  Identification,
  InsufficientObservations,
  Bracket,
  NotApplicable,
  Io,
  TooManyFailures,
};

std::string_view to_string(ErrorKind kind);

// Every library failure is reported through this type; `kind` lets callers
// (the CLI in particular) map failures onto exit codes without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double achieved_error)
      : Error(ErrorKind::Convergence, message), achieved_error_(achieved_error) {}

  double achieved_error() const noexcept { return achieved_error_; }

 private:
  double achieved_error_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(ErrorKind::Configuration, field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace tobitiv

#endif  // TOBITIV_ERRORS_HPP
