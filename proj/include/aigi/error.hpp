#pragma once

#include <stdexcept>
#include <string>

namespace aigi {

/// Machine-readable category carried by every toolkit exception. The CLI
/// reports it in its error JSON.
enum class ErrorKind {
  InvalidArgument,
  ShapeMismatch,
  MissingFeed,
  NonScalarLoss,
  SingleClass,
  EmptyInput,
  WrongFamily,
  TrainingDiverged,
  Io,
  Format,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace aigi
