#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bioanon {

enum class ErrorKind {
  MissingFile,
  ParseError,
  InvariantViolation,
  InvalidCount,
  InvalidArgument,
  UnknownIdentity,
  DegenerateSplit,
  UnknownRegion,
  TooFewFrames,
  StripTooTall,
  EvenKernel,
  BackgroundTooSmall,
  DimensionMismatch,
  TooFewSamples,
  ModelNotFitted,
  SingleClass,
  KTooLarge,
  NTooLarge,
  MissingMetadata,
  SingleIdentity,
  EmptyPredictions,
  MixedCoordinates,
  ExternalToolFailed,
  IoError,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the grid
// runner's per-cell error records) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace bioanon
