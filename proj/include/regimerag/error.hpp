#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace regimerag {

enum class ErrorCode {
  InvalidArgument,
  // kb
  InvalidPath,
  DuplicatePath,
  ShapeMismatch,
  NonFiniteValue,
  NonMonotonicTimestamps,
  InvalidSchema,
  CorruptStore,
  VersionMismatch,
  Io,
  // weighting
  InvalidDecay,
  LengthMismatch,
  DimensionMismatch,
  EmptyKB,
  // retrieval
  EmptyView,
  // forecaster
  BackendUnavailable,
  MalformedResponse,
  // maintenance
  OutOfOrderRecord,
  // synth / config
  InvalidConfig,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception type thrown by every regimerag module. The C API maps the code
/// onto its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace regimerag
