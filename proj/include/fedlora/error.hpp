#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedlora {

enum class ErrorCode {
  kShape,
  kUnsupportedOp,
  kState,
  kNumeric,
  kParameter,
  kLabel,
  kMode,
  kProtocol,
  kDivergence,
  kInsufficientData,
  kPartitionInfeasible,
  kInsufficientShots,
  kEmptyCohort,
  kParse,
  kRange,
  kIo,
};

/// Stable machine-readable tag for an error category ("shape", "parse", ...).
std::string_view error_code_name(ErrorCode code);

/// The single exception type thrown by the library. The category is carried
/// as a code so the CLI can emit a parsable prefix.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fedlora
