#include "fedlora/error.hpp"

namespace fedlora {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kUnsupportedOp: return "unsupported-op";
    case ErrorCode::kState: return "state";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kParameter: return "parameter";
    case ErrorCode::kLabel: return "label";
    case ErrorCode::kMode: return "mode";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kPartitionInfeasible: return "partition-infeasible";
    case ErrorCode::kInsufficientShots: return "insufficient-shots";
    case ErrorCode::kEmptyCohort: return "empty-cohort";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kRange: return "range";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace fedlora
