#include "volterra/error.hpp"

namespace volterra {

const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::EvalAtSingularity: return "EvalAtSingularity";
    case ErrorCode::QuadratureFailure: return "QuadratureFailure";
    case ErrorCode::NotCompletelyMonotone: return "NotCompletelyMonotone";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::InconsistentRoutes: return "InconsistentRoutes";
    case ErrorCode::BoundViolation: return "BoundViolation";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::DegenerateSystem: return "DegenerateSystem";
    case ErrorCode::DivergentIntegral: return "DivergentIntegral";
    case ErrorCode::InvalidOrder: return "InvalidOrder";
    case ErrorCode::OutOfRegion: return "OutOfRegion";
    case ErrorCode::NoLimitAtInfinity: return "NoLimitAtInfinity";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::NumericalBlowup: return "NumericalBlowup";
    case ErrorCode::MissingHistory: return "MissingHistory";
    case ErrorCode::TooFewPaths: return "TooFewPaths";
    case ErrorCode::EmptyBin: return "EmptyBin";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

}  // namespace volterra
