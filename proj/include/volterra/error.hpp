#pragma once

#include <stdexcept>
#include <string>

namespace volterra {

enum class ErrorCode {
  InvalidParams,
  EvalAtSingularity,
  QuadratureFailure,
  NotCompletelyMonotone,
  SingularSystem,
  InconsistentRoutes,
  BoundViolation,
  GridMismatch,
  DegenerateSystem,
  DivergentIntegral,
  InvalidOrder,
  OutOfRegion,
  NoLimitAtInfinity,
  IllConditioned,
  NumericalBlowup,
  MissingHistory,
  TooFewPaths,
  EmptyBin,
  ConfigInvalid,
};

const char* to_string(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode c, const std::string& msg) { throw Error(c, msg); }

}  // namespace volterra
