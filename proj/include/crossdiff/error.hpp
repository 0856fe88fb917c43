#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crossdiff {

enum class ErrorCode {
  NonSymmetric,
  NotPositiveSemidefinite,
  NonPositiveCoefficient,
  BadDimension,
  EigenFailure,
  NonPositiveDensity,
  RootBracketFailure,
  MinimizerDiverged,
  SingularBlock,
  SimplexViolation,
  DegenerateSpectrumGap,
  SingularA0,
  DomainExit,
  PositivityLost,
  StepRejected,
  NoContraction,
  ConfigParse,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable error kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace crossdiff
