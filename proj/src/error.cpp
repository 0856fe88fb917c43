#include "crossdiff/error.hpp"

namespace crossdiff {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonSymmetric: return "NonSymmetric";
    case ErrorCode::NotPositiveSemidefinite: return "NotPositiveSemidefinite";
    case ErrorCode::NonPositiveCoefficient: return "NonPositiveCoefficient";
    case ErrorCode::BadDimension: return "BadDimension";
    case ErrorCode::EigenFailure: return "EigenFailure";
    case ErrorCode::NonPositiveDensity: return "NonPositiveDensity";
    case ErrorCode::RootBracketFailure: return "RootBracketFailure";
    case ErrorCode::MinimizerDiverged: return "MinimizerDiverged";
    case ErrorCode::SingularBlock: return "SingularBlock";
    case ErrorCode::SimplexViolation: return "SimplexViolation";
    case ErrorCode::DegenerateSpectrumGap: return "DegenerateSpectrumGap";
    case ErrorCode::SingularA0: return "SingularA0";
    case ErrorCode::DomainExit: return "DomainExit";
    case ErrorCode::PositivityLost: return "PositivityLost";
    case ErrorCode::StepRejected: return "StepRejected";
    case ErrorCode::NoContraction: return "NoContraction";
    case ErrorCode::ConfigParse: return "ConfigParse";
  }
  return "Unknown";
}

}  // namespace crossdiff
