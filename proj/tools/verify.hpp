#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crossdiff/model.hpp"

namespace crossdiff::cli {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 20240611;
  int samples = 200;
  double symmetry_tol = 1e-12;
  int grid_N = 0;
  /// Test hook: perturb the assembled transport matrices before certification.
  bool inject_a1_skew = false;
};

/// Certification battery for one system: transform round trips, block identities,
/// Jacobian and sensitivity formulas, coefficient symmetry and definiteness, and
/// the push-forward equivalence of the two right-hand sides.
std::vector<CheckResult> verify_spec(const SystemSpec& spec, const VerifyOptions& opt);

/// Offline re-validation of a report directory written by `run`/`compare`.
std::vector<CheckResult> verify_report(const std::filesystem::path& dir);

bool all_passed(const std::vector<CheckResult>& checks);

}  // namespace crossdiff::cli
