#pragma once

#include <ostream>

namespace crossdiff::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;   // bad arguments or configuration
inline constexpr int kExitSolver = 3;  // the computation stopped with an error
inline constexpr int kExitVerify = 4;  // a verification check failed

/// Entry point of the command-line tool; all output goes to `out` / `err`.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crossdiff::cli
