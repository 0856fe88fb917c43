#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "config.hpp"
#include "crossdiff/solver.hpp"

namespace crossdiff::cli {

nlohmann::json spec_to_json(const SystemSpec& spec);
nlohmann::json solver_to_json(const SolverConfig& cfg, RunMode mode);

/// Writes report.json, series_<mode>.csv, snapshots/ and picard_trace.csv into `dir`.
void write_report(const RunReport& report, const Config& cfg, std::uint64_t seed, const std::filesystem::path& dir);

/// Minimal report.json for a run that stopped with an error.
void write_failure(const Config& cfg, std::uint64_t seed, const std::string& message, const std::filesystem::path& dir);

/// Double formatting shared by every CSV the tool writes (round-trips exactly).
std::string format_double(double v);

}  // namespace crossdiff::cli
