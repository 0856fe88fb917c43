#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crossdiff/grid.hpp"
#include "crossdiff/model.hpp"
#include "crossdiff/solver.hpp"

namespace crossdiff::cli {

struct InitialConfig {
  int N = 0;
  std::vector<std::string> u;  // one expression per species
  double perturbation = 0.0;   // amplitude of a seeded smooth multiplicative perturbation
};

struct OutputConfig {
  std::string dir = "crossdiff_out";
  bool snapshots = true;
  bool binary = false;
};

struct VerifyConfig {
  int samples = 200;
  std::uint64_t seed = 20240611;
  double tol = 1e-12;
  int grid_N = 0;         // 0: 128 points per axis in 1d, 32 in 2d
  double cross_tol = 1e-4;  // report check on the direct / normal-form distance
};

struct Config {
  RawSpec raw;
  SystemSpec spec;
  bool has_initial = false;
  InitialConfig initial;
  SolverConfig solver;
  RunMode mode = RunMode::Both;
  OutputConfig output;
  VerifyConfig verify;
};

/// Parses a TOML configuration. Every problem is reported as ConfigParse with
/// the dotted path of the offending field.
Config parse_config(const std::string& text, const std::string& origin = "<config>");
Config load_config(const std::filesystem::path& path);

/// Initial densities on the configured grid. `seed` drives the optional perturbation.
Field initial_field(const Config& cfg, std::uint64_t seed);

RunMode parse_mode(const std::string& s, const std::string& field = "solver.mode");

}  // namespace crossdiff::cli
