#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.hpp"
#include "crossdiff/error.hpp"
#include "crossdiff/solver.hpp"
#include "report.hpp"
#include "verify.hpp"

namespace crossdiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string report_dir;
  bool inject_a1_skew = false;
  int refine = 0;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

void print_checks(const std::string& title, const std::vector<CheckResult>& checks, std::ostream& out) {
  out << title << "\n";
  for (const CheckResult& c : checks) {
    out << "  " << (c.passed ? "PASS" : "FAIL") << "  " << c.name << "  measured " << fmt("%.3e", c.measured)
        << "  limit " << fmt("%.1e", c.tolerance);
    if (!c.detail.empty()) out << "  (" << c.detail << ")";
    out << "\n";
  }
}

json checks_json(const std::vector<CheckResult>& checks) {
  json arr = json::array();
  for (const CheckResult& c : checks) {
    arr.push_back({{"name", c.name},
                   {"measured", std::isfinite(c.measured) ? json(c.measured) : json(nullptr)},
                   {"tolerance", c.tolerance},
                   {"passed", c.passed},
                   {"detail", c.detail}});
  }
  return arr;
}

std::uint64_t seed_of(const Options& o, const Config& cfg) { return o.seed.value_or(cfg.verify.seed); }
fs::path out_of(const Options& o, const Config& cfg) { return o.out_dir.empty() ? fs::path(cfg.output.dir) : fs::path(o.out_dir); }

Config load_for_run(const Options& o) {
  Config cfg = load_config(o.config);
  if (!cfg.has_initial) throw Error(ErrorCode::ConfigParse, "initial: section is required for this command");
  if (!o.mode.empty()) cfg.mode = parse_mode(o.mode, "--mode");
  return cfg;
}

int cmd_run(const Options& o, std::ostream& out, std::ostream& err) {
  const Config cfg = load_for_run(o);
  const std::uint64_t seed = seed_of(o, cfg);
  const fs::path dir = out_of(o, cfg);
  try {
    const Field u0 = initial_field(cfg, seed);
    const RunReport rep = run(cfg.spec, u0, cfg.solver, cfg.mode);
    write_report(rep, cfg, seed, dir);
    out << "run finished: t = " << fmt("%.6g", rep.sample_times.back()) << ", " << rep.sample_times.size()
        << " samples\n";
    for (const auto* m : {rep.direct ? &*rep.direct : nullptr, rep.normal_form ? &*rep.normal_form : nullptr}) {
      if (m == nullptr) continue;
      out << "  " << m->mode << ": " << m->steps << " steps, min u " << fmt("%.6e", m->min_u_all)
          << ", mass drift " << fmt("%.3e", m->max_mass_drift) << "\n";
    }
    if (!rep.cross_distance.empty()) {
      out << "  max cross distance " << fmt("%.3e", *std::max_element(rep.cross_distance.begin(), rep.cross_distance.end()))
          << "\n";
    }
    if (rep.picard) {
      out << "  picard: " << rep.picard->trace.size() << " levels, T* = " << fmt("%.6g", rep.picard->T_star)
          << ", halvings " << rep.picard->halvings << (rep.picard->converged ? ", converged" : ", not converged")
          << "\n";
    }
    out << "report written to " << dir.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigParse) throw;
    write_failure(cfg, seed, e.what(), dir);
    err << "error: " << e.what() << "\n";
    return kExitSolver;
  }
}

/// Reference systems checked by `verify` when no configuration is given.
std::vector<std::pair<std::string, SystemSpec>> builtin_specs() {
  std::vector<std::pair<std::string, SystemSpec>> specs;
  auto rank1 = [](std::vector<double> k, std::vector<double> a) {
    RawSpec raw;
    raw.n = static_cast<int>(k.size());
    raw.k = std::move(k);
    raw.a = std::move(a);
    return build_system_spec(raw);
  };
  auto general = [](std::vector<std::vector<double>> B) {
    RawSpec raw;
    raw.n = static_cast<int>(B.size());
    raw.B = std::move(B);
    return build_system_spec(raw);
  };
  specs.emplace_back("rank1 k=(1,2)", rank1({1, 2}, {1, 1}));
  specs.emplace_back("rank1 k=(1,2,3) a=(0.5,2,1)", rank1({1, 2, 3}, {0.5, 2, 1}));
  specs.emplace_back("rank1 a=k=(3,1,2)", rank1({3, 1, 2}, {3, 1, 2}));
  specs.emplace_back("rank1 k=(1,2,2)", rank1({1, 2, 2}, {1, 1, 1}));
  specs.emplace_back("general B=ones(2)", general({{1, 1}, {1, 1}}));
  specs.emplace_back("general B=[[2,1,0],[1,2,1],[0,1,2]]", general({{2, 1, 0}, {1, 2, 1}, {0, 1, 2}}));
  specs.emplace_back("general rank 2, n=3", general({{1, 1, 0}, {1, 2, 1}, {0, 1, 1}}));
  return specs;
}

int cmd_verify(const Options& o, std::ostream& out, std::ostream& err) {
  std::vector<std::pair<std::string, SystemSpec>> specs;
  VerifyOptions vo;
  std::optional<Config> cfg;
  if (!o.config.empty()) {
    cfg = load_config(o.config);
    specs.emplace_back(o.config, cfg->spec);
    vo.samples = cfg->verify.samples;
    vo.symmetry_tol = cfg->verify.tol;
    vo.grid_N = cfg->verify.grid_N;
    vo.seed = cfg->verify.seed;
  } else if (o.report_dir.empty()) {
    specs = builtin_specs();
  }
  if (o.seed) vo.seed = *o.seed;
  vo.inject_a1_skew = o.inject_a1_skew;

  bool ok = true;
  json summary = json::object();
  try {
    for (const auto& [name, spec] : specs) {
      const auto checks = verify_spec(spec, vo);
      print_checks("system " + name, checks, out);
      summary["systems"][name] = checks_json(checks);
      ok = ok && all_passed(checks);
    }
    if (!o.report_dir.empty()) {
      const auto checks = verify_report(o.report_dir);
      print_checks("report " + o.report_dir, checks, out);
      summary["report"] = checks_json(checks);
      ok = ok && all_passed(checks);
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigParse) throw;
    err << "error: " << e.what() << "\n";
    return kExitSolver;
  }
  summary["passed"] = ok;
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    std::ofstream(fs::path(o.out_dir) / "verify.json") << summary.dump(2) << "\n";
  }
  out << (ok ? "verification passed" : "verification FAILED") << "\n";
  return ok ? kExitOk : kExitVerify;
}

/// Samples a fine-grid field at the points of a coarser grid (nested, factor 2^levels).
Field restrict_to(const Field& fine, const Grid& coarse) {
  const int factor = fine.grid.size() / coarse.size();
  Field out(coarse, fine.components(), fine.space, fine.time);
  const int N = coarse.size(), Nf = fine.grid.size();
  for (int p = 0; p < coarse.points(); ++p) {
    const int ix = p % N, iy = p / N;
    out.values.col(p) = fine.values.col(iy * factor * Nf + ix * factor);
  }
  return out;
}

int cmd_compare(const Options& o, std::ostream& out, std::ostream& err) {
  Config cfg = load_for_run(o);
  cfg.mode = RunMode::Both;
  const std::uint64_t seed = seed_of(o, cfg);
  const fs::path dir = out_of(o, cfg);
  if (o.refine < 0 || o.refine > 6) throw Error(ErrorCode::ConfigParse, "--refine: expected 0..6");
  json j;
  j["tool"] = "crossdiff";
  j["seed"] = seed;
  j["spec"] = spec_to_json(cfg.spec);
  j["solver"] = solver_to_json(cfg.solver, cfg.mode);
  try {
    std::vector<int> sizes;
    std::vector<double> cross;
    std::vector<Field> finals;
    for (int l = 0; l <= o.refine; ++l) {
      Config level = cfg;
      level.initial.N = cfg.initial.N << l;
      const RunReport rep = run(level.spec, initial_field(level, seed), level.solver, RunMode::Both);
      const double worst = *std::max_element(rep.cross_distance.begin(), rep.cross_distance.end());
      sizes.push_back(level.initial.N);
      cross.push_back(worst);
      finals.push_back(rep.direct->snapshots.back());
      if (l == 0) {
        out << "cross distance |u_direct - Psi(w)|_inf, N = " << level.initial.N << "\n";
        out << "  t             distance\n";
        for (std::size_t s = 0; s < rep.sample_times.size(); ++s) {
          out << "  " << fmt("%-12.6g", rep.sample_times[s]) << "  " << fmt("%.6e", rep.cross_distance[s]) << "\n";
        }
        j["sample_times"] = rep.sample_times;
        j["cross_distance"] = rep.cross_distance;
        write_report(rep, level, seed, dir);
      }
    }
    out << "max cross distance " << fmt("%.6e", cross.front()) << "\n";
    j["max_cross_distance"] = cross.front();

    if (o.refine > 0) {
      json table = json::array();
      out << "refinement\n  N       cross distance  ratio    order    self-distance\n";
      const Field& finest = finals.back();
      for (std::size_t l = 0; l < sizes.size(); ++l) {
        const double ratio = l == 0 ? NAN : cross[l - 1] / cross[l];
        const double self = l + 1 == sizes.size()
                                ? NAN
                                : (finals[l].values - restrict_to(finest, finals[l].grid).values).cwiseAbs().maxCoeff();
        out << "  " << fmt("%-6.0f", sizes[l]) << "  " << fmt("%.6e", cross[l]) << "    " << fmt("%-7.3f", ratio)
            << "  " << fmt("%-7.3f", std::log2(ratio)) << "  " << fmt("%.6e", self) << "\n";
        auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
        table.push_back({{"N", sizes[l]},
                         {"cross_distance", num(cross[l])},
                         {"ratio", num(ratio)},
                         {"order", num(std::log2(ratio))},
                         {"self_distance", num(self)}});
      }
      j["refinement"] = table;
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigParse) throw;
    write_failure(cfg, seed, e.what(), dir);
    err << "error: " << e.what() << "\n";
    return kExitSolver;
  }
  fs::create_directories(dir);
  std::ofstream(dir / "compare.json") << j.dump(2) << "\n";
  out << "comparison written to " << (dir / "compare.json").string() << "\n";
  return kExitOk;
}

}  // namespace

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-diffusion systems: direct and normal-form solvers, verification and comparison"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto* run_cmd = app.add_subcommand("run", "Solve the configured problem and write a report");
  run_cmd->add_option("config", o.config, "TOML configuration")->required();
  run_cmd->add_option("--out", o.out_dir, "Output directory");
  auto* run_seed = run_cmd->add_option("--seed", seed, "Seed for the initial perturbation");
  run_cmd->add_option("--mode", o.mode, "direct, normal_form or both");

  auto* verify_cmd = app.add_subcommand("verify", "Certify the transforms and coefficients of a system, or a report");
  verify_cmd->add_option("config", o.config, "TOML configuration (built-in systems when omitted)");
  verify_cmd->add_option("--report", o.report_dir, "Re-validate a report directory");
  verify_cmd->add_option("--out", o.out_dir, "Write verify.json here");
  auto* verify_seed = verify_cmd->add_option("--seed", seed, "Seed of the random samples");
  verify_cmd->add_flag("--inject-a1-skew", o.inject_a1_skew)->group("");

  auto* compare_cmd = app.add_subcommand("compare", "Run both solvers and measure their distance");
  compare_cmd->add_option("config", o.config, "TOML configuration")->required();
  compare_cmd->add_option("--out", o.out_dir, "Output directory");
  auto* compare_seed = compare_cmd->add_option("--seed", seed, "Seed for the initial perturbation");
  compare_cmd->add_option("--mode", o.mode, "Accepted for symmetry with run; both solvers always run");
  compare_cmd->add_option("--refine", o.refine, "Number of grid doublings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (run_seed->count() + verify_seed->count() + compare_seed->count() > 0) o.seed = seed;

  try {
    if (run_cmd->parsed()) return cmd_run(o, out, err);
    if (verify_cmd->parsed()) return cmd_verify(o, out, err);
    return cmd_compare(o, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::ConfigParse ? kExitUsage : kExitSolver;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitSolver;
  }
}

}  // namespace crossdiff::cli
