#include "report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "crossdiff/error.hpp"

namespace crossdiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kEntropyColumns[kEntropyCount] = {"F_f1", "F_f2", "F_f3", "F_hBS", "F_hR"};

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vec_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v[i]));
  return out;
}

std::ofstream open(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ConfigParse, "output: cannot write " + path.string());
  return out;
}

void write_series_csv(const ModeResult& m, int n, const fs::path& path) {
  std::ofstream out = open(path);
  out << "t";
  for (const char* c : kEntropyColumns) out << ',' << c;
  for (int i = 0; i < n; ++i) out << ",mass_" << i + 1;
  out << ",min_u,hs_u,hs_w\n";
  for (const SeriesRow& row : m.series) {
    out << format_double(row.t);
    for (double e : row.entropy) out << ',' << format_double(e);
    for (Eigen::Index i = 0; i < row.mass.size(); ++i) out << ',' << format_double(row.mass[i]);
    out << ',' << format_double(row.min_u) << ',' << format_double(row.hs_u) << ',' << format_double(row.hs_w) << '\n';
  }
}

json mode_json(const ModeResult& m, const std::vector<std::string>& snapshot_files, const std::string& series_file) {
  json j;
  j["steps"] = m.steps;
  j["min_u_all"] = number(m.min_u_all);
  j["max_mass_drift"] = number(m.max_mass_drift);
  j["wn_initial_min"] = number(m.wn_initial_min);
  j["wn_initial_max"] = number(m.wn_initial_max);
  j["wn_min_all"] = number(m.wn_min_all);
  j["wn_max_all"] = number(m.wn_max_all);
  j["series_file"] = series_file;
  j["snapshots"] = snapshot_files;
  json series;
  series["t"] = json::array();
  for (int e = 0; e < kEntropyCount; ++e) series[kEntropyColumns[e]] = json::array();
  series["mass"] = json::array();
  series["min_u"] = json::array();
  series["hs_u"] = json::array();
  series["hs_w"] = json::array();
  for (const SeriesRow& row : m.series) {
    series["t"].push_back(row.t);
    for (int e = 0; e < kEntropyCount; ++e) series[kEntropyColumns[e]].push_back(number(row.entropy[e]));
    series["mass"].push_back(vec_json(row.mass));
    series["min_u"].push_back(number(row.min_u));
    series["hs_u"].push_back(number(row.hs_u));
    series["hs_w"].push_back(number(row.hs_w));
  }
  j["series"] = series;
  return j;
}

json picard_json(const PicardResult& p) {
  json j;
  j["T_star"] = p.T_star;
  j["dt"] = p.dt;
  j["K"] = p.K;
  j["R"] = p.R;
  j["lambda_min"] = p.lambda_min;
  j["lambda_max"] = p.lambda_max;
  j["sobolev_index"] = p.sobolev_index;
  j["halvings"] = p.halvings;
  j["converged"] = p.converged;
  j["monitor_events"] = p.monitor_events;
  json trace = json::array();
  for (const PicardRecord& r : p.trace) {
    trace.push_back({{"level", r.level},
                     {"sup_l2", number(r.sup_l2)},
                     {"grad_increment", number(r.grad_increment)},
                     {"N", number(r.N)},
                     {"max_hs", number(r.max_hs)},
                     {"min_wn", number(r.min_wn)},
                     {"ratio", number(r.ratio)}});
  }
  j["trace"] = trace;
  return j;
}

json header(const Config& cfg, std::uint64_t seed) {
  json j;
  j["format_version"] = kFormatVersion;
  j["tool"] = "crossdiff";
  j["spec"] = spec_to_json(cfg.spec);
  j["solver"] = solver_to_json(cfg.solver, cfg.mode);
  j["seed"] = seed;
  if (cfg.has_initial) {
    j["initial"] = {{"N", cfg.initial.N}, {"u", cfg.initial.u}, {"perturbation", cfg.initial.perturbation}};
  }
  j["verify"] = {{"cross_tol", cfg.verify.cross_tol}};
  return j;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json spec_to_json(const SystemSpec& spec) {
  json j;
  j["n"] = spec.n;
  j["d"] = spec.d;
  j["domain_length"] = spec.domain_length;
  j["rank"] = spec.rank;
  if (spec.is_rank1()) {
    j["kind"] = "rank1";
    j["k"] = vec_json(spec.k());
    j["a"] = vec_json(spec.a());
  } else {
    j["kind"] = "general";
    json rows = json::array();
    for (Eigen::Index i = 0; i < spec.B().rows(); ++i) rows.push_back(vec_json(spec.B().row(i).transpose()));
    j["B"] = rows;
  }
  return j;
}

json solver_to_json(const SolverConfig& cfg, RunMode mode) {
  json j;
  j["dt"] = cfg.dt ? json(*cfg.dt) : json("auto");
  j["t_end"] = cfg.t_end;
  j["scheme"] = std::string(to_string(cfg.scheme));
  j["cfl_hyp"] = cfg.cfl_hyp;
  j["diff_number"] = cfg.diff_number;
  j["dissipation"] = cfg.dissipation;
  j["positivity_floor"] = cfg.positivity_floor;
  j["snapshot_interval"] = cfg.snapshot_interval;
  j["spatial"] = cfg.spatial == DerivativeScheme::Central2 ? "central2" : "spectral";
  j["cg_tol"] = cfg.cg_tol;
  j["cg_max_iters"] = cfg.cg_max_iters;
  j["min_dt"] = cfg.min_dt;
  j["mode"] = std::string(to_string(mode));
  json p;
  p["enabled"] = cfg.picard.enabled;
  p["max_iters"] = cfg.picard.max_iters;
  p["contraction_tol"] = cfg.picard.contraction_tol;
  p["K"] = cfg.picard.K ? json(*cfg.picard.K) : json("auto");
  p["stage_horizon"] = cfg.picard.stage_horizon ? json(*cfg.picard.stage_horizon) : json("auto");
  j["picard"] = p;
  return j;
}

void write_report(const RunReport& report, const Config& cfg, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  json j = header(cfg, seed);
  j["status"] = "ok";
  j["sample_times"] = report.sample_times;
  j["modes"] = json::object();
  const int n = report.spec.n;
  for (const ModeResult* m : {report.direct ? &*report.direct : nullptr,
                              report.normal_form ? &*report.normal_form : nullptr}) {
    if (m == nullptr) continue;
    std::vector<std::string> files;
    if (cfg.output.snapshots) {
      fs::create_directories(dir / "snapshots");
      for (std::size_t s = 0; s < m->snapshots.size(); ++s) {
        char name[64];
        std::snprintf(name, sizeof name, "snapshots/%s_%03zu", m->mode.c_str(), s);
        write_csv(m->snapshots[s], dir / (std::string(name) + ".csv"));
        if (cfg.output.binary) write_binary(m->snapshots[s], dir / (std::string(name) + ".bin"));
        files.push_back(std::string(name) + ".csv");
      }
    }
    const std::string series_file = "series_" + m->mode + ".csv";
    write_series_csv(*m, n, dir / series_file);
    j["modes"][m->mode] = mode_json(*m, files, series_file);
  }
  if (!report.cross_distance.empty()) {
    json cd = json::array();
    for (double v : report.cross_distance) cd.push_back(number(v));
    j["cross_distance"] = cd;
  }
  if (report.picard) {
    j["picard"] = picard_json(*report.picard);
    std::ofstream out = open(dir / "picard_trace.csv");
    out << "level,sup_l2,grad_increment,N,max_hs,min_wn,ratio\n";
    for (const PicardRecord& r : report.picard->trace) {
      out << r.level << ',' << format_double(r.sup_l2) << ',' << format_double(r.grad_increment) << ','
          << format_double(r.N) << ',' << format_double(r.max_hs) << ',' << format_double(r.min_wn) << ','
          << format_double(r.ratio) << '\n';
    }
  }
  std::ofstream out = open(dir / "report.json");
  out << j.dump(2) << '\n';
}

void write_failure(const Config& cfg, std::uint64_t seed, const std::string& message, const fs::path& dir) {
  fs::create_directories(dir);
  json j = header(cfg, seed);
  j["status"] = "solver_error";
  j["error"] = message;
  std::ofstream out = open(dir / "report.json");
  out << j.dump(2) << '\n';
}

}  // namespace crossdiff::cli
