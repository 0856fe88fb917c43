#include "config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "crossdiff/error.hpp"
#include "expression.hpp"

namespace crossdiff::cli {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw Error(ErrorCode::ConfigParse, path + ": " + why);
}

void reject_unknown(const toml::table& t, const std::string& section, const std::set<std::string>& known) {
  for (const auto& [key, node] : t) {
    if (!known.count(std::string(key.str()))) fail(section + "." + std::string(key.str()), "unknown key");
  }
}

double get_double(const toml::node& node, const std::string& path) {
  if (auto v = node.value<double>()) return *v;
  fail(path, "expected a number");
}

template <typename T>
T get_or(const toml::table& t, const char* key, const std::string& section, T fallback) {
  const toml::node* node = t.get(key);
  if (node == nullptr) return fallback;
  const std::string path = section + "." + key;
  if constexpr (std::is_same_v<T, double>) {
    return get_double(*node, path);
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node->value<bool>()) return *v;
    fail(path, "expected true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node->value<std::string>()) return *v;
    fail(path, "expected a string");
  } else {
    auto v = node->value<std::int64_t>();
    if (!v || node->is_floating_point()) fail(path, "expected an integer");
    return static_cast<T>(*v);
  }
}

std::vector<double> get_vector(const toml::node& node, const std::string& path) {
  const toml::array* arr = node.as_array();
  if (arr == nullptr) fail(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < arr->size(); ++i) out.push_back(get_double(*arr->get(i), path + "[" + std::to_string(i) + "]"));
  return out;
}

double positive(double v, const std::string& path) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    std::ostringstream msg;
    msg << "must be positive (got " << v << ")";
    fail(path, msg.str());
  }
  return v;
}

void parse_system(const toml::table& t, Config& cfg) {
  reject_unknown(t, "system", {"d", "n", "L", "domain_length", "k", "a", "B"});
  RawSpec& raw = cfg.raw;
  raw.d = get_or<int>(t, "d", "system", 1);
  if (raw.d != 1 && raw.d != 2) fail("system.d", "must be 1 or 2");
  if (t.contains("n")) raw.n = get_or<int>(t, "n", "system", 0);
  if (t.contains("L") && t.contains("domain_length")) fail("system.L", "give either L or domain_length");
  if (t.contains("L")) raw.domain_length = positive(get_or<double>(t, "L", "system", 0.0), "system.L");
  if (t.contains("domain_length")) {
    raw.domain_length = positive(get_or<double>(t, "domain_length", "system", 0.0), "system.domain_length");
  }
  const bool rank1 = t.contains("k");
  if (rank1 && t.contains("B")) fail("system", "give either k (and a) or B, not both");
  if (!rank1 && !t.contains("B")) fail("system", "missing k or B");
  if (rank1) {
    raw.k = get_vector(*t.get("k"), "system.k");
    for (std::size_t i = 0; i < raw.k->size(); ++i) positive((*raw.k)[i], "system.k[" + std::to_string(i) + "]");
    if (t.contains("a")) {
      raw.a = get_vector(*t.get("a"), "system.a");
      for (std::size_t i = 0; i < raw.a->size(); ++i) positive((*raw.a)[i], "system.a[" + std::to_string(i) + "]");
      if (raw.a->size() != raw.k->size()) fail("system.a", "must have as many entries as system.k");
    } else {
      raw.a = std::vector<double>(raw.k->size(), 1.0);
    }
  } else {
    if (t.contains("a")) fail("system.a", "only used together with k");
    const toml::array* rows = t.get("B")->as_array();
    if (rows == nullptr) fail("system.B", "expected an array of rows");
    raw.B.emplace();
    for (std::size_t i = 0; i < rows->size(); ++i) {
      const std::string path = "system.B[" + std::to_string(i) + "]";
      raw.B->push_back(get_vector(*rows->get(i), path));
      if (raw.B->back().size() != rows->size()) fail(path, "B must be square");
    }
  }
  try {
    cfg.spec = build_system_spec(raw);
  } catch (const Error& e) {
    fail(rank1 ? "system.k" : "system.B", e.what());
  }
}

void parse_initial(const toml::table& t, Config& cfg) {
  reject_unknown(t, "initial", {"N", "u", "perturbation"});
  if (!t.contains("N")) fail("initial.N", "missing");
  cfg.initial.N = get_or<int>(t, "N", "initial", 0);
  if (cfg.initial.N < 8 || (cfg.initial.N & (cfg.initial.N - 1)) != 0) fail("initial.N", "must be a power of two >= 8");
  const toml::node* u = t.get("u");
  if (u == nullptr) fail("initial.u", "missing");
  const toml::array* arr = u->as_array();
  if (arr == nullptr) fail("initial.u", "expected an array with one expression per species");
  if (static_cast<int>(arr->size()) != cfg.spec.n) {
    fail("initial.u", "expected " + std::to_string(cfg.spec.n) + " expressions, got " + std::to_string(arr->size()));
  }
  for (std::size_t i = 0; i < arr->size(); ++i) {
    const std::string path = "initial.u[" + std::to_string(i) + "]";
    const toml::node& node = *arr->get(i);
    std::string text;
    if (auto s = node.value<std::string>()) {
      text = *s;
    } else if (auto v = node.value<double>()) {
      std::ostringstream os;
      os.precision(17);
      os << *v;
      text = os.str();
    } else {
      fail(path, "expected an expression string or a number");
    }
    Expression::parse(text, path);  // validate now
    cfg.initial.u.push_back(text);
  }
  cfg.initial.perturbation = get_or<double>(t, "perturbation", "initial", 0.0);
  if (!(cfg.initial.perturbation >= 0.0 && cfg.initial.perturbation < 1.0)) {
    fail("initial.perturbation", "must lie in [0, 1)");
  }
  cfg.has_initial = true;
}

void parse_picard(const toml::table& t, PicardConfig& p) {
  reject_unknown(t, "solver.picard", {"enabled", "max_iters", "contraction_tol", "K", "stage_horizon"});
  p.enabled = get_or<bool>(t, "enabled", "solver.picard", p.enabled);
  p.max_iters = get_or<int>(t, "max_iters", "solver.picard", p.max_iters);
  if (p.max_iters < 1) fail("solver.picard.max_iters", "must be at least 1");
  p.contraction_tol = positive(get_or<double>(t, "contraction_tol", "solver.picard", p.contraction_tol),
                               "solver.picard.contraction_tol");
  if (t.contains("K")) p.K = positive(get_or<double>(t, "K", "solver.picard", 0.0), "solver.picard.K");
  if (t.contains("stage_horizon")) {
    p.stage_horizon = positive(get_or<double>(t, "stage_horizon", "solver.picard", 0.0), "solver.picard.stage_horizon");
  }
}

void parse_solver(const toml::table& t, Config& cfg) {
  reject_unknown(t, "solver", {"dt", "t_end", "scheme", "cfl_hyp", "diff_number", "dissipation", "positivity_floor",
                               "snapshot_interval", "spatial", "cg_tol", "cg_max_iters", "min_dt", "mode", "picard"});
  SolverConfig& s = cfg.solver;
  if (const toml::node* dt = t.get("dt")) {
    if (auto str = dt->value<std::string>()) {
      if (*str != "auto") fail("solver.dt", "expected a positive number or \"auto\"");
    } else {
      s.dt = positive(get_double(*dt, "solver.dt"), "solver.dt");
    }
  }
  s.t_end = positive(get_or<double>(t, "t_end", "solver", s.t_end), "solver.t_end");
  const std::string scheme = get_or<std::string>(t, "scheme", "solver", "explicit_rk2");
  if (scheme == "explicit_rk2") {
    s.scheme = TimeScheme::ExplicitRK2;
  } else if (scheme == "imex") {
    s.scheme = TimeScheme::Imex;
  } else {
    fail("solver.scheme", "expected explicit_rk2 or imex");
  }
  s.cfl_hyp = get_or<double>(t, "cfl_hyp", "solver", s.cfl_hyp);
  if (!(s.cfl_hyp > 0.0 && s.cfl_hyp <= 1.0)) fail("solver.cfl_hyp", "must lie in (0, 1]");
  s.diff_number = positive(get_or<double>(t, "diff_number", "solver", s.diff_number), "solver.diff_number");
  s.dissipation = get_or<double>(t, "dissipation", "solver", s.dissipation);
  if (!(s.dissipation >= 0.0)) fail("solver.dissipation", "must be non-negative");
  s.positivity_floor = positive(get_or<double>(t, "positivity_floor", "solver", s.positivity_floor), "solver.positivity_floor");
  s.snapshot_interval = get_or<double>(t, "snapshot_interval", "solver", s.snapshot_interval);
  if (!(s.snapshot_interval >= 0.0)) fail("solver.snapshot_interval", "must be non-negative");
  const std::string spatial = get_or<std::string>(t, "spatial", "solver", "central2");
  if (spatial == "central2") {
    s.spatial = DerivativeScheme::Central2;
  } else if (spatial == "spectral") {
    s.spatial = DerivativeScheme::Spectral;
  } else {
    fail("solver.spatial", "expected central2 or spectral");
  }
  if (s.scheme == TimeScheme::Imex && s.spatial != DerivativeScheme::Central2) {
    fail("solver.spatial", "the imex scheme requires central2");
  }
  s.cg_tol = positive(get_or<double>(t, "cg_tol", "solver", s.cg_tol), "solver.cg_tol");
  s.cg_max_iters = get_or<int>(t, "cg_max_iters", "solver", s.cg_max_iters);
  if (s.cg_max_iters < 1) fail("solver.cg_max_iters", "must be at least 1");
  s.min_dt = positive(get_or<double>(t, "min_dt", "solver", s.min_dt), "solver.min_dt");
  if (t.contains("mode")) cfg.mode = parse_mode(get_or<std::string>(t, "mode", "solver", ""));
  if (const toml::node* p = t.get("picard")) {
    if (!p->is_table()) fail("solver.picard", "expected a table");
    parse_picard(*p->as_table(), s.picard);
  }
}

void parse_output(const toml::table& t, Config& cfg) {
  reject_unknown(t, "output", {"dir", "snapshots", "binary"});
  cfg.output.dir = get_or<std::string>(t, "dir", "output", cfg.output.dir);
  cfg.output.snapshots = get_or<bool>(t, "snapshots", "output", cfg.output.snapshots);
  cfg.output.binary = get_or<bool>(t, "binary", "output", cfg.output.binary);
}

void parse_verify(const toml::table& t, Config& cfg) {
  reject_unknown(t, "verify", {"samples", "seed", "tol", "grid_N", "cross_tol"});
  cfg.verify.cross_tol = positive(get_or<double>(t, "cross_tol", "verify", cfg.verify.cross_tol), "verify.cross_tol");
  cfg.verify.samples = get_or<int>(t, "samples", "verify", cfg.verify.samples);
  if (cfg.verify.samples < 1) fail("verify.samples", "must be at least 1");
  const std::int64_t seed = get_or<std::int64_t>(t, "seed", "verify", static_cast<std::int64_t>(cfg.verify.seed));
  if (seed < 0) fail("verify.seed", "must be non-negative");
  cfg.verify.seed = static_cast<std::uint64_t>(seed);
  cfg.verify.tol = positive(get_or<double>(t, "tol", "verify", cfg.verify.tol), "verify.tol");
  cfg.verify.grid_N = get_or<int>(t, "grid_N", "verify", 0);
  const int N = cfg.verify.grid_N;
  if (N != 0 && (N < 8 || (N & (N - 1)) != 0)) fail("verify.grid_N", "must be a power of two >= 8");
}

}  // namespace

RunMode parse_mode(const std::string& s, const std::string& field) {
  if (s == "direct") return RunMode::Direct;
  if (s == "normal_form") return RunMode::NormalForm;
  if (s == "both") return RunMode::Both;
  fail(field, "expected direct, normal_form or both (got \"" + s + "\")");
}

Config parse_config(const std::string& text, const std::string& origin) {
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "line " << e.source().begin.line << ", column " << e.source().begin.column << ": " << e.description();
    fail(origin, msg.str());
  }
  reject_unknown(root, "config", {"system", "initial", "solver", "output", "verify"});
  Config cfg;
  auto section = [&](const char* name) -> const toml::table* {
    const toml::node* n = root.get(name);
    if (n == nullptr) return nullptr;
    if (!n->is_table()) fail(name, "expected a table");
    return n->as_table();
  };
  const toml::table* system = section("system");
  if (system == nullptr) fail("system", "missing section");
  parse_system(*system, cfg);
  if (const toml::table* t = section("initial")) parse_initial(*t, cfg);
  if (const toml::table* t = section("solver")) parse_solver(*t, cfg);
  if (const toml::table* t = section("output")) parse_output(*t, cfg);
  if (const toml::table* t = section("verify")) parse_verify(*t, cfg);
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(path.string(), "cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

Field initial_field(const Config& cfg, std::uint64_t seed) {
  if (!cfg.has_initial) fail("initial", "missing section");
  const Grid g(cfg.spec.d, cfg.initial.N, cfg.spec.domain_length);
  Field u(g, cfg.spec.n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0), phase(0.0, 2.0 * std::numbers::pi);
  const double wave = 2.0 * std::numbers::pi / g.length();
  for (int c = 0; c < cfg.spec.n; ++c) {
    const Expression expr = Expression::parse(cfg.initial.u[c], "initial.u[" + std::to_string(c) + "]");
    // Seeded perturbation: three low modes per axis with amplitudes summing to at most `perturbation`.
    double amp[2][3], ph[2][3];
    for (int axis = 0; axis < 2; ++axis) {
      for (int m = 0; m < 3; ++m) {
        amp[axis][m] = cfg.initial.perturbation * unit(rng) / 6.0;
        ph[axis][m] = phase(rng);
      }
    }
    for (int p = 0; p < g.points(); ++p) {
      const double x = g.coordinate(p, 0);
      const double y = g.dim() == 2 ? g.coordinate(p, 1) : 0.0;
      double factor = 1.0;
      for (int m = 0; m < 3; ++m) {
        factor += amp[0][m] * std::cos(wave * (m + 1) * x + ph[0][m]);
        if (g.dim() == 2) factor += amp[1][m] * std::cos(wave * (m + 1) * y + ph[1][m]);
      }
      u.values(c, p) = expr(x, y) * factor;
    }
  }
  return u;
}

}  // namespace crossdiff::cli
