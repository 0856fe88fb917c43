#include "verify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <json.hpp>

#include "crossdiff/entropy.hpp"
#include "crossdiff/error.hpp"
#include "crossdiff/normal_form.hpp"
#include "crossdiff/solver.hpp"
#include "crossdiff/spectral_structure.hpp"
#include "crossdiff/transforms.hpp"

namespace crossdiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

CheckResult below(std::string name, double measured, double tol, std::string detail = {}) {
  return {std::move(name), measured, tol, std::isfinite(measured) && measured <= tol, std::move(detail)};
}

CheckResult positive_check(std::string name, double measured, std::string detail = {}) {
  return {std::move(name), measured, 0.0, std::isfinite(measured) && measured > 0.0, std::move(detail)};
}

Vec random_positive(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> U(std::log(0.05), std::log(20.0));
  Vec u(n);
  for (int i = 0; i < n; ++i) u[i] = std::exp(U(rng));
  return u;
}

Vec random_normal(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> N(0.0, 1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = N(rng);
  return v;
}

double rel_positive(const Vec& got, const Vec& want) { return ((got - want).array().abs() / want.array()).maxCoeff(); }

double rel(const Vec& got, const Vec& want) {
  return ((got - want).array().abs() / (1.0 + want.array().abs())).maxCoeff();
}

/// Smooth positive periodic field with a few seeded low modes per component.
Field smooth_field(const Grid& g, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Field f(g, n);
  const double wave = 2.0 * std::numbers::pi / g.length();
  for (int c = 0; c < n; ++c) {
    const double base = 0.7 + 0.6 * U(rng);
    double amp[3], phase[3];
    int kx[3], ky[3];
    for (int m = 0; m < 3; ++m) {
      amp[m] = 0.08 * (0.3 + 0.7 * U(rng));
      phase[m] = 2.0 * std::numbers::pi * U(rng);
      kx[m] = 1 + static_cast<int>(2.0 * U(rng));
      ky[m] = g.dim() == 2 ? static_cast<int>(3.0 * U(rng)) : 0;
    }
    for (int p = 0; p < g.points(); ++p) {
      const double x = g.coordinate(p, 0);
      const double y = g.dim() == 2 ? g.coordinate(p, 1) : 0.0;
      double v = 1.0;
      for (int m = 0; m < 3; ++m) v += amp[m] * std::cos(wave * (kx[m] * x + ky[m] * y) + phase[m]);
      f.values(c, p) = base * v;
    }
  }
  return f;
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h) {
  const Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

struct CoeffStats {
  double asymmetry = 0.0;
  double a0_min = std::numeric_limits<double>::infinity();
  double parab_min = std::numeric_limits<double>::infinity();
  double consistency = 0.0;
};

void skew(NormalFormCoeffs& c) {
  for (Mat& A1 : c.A1) {
    const double size = 1e-3 * (1.0 + A1.cwiseAbs().maxCoeff());
    if (A1.rows() >= 2) {
      A1(0, 1) += size;
    } else if (A1.size() > 0) {
      A1(0, 0) += size;
    }
  }
}

/// Certifies the coefficients of `model` at random states and gradients; A1 must
/// also equal A0 times the transport matrices the solver uses.
CoeffStats coefficient_stats(const NormalFormModel& model, std::mt19937_64& rng, const VerifyOptions& opt) {
  CoeffStats s;
  const int n = model.n();
  const int r = model.parabolic_dim();
  for (int trial = 0; trial < opt.samples; ++trial) {
    const Vec u = random_positive(rng, n);
    const int d = 1 + trial % 2;
    Mat grad(r, d);
    for (int c = 0; c < d; ++c) grad.col(c) = random_normal(rng, r);
    NormalFormCoeffs c = model.coeffs(u, grad);
    if (opt.inject_a1_skew) skew(c);
    const CertifyReport rep = certify(c, opt.symmetry_tol);
    s.asymmetry = std::max({s.asymmetry, rep.a0_asymmetry, rep.a1_asymmetry, rep.parab_asymmetry});
    s.a0_min = std::min(s.a0_min, rep.a0_min_eigenvalue);
    s.parab_min = std::min(s.parab_min, rep.parab_min_eigenvalue);
    std::vector<Mat> T;
    Vec src;
    model.transport(u, grad, T, src);
    for (int nu = 0; nu < d; ++nu) {
      if (c.A1[nu].size() == 0) continue;
      const Mat expect = c.A0 * T[nu];
      s.consistency = std::max(s.consistency, (c.A1[nu] - expect).cwiseAbs().maxCoeff() / (1.0 + expect.cwiseAbs().maxCoeff()));
    }
  }
  return s;
}

CheckResult pushforward_check(const SystemSpec& spec, const NormalFormModel& model, std::mt19937_64& rng,
                              const VerifyOptions& opt) {
  const int N = opt.grid_N > 0 ? opt.grid_N : (spec.d == 1 ? 128 : 32);
  const Grid g(spec.d, N, spec.domain_length);
  double worst = 0.0;
  for (int trial = 0; trial < 2; ++trial) {
    const Field u = smooth_field(g, spec.n, rng);
    const Field pushed = push_forward(u, rhs_direct(u, spec, DerivativeScheme::Spectral), model);
    const Field nf = rhs_normal_form(to_w_field(u, model), model, DerivativeScheme::Spectral, 0.0);
    const double scale = std::max(1.0, pushed.values.cwiseAbs().maxCoeff());
    worst = std::max(worst, (pushed.values - nf.values).cwiseAbs().maxCoeff() / scale);
  }
  return below("pushforward_oracle", worst, 1e-6, "N = " + std::to_string(N));
}

void coefficient_checks(std::vector<CheckResult>& out, const NormalFormModel& model, std::mt19937_64& rng,
                        const VerifyOptions& opt) {
  const CoeffStats s = coefficient_stats(model, rng, opt);
  out.push_back(below("coeff_symmetry", s.asymmetry, opt.symmetry_tol));
  out.push_back(below("coeff_transport_consistency", s.consistency, 1e-10));
  if (model.hyperbolic_dim() > 0) out.push_back(positive_check("coeff_a0_spd", s.a0_min));
  out.push_back(positive_check("coeff_parabolic_spd", s.parab_min));
}

std::vector<CheckResult> verify_rank1(const SystemSpec& spec, std::mt19937_64& rng, const VerifyOptions& opt) {
  std::vector<CheckResult> out;
  const SystemSpec sorted = canonical_relabel(spec).spec;
  const int n = sorted.n;

  double roundtrip = 0.0, det_err = 0.0, level = 0.0;
  for (int trial = 0; trial < opt.samples; ++trial) {
    const Vec u = random_positive(rng, n);
    const PointW w = phi_rank1(u, sorted);
    roundtrip = std::max(roundtrip, rel_positive(psi_rank1(w, sorted), u));
    PointW w2;
    w2.hyp = 2.0 * random_normal(rng, n - 1);
    w2.par = Vec::Constant(1, random_positive(rng, 1)[0]);
    roundtrip = std::max(roundtrip, rel(phi_rank1(psi_rank1(w2, sorted), sorted).stacked(), w2.stacked()));
    const Rank1Jacobian J = jacobian_rank1(u, sorted);
    det_err = std::max(det_err, std::abs(J.D.determinant() - J.det) / std::abs(J.det));
    const double t = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    const Vec moved = (sorted.k() * t).array().exp().matrix().cwiseProduct(u);
    if (n > 1) level = std::max(level, (phi_rank1(moved, sorted).hyp - w.hyp).cwiseAbs().maxCoeff());
  }
  out.push_back(below("transform_roundtrip", roundtrip, 1e-10));
  out.push_back(below("jacobian_determinant", det_err, 1e-12));
  out.push_back(below("level_set_invariance", level, 1e-10));

  if ((sorted.a() - sorted.k()).cwiseAbs().maxCoeff() == 0.0 && n > 1) {
    double alt = 0.0;
    for (int trial = 0; trial < opt.samples; ++trial) {
      const Vec u = random_positive(rng, n);
      alt = std::max(alt, rel_positive(psi_alt(phi_alt(u, sorted), sorted), u));
    }
    out.push_back(below("alt_transform_roundtrip", alt, 1e-10));
  }

  double gd = 0.0;
  for (int trial = 0; trial < opt.samples; ++trial) {
    const Vec u = random_positive(rng, n);
    gd = std::max(gd, std::abs(gibbs_duhem_residual(u, sorted)) / (1.0 + sorted.a().dot(u)));
  }
  out.push_back(below("gibbs_duhem", gd, 1e-12));

  // Coefficients need a strict gap below k_n: certify the aggregated system.
  const SystemSpec reduced = reduced_spec(sorted, aggregation_plan(sorted));
  const Rank1Model reduced_model(reduced);
  coefficient_checks(out, reduced_model, rng, opt);
  double lower = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < opt.samples; ++trial) {
    const Vec u = random_positive(rng, reduced.n);
    const double a = reduced_model.parabolic_flux(u)(0, 0);
    lower = std::min(lower, a / (reduced.k().minCoeff() * reduced.a().dot(u)));
  }
  out.push_back(positive_check("parabolic_lower_bound", lower + 1e-14 - 1.0, "min a / (min k * w_n) - 1"));

  const Rank1Model model(sorted);
  out.push_back(pushforward_check(sorted, model, rng, opt));
  return out;
}

std::vector<CheckResult> verify_general(const SystemSpec& spec, std::mt19937_64& rng, const VerifyOptions& opt) {
  std::vector<CheckResult> out;
  const GeneralModel model(spec);
  const EigenStructure& E = model.eigen();
  const int n = spec.n, r = E.rank, h = E.kernel_dim();
  out.push_back(below("block_identities", verify_block_identities(E).max_deviation(), 1e-12));
  const EigenRelationReport rel_rep = verify_eigen_relations(spec.B(), E);
  const double scale = 1.0 + spec.B().cwiseAbs().maxCoeff();
  out.push_back(below("eigen_relations", std::max({rel_rep.kernel, rel_rep.range, rel_rep.reconstruction}) / scale, 1e-12));

  double roundtrip = 0.0, sens = 0.0, inverse = 0.0;
  for (int trial = 0; trial < opt.samples; ++trial) {
    const Vec u = random_positive(rng, n);
    const PointW w = phi_general(u, E);
    const GeneralInverse inv = invert_general(w, E);
    roundtrip = std::max(roundtrip, rel_positive(inv.u, u));
    roundtrip = std::max(roundtrip, rel(phi_general(inv.u, E).stacked(), w.stacked()));
    const GeneralSensitivity s = dpsi_general(u, E);
    inverse = std::max(inverse, (s.dXF_inverse * s.dXF - Mat::Identity(r, r)).cwiseAbs().maxCoeff());
    if (trial < std::min(opt.samples, 50)) {
      const Vec u_mid = u.cwiseMax(0.2).cwiseMin(5.0);
      const GeneralSensitivity sm = dpsi_general(u_mid, E);
      const Vec w0 = phi_general(u_mid, E).stacked();
      auto X_of = [&](const Vec& x) {
        return Vec(E.P * psi_general(PointW::split(x, h, TransformVariant::GeneralEigen), E).array().log().matrix());
      };
      const Mat fd = fd_jacobian(X_of, w0, 1e-6);
      Mat analytic(r, n);
      analytic << sm.dX_dwI, sm.dX_dwII;
      sens = std::max(sens, (fd - analytic).cwiseAbs().maxCoeff() / std::max(1.0, analytic.cwiseAbs().maxCoeff()));
    }
  }
  out.push_back(below("transform_roundtrip", roundtrip, 1e-10));
  out.push_back(below("hessian_inverse", inverse, 1e-10));
  out.push_back(below("sensitivity_fd", sens, 1e-5));
  coefficient_checks(out, model, rng, opt);
  out.push_back(pushforward_check(spec, model, rng, opt));
  return out;
}

double json_number(const json& j) { return j.is_number() ? j.get<double>() : kNaN; }

}  // namespace

bool all_passed(const std::vector<CheckResult>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<CheckResult> verify_spec(const SystemSpec& spec, const VerifyOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  return spec.is_rank1() ? verify_rank1(spec, rng, opt) : verify_general(spec, rng, opt);
}

std::vector<CheckResult> verify_report(const fs::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) throw Error(ErrorCode::ConfigParse, "report: cannot open " + (dir / "report.json").string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigParse, std::string("report: malformed report.json (") + e.what() + ")");
  }
  std::vector<CheckResult> out;
  const bool ok = j.value("status", "") == "ok";
  out.push_back({"report_status", ok ? 0.0 : 1.0, 0.0, ok, j.value("status", "missing")});
  if (!ok) return out;

  const std::vector<double> times = j.at("sample_times").get<std::vector<double>>();
  bool increasing = !times.empty();
  for (std::size_t i = 1; i < times.size(); ++i) increasing = increasing && times[i] > times[i - 1];
  out.push_back({"sample_times_increasing", 0.0, 0.0, increasing, std::to_string(times.size()) + " samples"});

  const json& spec = j.at("spec");
  const bool rank1 = spec.value("kind", "") == "rank1";
  const int d = spec.at("d").get<int>();
  const double cross_tol = j.contains("verify") ? j["verify"].value("cross_tol", 1e-4) : 1e-4;

  for (const auto& [mode, m] : j.at("modes").items()) {
    const json& series = m.at("series");
    const std::vector<double> t = series.at("t").get<std::vector<double>>();
    bool consistent = t.size() == times.size();
    for (const char* key : {"F_f1", "F_f2", "F_f3", "F_hBS", "F_hR", "mass", "min_u", "hs_u", "hs_w"}) {
      consistent = consistent && series.at(key).size() == t.size();
    }
    for (std::size_t i = 0; consistent && i < t.size(); ++i) consistent = std::abs(t[i] - times[i]) <= 1e-12;
    out.push_back({mode + ".series_consistent", 0.0, 0.0, consistent, std::to_string(t.size()) + " rows"});

    double min_u = std::numeric_limits<double>::infinity();
    for (const json& v : series.at("min_u")) min_u = std::min(min_u, json_number(v));
    out.push_back(positive_check(mode + ".positivity", min_u));

    // Mass: every species for the direct solver; the total for the normal form.
    double drift = 0.0;
    const json& mass = series.at("mass");
    for (std::size_t s = 0; s < mass.size(); ++s) {
      if (mode == "direct") {
        for (std::size_t i = 0; i < mass[s].size(); ++i) {
          const double m0 = json_number(mass[0][i]);
          drift = std::max(drift, std::abs(json_number(mass[s][i]) - m0) / (1.0 + std::abs(m0)));
        }
      } else {
        double a = 0.0, b = 0.0;
        const std::vector<double> weights = rank1 ? spec.at("a").get<std::vector<double>>() : std::vector<double>();
        for (std::size_t i = 0; i < mass[s].size(); ++i) {
          const double wi = rank1 ? weights[i] : 1.0;
          a += wi * json_number(mass[s][i]);
          b += wi * json_number(mass[0][i]);
        }
        if (rank1) drift = std::max(drift, std::abs(a - b) / (1.0 + std::abs(b)));
      }
    }
    // The general normal form conserves only P u, which the report does not record.
    if (mode == "direct" || rank1) out.push_back(below(mode + ".mass_drift", drift, 1e-11));

    const std::vector<const char*> kinds = rank1 ? std::vector<const char*>{"F_f1", "F_f2", "F_f3"}
                                                 : std::vector<const char*>{"F_hR"};
    for (const char* kind : kinds) {
      std::vector<double> values;
      for (const json& v : series.at(kind)) values.push_back(json_number(v));
      const DissipationSeries ds = dissipation_series(t, values, 1e-6);
      out.push_back(below(mode + ".dissipation_" + std::string(kind).substr(2), std::max(0.0, ds.worst_increase), 1e-6));
    }

    if (mode == "normal_form" && rank1) {
      const double excess = std::max(json_number(m.at("wn_max_all")) - json_number(m.at("wn_initial_max")),
                                     json_number(m.at("wn_initial_min")) - json_number(m.at("wn_min_all")));
      out.push_back(below(mode + ".maximum_principle", std::max(0.0, excess), 1e-8));
    }

    // Snapshots must parse and reproduce the recorded masses and minima.
    const auto files = m.at("snapshots").get<std::vector<std::string>>();
    if (!files.empty()) {
      double dev = 0.0;
      bool readable = files.size() == t.size();
      for (std::size_t s = 0; readable && s < files.size(); ++s) {
        try {
          const Field f = read_csv(dir / files[s], d);
          for (int c = 0; c < f.components(); ++c) {
            const double recorded = json_number(mass[s][c]);
            const double recomputed = grid_sum(f.component(c)) * f.grid.cell_volume();
            dev = std::max(dev, std::abs(recomputed - recorded) / (1.0 + std::abs(recorded)));
          }
          dev = std::max(dev, std::abs(f.values.minCoeff() - json_number(series.at("min_u")[s])));
        } catch (const std::exception&) {
          readable = false;
        }
      }
      out.push_back({mode + ".snapshots", dev, 1e-12, readable && dev <= 1e-12,
                     readable ? std::to_string(files.size()) + " files" : "missing or unreadable snapshot"});
    }
  }

  if (j.contains("cross_distance")) {
    double worst = 0.0;
    for (const json& v : j["cross_distance"]) worst = std::max(worst, json_number(v));
    out.push_back(below("cross_distance", worst, cross_tol));
  }
  if (j.contains("picard")) {
    const json& p = j["picard"];
    const double bound = p.at("K").get<double>() * p.at("R").get<double>();
    double max_hs = 0.0;
    bool finite = true;
    for (const json& rec : p.at("trace")) {
      max_hs = std::max(max_hs, json_number(rec.at("max_hs")));
      finite = finite && rec.at("N").is_number();
    }
    out.push_back({"picard.converged", json_number(p.at("trace").back().at("N")), 0.0,
                   p.at("converged").get<bool>() && finite, std::to_string(p.at("trace").size()) + " levels"});
    out.push_back(below("picard.working_bound", max_hs, bound, "K R = " + std::to_string(bound)));
  }
  return out;
}

}  // namespace crossdiff::cli
