#include <doctest.h>

#include <cmath>
#include <random>

#include "crossdiff/error.hpp"
#include "crossdiff/solver.hpp"
#include "oracles.hpp"

using namespace crossdiff;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Vec vec(std::initializer_list<double> v) { return Eigen::Map<const Vec>(v.begin(), static_cast<Eigen::Index>(v.size())); }

SystemSpec rank1_spec(const Vec& k, const Vec& a, int d = 1) {
  SystemSpec s;
  s.n = static_cast<int>(k.size());
  s.rank = 1;
  s.d = d;
  s.domain_length = kTwoPi;
  s.kind = Rank1Coefficients{k, a};
  return s;
}

SystemSpec general_spec(const Mat& B, int d = 1) {
  RawSpec raw;
  raw.d = d;
  raw.B.emplace();
  for (Eigen::Index i = 0; i < B.rows(); ++i) {
    std::vector<double> row(B.cols());
    for (Eigen::Index j = 0; j < B.cols(); ++j) row[j] = B(i, j);
    raw.B->push_back(row);
  }
  return build_system_spec(raw);
}

Field benchmark_data(const Grid& g) {
  Field u(g, 2);
  for (int p = 0; p < g.points(); ++p) {
    const double x = g.coordinate(p, 0);
    u.values(0, p) = 1.0 + 0.3 * std::cos(x);
    u.values(1, p) = 1.0 + 0.3 * std::sin(x);
  }
  return u;
}

double max_abs(const FieldData& a) { return a.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("constant states are stationary") {
  const SystemSpec s = rank1_spec(vec({1, 2, 3}), vec({1, 0.5, 2}));
  const SystemSpec gs = general_spec(Mat::Ones(3, 3));
  for (int d : {1, 2}) {
    const Grid g(d, 16, kTwoPi);
    Field u(g, 3);
    u.values.row(0).setConstant(0.7);
    u.values.row(1).setConstant(1.2);
    u.values.row(2).setConstant(2.0);
    for (DerivativeScheme sch : {DerivativeScheme::Central2, DerivativeScheme::Spectral}) {
      CHECK(max_abs(rhs_direct(u, s, sch).values) <= 1e-14);
      CHECK(max_abs(rhs_direct(u, gs, sch).values) <= 1e-14);
      const Rank1Model m(s);
      CHECK(max_abs(rhs_normal_form(to_w_field(u, m), m, sch).values) <= 1e-14);
      const GeneralModel gm(gs);
      CHECK(max_abs(rhs_normal_form(to_w_field(u, gm), gm, sch).values) <= 1e-14);
    }
    SolverConfig cfg;
    CHECK(max_abs(step_direct(u, s, cfg, 1e-3).values - u.values) <= 1e-14);
    cfg.scheme = TimeScheme::Imex;
    CHECK(max_abs(step_direct(u, s, cfg, 1e-3).values - u.values) <= 1e-14);
    const Rank1Model m(s);
    const Field w = to_w_field(u, m);
    CHECK(max_abs(step_normal_form(w, m, cfg, 1e-3).values - w.values) <= 1e-14);
  }
}

TEST_CASE("scalar porous-medium operator on 2 + cos x") {
  // d_x(u u_x) with u = 2 + cos x equals -(2 cos x + cos 2x).
  const SystemSpec s = rank1_spec(vec({1}), vec({1}));
  std::vector<double> errors;
  for (int N : {32, 64, 128, 256}) {
    const Grid g(1, N, kTwoPi);
    Field u(g, 1);
    Vec exact(N);
    for (int p = 0; p < N; ++p) {
      const double x = g.coordinate(p, 0);
      u.values(0, p) = 2.0 + std::cos(x);
      exact[p] = -(2.0 * std::cos(x) + std::cos(2.0 * x));
    }
    const double err = (rhs_direct(u, s).component(0) - exact).cwiseAbs().maxCoeff();
    CHECK(err <= 2.0 * g.dx() * g.dx());
    errors.push_back(err);
    // Round-off of the spectral second derivative grows like N^2.
    CHECK((rhs_direct(u, s, DerivativeScheme::Spectral).component(0) - exact).cwiseAbs().maxCoeff() <= 1e-15 * N * N);
  }
  for (std::size_t i = 1; i < errors.size(); ++i) {
    const double order = std::log2(errors[i - 1] / errors[i]);
    CHECK(order >= 1.9);
    CHECK(order <= 2.1);
  }
}

TEST_CASE("direct right-hand side is conservative") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + trial % 2;
    const Grid g(d, d == 1 ? 64 : 16, kTwoPi);
    const int n = 2 + trial % 3;
    const SystemSpec s = trial % 2 == 0 ? general_spec(oracle::psd(rng, n, 1 + trial % n), d)
                                        : rank1_spec(oracle::positive(rng, n, 0.5, 3), oracle::positive(rng, n, 0.5, 3), d);
    const Field u = oracle::smooth_field(g, n, rng);
    for (DerivativeScheme sch : {DerivativeScheme::Central2, DerivativeScheme::Spectral}) {
      const Field du = rhs_direct(u, s, sch);
      for (int c = 0; c < n; ++c) {
        CHECK(std::abs(grid_sum(du.component(c))) * g.cell_volume() <= 1e-13 * (1.0 + max_abs(du.values)));
      }
    }
  }
}

TEST_CASE("push-forward of the direct rate equals the normal-form rate") {
  std::mt19937_64 rng(42);
  auto check = [&](const SystemSpec& s, const Grid& g) {
    const auto model = make_model(s);
    const Field u = oracle::smooth_field(g, s.n, rng);
    const Field du = rhs_direct(u, s, DerivativeScheme::Spectral);
    const Field pushed = push_forward(u, du, *model);
    const Field nf = rhs_normal_form(to_w_field(u, *model), *model, DerivativeScheme::Spectral, 0.0);
    const double scale = std::max(1.0, max_abs(pushed.values));
    CHECK(max_abs(pushed.values - nf.values) <= 1e-6 * scale);
  };
  for (int trial = 0; trial < 4; ++trial) {
    const Grid g1(1, 256, kTwoPi), g2(2, 64, kTwoPi);
    Vec k = oracle::positive(rng, 3, 0.5, 3.0);
    std::sort(k.data(), k.data() + 3);
    check(rank1_spec(k.head(2 + trial % 2), oracle::positive(rng, 2 + trial % 2, 0.5, 2.0)), g1);
    check(rank1_spec(vec({1, 2}), vec({1, 1}), 2), g2);
    const int n = 2 + trial % 3;
    check(general_spec(oracle::psd(rng, n, 1 + trial % (n - 1))), g1);
    check(general_spec(oracle::psd(rng, n, 1 + trial % (n - 1)), 2), g2);
  }
}

TEST_CASE("equal coefficients give pure transport of the hyperbolic variable") {
  const SystemSpec s = rank1_spec(vec({1, 1}), vec({1, 1}));
  const Rank1Model m(s);
  std::mt19937_64 rng(43);
  const Grid g(1, 64, kTwoPi);
  const Field w = to_w_field(oracle::smooth_field(g, 2, rng), m);
  const Field rate = rhs_normal_form(w, m, DerivativeScheme::Central2, 0.0);
  const Vec expected = derivative(g, w.component(1), 0, DerivativeScheme::Central2)
                           .cwiseProduct(derivative(g, w.component(0), 0, DerivativeScheme::Central2));
  CHECK((rate.component(0) - expected).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + expected.cwiseAbs().maxCoeff()));
}

TEST_CASE("frozen constant coefficients: heat-mode decay and transport at rest") {
  const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 1}));
  const Rank1Model m(s);
  const Grid g(1, 64, kTwoPi);
  Field v(g, 2);
  v.values.row(0).setConstant(1.0);
  v.values.row(1).setConstant(1.0);
  const Field vw = to_w_field(v, m);
  const double a = 3.0;  // k . u at u = (1, 1)
  const double xi = 3.0, amp = 0.1;
  Field z = vw;
  for (int p = 0; p < g.points(); ++p) z.values(1, p) += amp * std::cos(xi * g.coordinate(p, 0));

  const double dt = 2e-5, T = 0.01;
  const int levels = static_cast<int>(std::lround(T / dt));
  std::vector<Field> frozen(levels + 1, vw);
  SolverConfig cfg;
  cfg.spatial = DerivativeScheme::Spectral;
  const std::vector<Field> out = picard_stage(m, frozen, z, dt, cfg);
  REQUIRE(out.size() == frozen.size());
  const double decay = std::exp(-a * xi * xi * T);
  double err = 0.0;
  for (int p = 0; p < g.points(); ++p) {
    err = std::max(err, std::abs(out.back().values(1, p) - (vw.values(1, p) + amp * decay * std::cos(xi * g.coordinate(p, 0)))));
  }
  CHECK(err <= 1e-8);
  CHECK(max_abs(out.back().values.row(0) - z.values.row(0)) <= 1e-14);

  // One step of the explicit scheme on the same linear problem is the RK2 symbol.
  SolverConfig step_cfg;
  step_cfg.spatial = DerivativeScheme::Spectral;
  step_cfg.dissipation = 0.0;
  const double h = 1e-3;
  const Field stepped = step_normal_form(z, m, step_cfg, h);
  // The flux uses the current state, so compare against the exact decay only to O(amp^2).
  const double zeta = a * xi * xi * h;
  const double local = std::abs(1.0 - zeta + 0.5 * zeta * zeta - std::exp(-zeta)) * amp;
  double step_err = 0.0;
  for (int p = 0; p < g.points(); ++p) {
    step_err = std::max(step_err, std::abs(stepped.values(1, p) - (vw.values(1, p) + amp * std::exp(-zeta) * std::cos(xi * g.coordinate(p, 0)))));
  }
  CHECK(step_err <= local + 2.0 * amp * amp * zeta);
}

TEST_CASE("linear stage keeps the parabolic variable between the bounds of its data") {
  std::mt19937_64 rng(44);
  const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 1}));
  const Rank1Model m(s);
  for (int trial = 0; trial < 5; ++trial) {
    const Grid g(1, 64, kTwoPi);
    const Field v = to_w_field(oracle::smooth_field(g, 2, rng, 1.0, 0.4), m);
    Field z = to_w_field(oracle::smooth_field(g, 2, rng, 1.0, 0.6, 5), m);
    SolverConfig cfg;
    double amax = 0.0;
    for (int p = 0; p < g.points(); ++p) amax = std::max(amax, m.parabolic_flux(m.to_u(v.point(p)))(0, 0));
    const double dt = 0.25 * g.dx() * g.dx() / amax;
    std::vector<Field> frozen(201, v);
    const std::vector<Field> out = picard_stage(m, frozen, z, dt, cfg);
    const double lo = z.values.row(1).minCoeff(), hi = z.values.row(1).maxCoeff();
    for (const Field& f : out) {
      CHECK(f.values.row(1).minCoeff() >= lo - 1e-10);
      CHECK(f.values.row(1).maxCoeff() <= hi + 1e-10);
    }
  }
}

TEST_CASE("a constant fixed point is reproduced by the linear stage") {
  const SystemSpec s = rank1_spec(vec({1, 2, 3}), vec({1, 1, 1}));
  const Rank1Model m(s);
  const Grid g(2, 16, kTwoPi);
  Field u(g, 3);
  u.values.row(0).setConstant(0.5);
  u.values.row(1).setConstant(1.5);
  u.values.row(2).setConstant(1.0);
  const Field w = to_w_field(u, m);
  const std::vector<Field> out = picard_stage(m, std::vector<Field>(20, w), w, 1e-3, SolverConfig{});
  for (const Field& f : out) CHECK(max_abs(f.values - w.values) <= 1e-14);
}

TEST_CASE("automatic step halves when the grid is refined in the transport-limited regime") {
  const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 1}));
  SolverConfig cfg;
  cfg.scheme = TimeScheme::Imex;
  double prev = 0.0;
  for (int N : {64, 128, 256, 512}) {
    const Grid g(1, N, kTwoPi);
    const StepLimits l = step_limits_direct(benchmark_data(g), s, cfg);
    CHECK(l.dt == doctest::Approx(l.dt_hyperbolic));
    if (prev > 0.0) {
      CHECK(prev / l.dt >= 1.98);
      CHECK(prev / l.dt <= 2.02);
    }
    prev = l.dt;
  }
}

TEST_CASE("benchmark run in both modes") {
  const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 1}));
  const Grid g(1, 256, kTwoPi);
  const Field u0 = benchmark_data(g);
  SolverConfig cfg;
  cfg.t_end = 0.05;
  cfg.snapshot_interval = 0.01;
  const RunReport rep = run(s, u0, cfg, RunMode::Both);
  REQUIRE(rep.direct);
  REQUIRE(rep.normal_form);
  CHECK(rep.sample_times.size() == 6);
  CHECK(rep.cross_distance.size() == 6);
  CHECK(rep.cross_distance.front() <= 1e-13);
  MESSAGE("cross distance at T: " << rep.cross_distance.back());
  CHECK(rep.cross_distance.back() <= 1e-4);
  CHECK(rep.direct->max_mass_drift <= 1e-11);
  // The normal form conserves the parabolic variable, i.e. the total a . u.
  for (const SeriesRow& row : rep.normal_form->series) {
    CHECK(std::abs(row.mass.sum() - rep.normal_form->series.front().mass.sum()) <= 1e-11);
  }
  for (const ModeResult* mr : {&*rep.direct, &*rep.normal_form}) {
    CHECK(mr->min_u_all >= 0.4 * u0.values.minCoeff());
    CHECK(mr->snapshots.back().time == doctest::Approx(0.05));
    for (std::size_t j = 1; j < mr->series.size(); ++j) CHECK(mr->series[j].t > mr->series[j - 1].t);
  }
  CHECK(rep.normal_form->wn_min_all >= rep.normal_form->wn_initial_min - 1e-8);
  CHECK(rep.normal_form->wn_max_all <= rep.normal_form->wn_initial_max + 1e-8);
}

TEST_CASE("implicit scheme agrees with the explicit one") {
  const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 1}));
  const Grid g(1, 64, kTwoPi);
  SolverConfig cfg;
  cfg.t_end = 0.02;
  const RunReport ex = run(s, benchmark_data(g), cfg, RunMode::Both);
  cfg.scheme = TimeScheme::Imex;
  const RunReport im = run(s, benchmark_data(g), cfg, RunMode::Both);
  CHECK(im.direct->steps < ex.direct->steps);
  CHECK(max_abs(im.direct->snapshots.back().values - ex.direct->snapshots.back().values) <= 5e-3);
  CHECK(max_abs(im.normal_form->snapshots.back().values - ex.normal_form->snapshots.back().values) <= 5e-3);
  CHECK(im.direct->max_mass_drift <= 1e-11);
}

TEST_CASE("identity interaction decouples into scalar porous-medium runs") {
  const Grid g(1, 128, kTwoPi);
  const Field u0 = benchmark_data(g);
  SolverConfig cfg;
  cfg.t_end = 0.05;
  cfg.dt = 1e-4;
  const RunReport coupled = run(general_spec(Mat::Identity(2, 2)), u0, cfg, RunMode::Direct);
  for (int c = 0; c < 2; ++c) {
    Field single(g, 1);
    single.values.row(0) = u0.values.row(c);
    const RunReport scalar = run(rank1_spec(vec({1}), vec({1})), single, cfg, RunMode::Direct);
    CHECK(max_abs(coupled.direct->snapshots.back().values.row(c) - scalar.direct->snapshots.back().values.row(0)) <= 1e-12);
  }
}

TEST_CASE("equal coefficients: aggregated run matches the scalar run") {
  const SystemSpec s = rank1_spec(vec({1, 1}), vec({1, 1}));
  const Grid g(1, 128, kTwoPi);
  const Field u0 = benchmark_data(g);
  SolverConfig cfg;
  cfg.t_end = 0.05;
  cfg.snapshot_interval = 0.01;
  const RunReport rep = run(s, u0, cfg, RunMode::NormalForm);
  Field sum(g, 1);
  sum.values.row(0) = u0.values.row(0) + u0.values.row(1);
  const RunReport scalar = run(rank1_spec(vec({1}), vec({1})), sum, cfg, RunMode::NormalForm);
  REQUIRE(rep.normal_form->snapshots.size() == scalar.normal_form->snapshots.size());
  for (std::size_t j = 0; j < scalar.normal_form->snapshots.size(); ++j) {
    const FieldData total = rep.normal_form->snapshots[j].values.row(0) + rep.normal_form->snapshots[j].values.row(1);
    CHECK(max_abs(total - scalar.normal_form->snapshots[j].values) <= 1e-12);
  }

  Field sym(g, 2);
  sym.values.row(0) = u0.values.row(0);
  sym.values.row(1) = u0.values.row(0);
  const RunReport same = run(s, sym, cfg, RunMode::NormalForm);
  const Field& last = same.normal_form->snapshots.back();
  CHECK(max_abs(last.values.row(0) - last.values.row(1)) <= 1e-10);
}

TEST_CASE("run errors") {
  const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 1}));
  const Grid g(1, 32, kTwoPi);
  Field u = benchmark_data(g);
  u.values(0, 3) = 0.0;
  try {
    run(s, u, SolverConfig{}, RunMode::Direct);
    FAIL("expected PositivityLost");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PositivityLost);
    CHECK(std::string(e.what()).find("t = 0") != std::string::npos);
  }
  SolverConfig tiny;
  tiny.dt = 1e-14;
  CHECK_THROWS_AS(run(s, benchmark_data(g), tiny, RunMode::Direct), Error);
  // Data that collapses to zero density inside the time window.
  Field steep(g, 2);
  for (int p = 0; p < g.points(); ++p) {
    steep.values(0, p) = 1e-9 + (p == 5 ? 5.0 : 0.0);
    steep.values(1, p) = 1e-9;
  }
  SolverConfig cfg;
  cfg.dt = 0.05;
  CHECK_THROWS_AS(run(s, steep, cfg, RunMode::Direct), Error);
}

TEST_CASE("sample times") {
  CHECK(sample_times(0.05, 0.0) == std::vector<double>{0.0, 0.05});
  const auto t = sample_times(0.05, 0.01);
  REQUIRE(t.size() == 6);
  CHECK(t[3] == doctest::Approx(0.03));
  CHECK(sample_times(0.05, 0.02).back() == 0.05);
  CHECK(sample_times(0.05, 0.02).size() == 4);
}

TEST_CASE("Picard iteration on constant data converges immediately") {
  const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 1}));
  const Grid g(1, 32, kTwoPi);
  Field u(g, 2);
  u.values.setConstant(1.0);
  SolverConfig cfg;
  cfg.picard.enabled = true;
  const PicardResult res = run_picard(s, u, cfg);
  CHECK(res.converged);
  REQUIRE(!res.trace.empty());
  CHECK(res.trace.size() <= 2);
  CHECK(res.trace.front().N <= 1e-12);
  CHECK(res.halvings == 0);
}

TEST_CASE("Picard iteration contracts on smooth data") {
  const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 1}));
  const Grid g(1, 128, kTwoPi);
  Field u(g, 2);
  for (int p = 0; p < g.points(); ++p) {
    const double x = g.coordinate(p, 0);
    u.values(0, p) = 1.0 + 0.5 * std::cos(x);
    u.values(1, p) = 1.0 + 0.5 * std::sin(x);
  }
  SolverConfig cfg;
  cfg.picard.enabled = true;
  const PicardResult res = run_picard(s, u, cfg);
  CHECK(res.converged);
  for (const PicardRecord& rec : res.trace) {
    CHECK(std::isfinite(rec.N));
    CHECK(rec.max_hs < res.K * res.R);
    if (rec.level >= 4) CHECK(rec.ratio <= 0.6);
  }
  MESSAGE("levels " << res.trace.size() << ", T* " << res.T_star << ", halvings " << res.halvings);

  // An oversized horizon is cut down by the monitor before contraction.
  const Grid coarse(1, 32, kTwoPi);
  Field uc(coarse, 2);
  for (int p = 0; p < coarse.points(); ++p) {
    const double x = coarse.coordinate(p, 0);
    uc.values(0, p) = 1.0 + 0.5 * std::cos(x);
    uc.values(1, p) = 1.0 + 0.5 * std::sin(x);
  }
  SolverConfig big = cfg;
  big.picard.stage_horizon = 10.0;
  const PicardResult adv = run_picard(s, uc, big);
  CHECK(adv.halvings >= 1);
  CHECK(adv.converged);
  CHECK(adv.T_star < 10.0);
  CHECK(adv.monitor_events.size() == static_cast<std::size_t>(adv.halvings));
}

TEST_CASE("Picard iteration also runs for a general interaction matrix") {
  Mat B(2, 2);
  B << 1, 1, 1, 1;
  const Grid g(1, 64, kTwoPi);
  Field u(g, 2);
  for (int p = 0; p < g.points(); ++p) {
    const double x = g.coordinate(p, 0);
    u.values(0, p) = 1.0 + 0.3 * std::cos(x);
    u.values(1, p) = 1.0 + 0.3 * std::sin(x);
  }
  SolverConfig cfg;
  cfg.picard.enabled = true;
  const PicardResult res = run_picard(general_spec(B), u, cfg);
  CHECK(res.converged);
}

TEST_CASE("direct solver self-convergence against a fine reference") {
  const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 1}));
  SolverConfig cfg;
  cfg.t_end = 0.05;
  const Grid fine_grid(1, 1024, kTwoPi);
  const Field ref = run(s, benchmark_data(fine_grid), cfg, RunMode::Direct).direct->snapshots.back();
  // Terminal-state error at the coarse points; the reference is 16x and 8x finer
  // than the two coarse grids, so its own error is a small fraction of either.
  std::vector<double> err;
  for (int N : {64, 128, 256}) {
    const Grid g(1, N, kTwoPi);
    const Field u = run(s, benchmark_data(g), cfg, RunMode::Direct).direct->snapshots.back();
    const int stride = 1024 / N;
    double e = 0.0;
    for (int p = 0; p < N; ++p) e = std::max(e, (u.values.col(p) - ref.values.col(p * stride)).cwiseAbs().maxCoeff());
    err.push_back(e);
  }
  MESSAGE("errors " << err[0] << " " << err[1] << " " << err[2]);
  for (int i = 0; i + 1 < 3; ++i) {
    CHECK(err[i] / err[i + 1] >= 3.4);
    CHECK(err[i] / err[i + 1] <= 4.6);
  }
}
