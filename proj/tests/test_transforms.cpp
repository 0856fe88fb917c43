#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "crossdiff/error.hpp"
#include "crossdiff/transforms.hpp"
#include "oracles.hpp"

using namespace crossdiff;

namespace {

SystemSpec rank1_spec(const Vec& k, const Vec& a) {
  SystemSpec s;
  s.n = static_cast<int>(k.size());
  s.rank = 1;
  s.domain_length = 2.0 * std::numbers::pi;
  s.kind = Rank1Coefficients{k, a};
  return s;
}

SystemSpec rank1_spec(std::initializer_list<double> k) {
  const Vec kv = Eigen::Map<const Vec>(k.begin(), static_cast<Eigen::Index>(k.size()));
  return rank1_spec(kv, Vec::Ones(kv.size()));
}

Vec vec(std::initializer_list<double> v) { return Eigen::Map<const Vec>(v.begin(), static_cast<Eigen::Index>(v.size())); }

/// Sorted random coefficients with a strict gap below the largest one.
SystemSpec random_rank1(std::mt19937_64& rng, int n, bool a_equals_k = false) {
  Vec k(n);
  for (int i = 0; i < n; ++i) k[i] = oracle::uniform(rng, 0.3, 4.0);
  std::sort(k.data(), k.data() + n);
  k[n - 1] = k.maxCoeff() + oracle::uniform(rng, 0.1, 1.0);
  Vec a(n);
  for (int i = 0; i < n; ++i) a[i] = oracle::uniform(rng, 0.2, 3.0);
  return rank1_spec(k, a_equals_k ? k : a);
}

double rel_err(const Vec& got, const Vec& want) {
  return ((got - want).array().abs() / (1.0 + want.array().abs())).maxCoeff();
}

double rel_err_positive(const Vec& got, const Vec& want) {
  return ((got - want).array().abs() / want.array()).maxCoeff();
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ConfigParse;
}

Mat ones2() {
  Mat B(2, 2);
  B << 1, 1, 1, 1;
  return B;
}

}  // namespace

TEST_CASE("rank-one forward transform examples") {
  const SystemSpec s = rank1_spec({1, 2});
  auto w = phi_rank1(vec({1, 1}), s).stacked();
  CHECK(w[0] == doctest::Approx(0.0));
  CHECK(w[1] == doctest::Approx(2.0));
  w = phi_rank1(vec({2, 4}), s).stacked();
  CHECK(std::abs(w[0]) <= 1e-15);
  CHECK(w[1] == doctest::Approx(6.0));
  w = phi_rank1(vec({1, 4}), s).stacked();
  CHECK(w[0] == doctest::Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(5.0));
  CHECK(code_of([&] { phi_rank1(vec({1, 0}), s); }) == ErrorCode::NonPositiveDensity);
}

TEST_CASE("rank-one inverse solves s + sqrt(s) = w_n for k = (1, 2)") {
  const SystemSpec s = rank1_spec({1, 2});
  for (double wn : {2.0, 6.0, 0.3, 117.0}) {
    // Quadratic in sqrt(s): sqrt(s) = (-1 + sqrt(1 + 4 w_n)) / 2.
    const double root = 0.5 * (-1.0 + std::sqrt(1.0 + 4.0 * wn));
    const Vec u = psi_rank1(PointW{vec({0.0}), vec({wn})}, s);
    CHECK(u[1] == doctest::Approx(root * root).epsilon(1e-13));
    CHECK(u[0] == doctest::Approx(root).epsilon(1e-13));
  }
  const Vec u = psi_rank1(PointW{vec({0.0}), vec({2.0})}, s);
  CHECK(std::abs(u[0] - 1.0) <= 1e-14);
  CHECK(std::abs(u[1] - 1.0) <= 1e-14);
  const Vec u6 = psi_rank1(PointW{vec({0.0}), vec({6.0})}, s);
  CHECK(std::abs(u6[0] - 2.0) <= 1e-13);
  CHECK(std::abs(u6[1] - 4.0) <= 1e-13);
  CHECK(code_of([&] { psi_rank1(PointW{vec({0.0}), vec({0.0})}, s); }) == ErrorCode::DomainExit);
  CHECK(code_of([&] { psi_rank1(PointW{vec({0.0}), vec({-1.0})}, s); }) == ErrorCode::DomainExit);
}

TEST_CASE("rank-one inverse residual is tiny") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const SystemSpec s = random_rank1(rng, 2 + trial % 4);
    PointW w;
    w.hyp = 3.0 * oracle::gaussian(rng, s.n - 1);
    w.par = vec({std::exp(oracle::uniform(rng, -4, 5))});
    const Vec u = psi_rank1(w, s);
    const Vec v = s.a().cwiseProduct(u);
    // g(v_n) = v_n + sum_j exp(k_j w_j) v_n^{k_j/k_n}
    double g = v[s.n - 1];
    for (int j = 0; j < s.n - 1; ++j) {
      g += std::exp(s.k()[j] * w.hyp[j]) * std::pow(v[s.n - 1], s.k()[j] / s.k()[s.n - 1]);
    }
    CHECK(std::abs(g - w.par[0]) <= 1e-12 * w.par[0]);
  }
}

TEST_CASE("rank-one Jacobian determinant closed form") {
  CHECK(jacobian_rank1(vec({1, 1}), rank1_spec({1, 2})).det == doctest::Approx(1.5));
  CHECK(jacobian_rank1(vec({1, 1, 1}), rank1_spec({1, 2, 4})).det == doctest::Approx(0.875));
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const SystemSpec s = random_rank1(rng, 2 + trial % 5);
    const Vec u = oracle::positive(rng, s.n);
    const Rank1Jacobian J = jacobian_rank1(u, s);
    CHECK(J.det > 0.0);
    CHECK(std::abs(oracle::cofactor_det(J.D) - J.det) <= 1e-12 * J.det);
    // The matrix itself against central differences of the forward map.
    const Mat fd = oracle::fd_jacobian([&](const Vec& x) { return phi_rank1(x, s).stacked(); }, u, 1e-6 * u.minCoeff());
    CHECK(((fd - J.D).cwiseAbs().maxCoeff()) <= 1e-6 * (1.0 + J.D.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("rank-one round trips") {
  std::mt19937_64 rng(101);
  for (int n : {2, 3, 5}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const SystemSpec s = random_rank1(rng, n);
      const Vec u = oracle::positive(rng, n);
      const PointW w = phi_rank1(u, s);
      CHECK(rel_err_positive(psi_rank1(w, s), u) <= 1e-10);
      PointW w2;
      w2.hyp = 2.0 * oracle::gaussian(rng, n - 1);
      w2.par = vec({std::exp(oracle::uniform(rng, -3, 4))});
      CHECK(rel_err(phi_rank1(psi_rank1(w2, s), s).stacked(), w2.stacked()) <= 1e-10);
    }
  }
}

TEST_CASE("general transform examples") {
  const EigenStructure E = eigenstructure(ones2());
  PointW w = phi_general(vec({1, 1}), E);
  CHECK(std::abs(w.hyp[0]) <= 1e-15);
  CHECK(w.par[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  const double e = std::exp(1.0);
  w = phi_general(vec({e, e}), E);
  CHECK(std::abs(w.hyp[0]) <= 1e-15);
  CHECK(w.par[0] == doctest::Approx(2.0 * e / std::sqrt(2.0)).epsilon(1e-15));

  const EigenStructure I3 = eigenstructure(Mat::Identity(3, 3));
  w = phi_general(vec({0.5, 2, 3}), I3);
  CHECK(w.hyp.size() == 0);
  CHECK(w.par.cwiseAbs() == vec({0.5, 2, 3}));
}

TEST_CASE("general inverse examples and divergence certificate") {
  const EigenStructure E = eigenstructure(ones2());
  const GeneralInverse inv = invert_general(PointW{vec({0.0}), vec({std::sqrt(2.0)})}, E);
  CHECK(inv.X.norm() <= 1e-14);
  CHECK((inv.u - vec({1, 1})).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(code_of([&] { psi_general(PointW{vec({0.0}), vec({-1.0})}, E); }) == ErrorCode::MinimizerDiverged);
}

TEST_CASE("general round trips over every rank") {
  std::mt19937_64 rng(202);
  int checked = 0;
  for (int n = 1; n <= 6; ++n) {
    for (int r = 1; r <= n; ++r) {
      for (int trial = 0; trial < 1000 / 21 + 1; ++trial) {
        const Mat B = oracle::psd(rng, n, r);
        const EigenStructure E = eigenstructure(B);
        const Vec u = oracle::positive(rng, n);
        const PointW w = phi_general(u, E);
        const GeneralInverse inv = invert_general(w, E);
        CHECK(rel_err_positive(inv.u, u) <= 1e-10);
        CHECK(inv.residual <= 1e-12 * (1.0 + w.par.norm()));
        CHECK(rel_err(phi_general(inv.u, E).stacked(), w.stacked()) <= 1e-10);
        ++checked;
      }
    }
  }
  CHECK(checked >= 1000);
}

TEST_CASE("general sensitivities") {
  const EigenStructure E = eigenstructure(ones2());
  const GeneralSensitivity s = dpsi_general(vec({1, 2}), E);
  CHECK(s.dXF(0, 0) == doctest::Approx(1.5).epsilon(1e-15));

  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 5;
    const int r = 1 + trial % (n - 1);
    const EigenStructure Er = eigenstructure(oracle::psd(rng, n, r));
    const Vec u = oracle::positive(rng, n, 0.2, 5.0);
    const GeneralSensitivity g = dpsi_general(u, Er);
    // Closed-form inverse times the Hessian is the identity.
    CHECK((g.dXF_inverse * g.dXF - Mat::Identity(r, r)).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + g.dXF_inverse.norm()));
    // Finite differences of X(w) = P log psi(w).
    const Vec w0 = phi_general(u, Er).stacked();
    const int h = n - r;
    auto X_of = [&](const Vec& w) {
      return Vec(Er.P * psi_general(PointW::split(w, h, TransformVariant::GeneralEigen), Er).array().log().matrix());
    };
    const Mat fd = oracle::fd_jacobian(X_of, w0, 1e-6);
    Mat analytic(r, n);
    analytic << g.dX_dwI, g.dX_dwII;
    const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
    CHECK((fd - analytic).cwiseAbs().maxCoeff() <= 1e-5 * scale);
  }
}

TEST_CASE("alternative transform examples") {
  {
    const SystemSpec s = rank1_spec({1, 1});
    const PointW w = phi_alt(vec({1, 1}), s);
    CHECK(w.hyp[0] == doctest::Approx(0.5));
    CHECK(w.par[0] == doctest::Approx(2.0));
  }
  {
    const SystemSpec s = rank1_spec(vec({1, 2}), vec({1, 2}));
    const PointW w = phi_alt(vec({1, 1}), s);
    CHECK(w.hyp[0] == doctest::Approx(0.5));
    CHECK(w.par[0] == doctest::Approx(3.0));
    CHECK(code_of([&] { psi_alt(PointW{vec({1.2}), vec({1.0})}, s); }) == ErrorCode::SimplexViolation);
    CHECK(code_of([&] { psi_alt(PointW{vec({-0.1}), vec({1.0})}, s); }) == ErrorCode::SimplexViolation);
    CHECK(code_of([&] { psi_alt(PointW{vec({1.0}), vec({1.0})}, s); }) == ErrorCode::SimplexViolation);
  }
  CHECK_THROWS_AS(phi_alt(vec({1, 1}), rank1_spec(vec({1, 2}), vec({1, 1}))), Error);
}

TEST_CASE("alternative transform round trips") {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    const SystemSpec s = random_rank1(rng, 2 + trial % 4, true);
    const Vec u = oracle::positive(rng, s.n, 0.05, 10.0);
    CHECK(rel_err_positive(psi_alt(phi_alt(u, s), s), u) <= 1e-10);
    // Random point of the open simplex times a positive level.
    Vec e = oracle::positive(rng, s.n, 0.05, 1.0);
    e /= e.sum();
    PointW w{e.head(s.n - 1), vec({std::exp(oracle::uniform(rng, -2, 3))}), TransformVariant::SimplexAlt};
    CHECK(rel_err(phi_alt(psi_alt(w, s), s).stacked(), w.stacked()) <= 1e-10);
  }
}

TEST_CASE("chain rule: forward Jacobian times inverse Jacobian is the identity") {
  std::mt19937_64 rng(505);
  for (int trial = 0; trial < 100; ++trial) {
    const SystemSpec s = random_rank1(rng, 2 + trial % 3);
    const Vec u = oracle::positive(rng, s.n, 0.2, 5.0);
    const Vec w = phi_rank1(u, s).stacked();
    const Mat dpsi = oracle::fd_jacobian(
        [&](const Vec& x) { return psi_rank1(PointW::split(x, s.n - 1, TransformVariant::Rank1Explicit), s); }, w, 1e-6);
    CHECK((jacobian_rank1(u, s).D * dpsi - Mat::Identity(s.n, s.n)).cwiseAbs().maxCoeff() <= 1e-6);

    const SystemSpec sa = random_rank1(rng, 2 + trial % 3, true);
    const Vec wa = phi_alt(u.head(sa.n), sa).stacked();
    const auto fwd = [&](const Vec& x) { return phi_alt(x, sa).stacked(); };
    const auto inv = [&](const Vec& x) { return psi_alt(PointW::split(x, sa.n - 1, TransformVariant::SimplexAlt), sa); };
    const Mat Dphi = oracle::fd_jacobian(fwd, u.head(sa.n), 1e-6);
    const Mat Dpsi = oracle::fd_jacobian(inv, wa, 1e-7);
    CHECK((Dphi * Dpsi - Mat::Identity(sa.n, sa.n)).cwiseAbs().maxCoeff() <= 1e-6);

    const int n = 2 + trial % 4;
    const int r = 1 + trial % (n - 1);
    const EigenStructure E = eigenstructure(oracle::psd(rng, n, r));
    const Vec ug = oracle::positive(rng, n, 0.2, 5.0);
    const Vec wg = phi_general(ug, E).stacked();
    const Mat Dg = oracle::fd_jacobian([&](const Vec& x) { return phi_general(x, E).stacked(); }, ug, 1e-6);
    const Mat Dgi = oracle::fd_jacobian(
        [&](const Vec& x) { return psi_general(PointW::split(x, n - r, TransformVariant::GeneralEigen), E); }, wg, 1e-6);
    CHECK((Dg * Dgi - Mat::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("hyperbolic variables are constant along the exponential flow of k") {
  std::mt19937_64 rng(606);
  for (int trial = 0; trial < 300; ++trial) {
    const SystemSpec s = random_rank1(rng, 2 + trial % 4);
    const SystemSpec sa = rank1_spec(s.k(), s.k());
    const Vec u = oracle::positive(rng, s.n, 0.1, 5.0);
    const double t = oracle::uniform(rng, -1.0, 1.0);
    const Vec moved = (s.k() * t).array().exp().matrix().cwiseProduct(u);
    CHECK((phi_rank1(moved, s).hyp - phi_rank1(u, s).hyp).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((phi_alt(moved, sa).hyp - phi_alt(u, sa).hyp).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("equal-coefficient aggregation") {
  {
    const SystemSpec s = rank1_spec({1, 1});
    const AggregationPlan plan = aggregation_plan(s);
    CHECK(plan.reduced_n() == 1);
    CHECK(plan.advected() == 1);
    const Vec agg = aggregate_point(vec({0.3, 0.7}), plan);
    CHECK(agg.size() == 1);
    CHECK(agg[0] == doctest::Approx(1.0));
    const SystemSpec red = reduced_spec(s, plan);
    CHECK(red.n == 1);
    CHECK(red.k()[0] == 1.0);
  }
  {
    const SystemSpec s = rank1_spec({1, 2, 2});
    const AggregationPlan plan = aggregation_plan(s);
    const SystemSpec red = reduced_spec(s, plan);
    CHECK(red.k() == vec({1, 2}));
    CHECK(aggregate_point(vec({1, 2, 3}), plan) == vec({1, 5}));
    CHECK(reconstruct_point(vec({1, 5}), vec({3}), plan) == vec({1, 2, 3}));
  }
  {
    const SystemSpec s = rank1_spec({1, 2, 3});
    const AggregationPlan plan = aggregation_plan(s);
    CHECK(plan.trivial());
    CHECK(reduced_spec(s, plan).k() == s.k());
  }
  {
    // Weighted merge: the merged density is sum a_i u_i with a' = 1.
    const SystemSpec s = rank1_spec(vec({1, 3, 3}), vec({2, 0.5, 4}));
    const AggregationPlan plan = aggregation_plan(s);
    const Vec u = vec({0.7, 1.1, 0.4});
    const Vec agg = aggregate_point(u, plan);
    CHECK(agg[1] == doctest::Approx(0.5 * 1.1 + 4 * 0.4));
    CHECK((reconstruct_point(agg, vec({0.4}), plan) - u).cwiseAbs().maxCoeff() <= 1e-15);
    const SystemSpec red = reduced_spec(s, plan);
    // Pressure is unchanged by the merge.
    CHECK(red.a().dot(agg) == doctest::Approx(s.a().dot(u)));
  }
  {
    const SystemSpec s = rank1_spec({2, 2, 2});
    const Grid g(1, 8, 1.0);
    Field f(g, 3);
    f.values.setConstant(0.5);
    const Aggregation agg = aggregate_equal_k(s, f);
    CHECK(agg.spec.n == 1);
    CHECK(agg.field.values.row(0).maxCoeff() == doctest::Approx(1.5));
  }
}
