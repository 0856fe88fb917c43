#include "crossdiff/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "crossdiff/error.hpp"
#include "crossdiff/monotone_root.hpp"

namespace crossdiff {

namespace {

void require_positive_density(const Vec& u) {
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (!(u[i] > 0.0) || !std::isfinite(u[i])) {
      std::ostringstream msg;
      msg << "u[" << i << "] = " << u[i];
      throw Error(ErrorCode::NonPositiveDensity, msg.str());
    }
  }
}

void require_rank1(const SystemSpec& spec, std::size_t size) {
  if (!spec.is_rank1()) throw Error(ErrorCode::BadDimension, "rank-one transform needs a rank-one spec");
  if (static_cast<int>(size) != spec.n) throw Error(ErrorCode::BadDimension, "state size does not match spec");
}

}  // namespace

Vec PointW::stacked() const {
  Vec w(hyp.size() + par.size());
  w << hyp, par;
  return w;
}

PointW PointW::split(const Vec& w, int hyperbolic_dim, TransformVariant variant) {
  return {w.head(hyperbolic_dim), w.tail(w.size() - hyperbolic_dim), variant};
}

PointW phi_rank1(const Vec& u, const SystemSpec& spec) {
  require_rank1(spec, u.size());
  require_positive_density(u);
  const int n = spec.n;
  const Vec& k = spec.k();
  const Vec v = spec.a().cwiseProduct(u);
  const double anchor = std::log(v[n - 1]) / k[n - 1];
  PointW w;
  w.variant = TransformVariant::Rank1Explicit;
  w.hyp.resize(n - 1);
  for (int i = 0; i < n - 1; ++i) w.hyp[i] = std::log(v[i]) / k[i] - anchor;
  w.par = Vec::Constant(1, v.sum());
  return w;
}

Vec psi_rank1(const PointW& w, const SystemSpec& spec) {
  require_rank1(spec, w.hyp.size() + w.par.size());
  const int n = spec.n;
  const Vec& k = spec.k();
  const double wn = w.par[0];
  if (!(wn > 0.0) || !std::isfinite(wn)) {
    throw Error(ErrorCode::DomainExit, "parabolic variable must be positive, got " + std::to_string(wn));
  }
  // In t = log v_n the constraint reads e^t + sum_j exp(k_j w_j + t k_j/k_n) = w_n,
  // a convex increasing function of t.
  const double kn = k[n - 1];
  auto g = [&](double t) {
    double value = std::exp(t);
    double slope = value;
    for (int j = 0; j < n - 1; ++j) {
      const double beta = k[j] / kn;
      const double term = std::exp(k[j] * w.hyp[j] + beta * t);
      value += term;
      slope += beta * term;
    }
    return std::pair{value - wn, slope};
  };
  MonotoneRootOptions opt;
  opt.abs_tol = 1e-14 * wn;
  const auto root = monotone_root(g, std::log(0.5 * wn), opt);
  Vec v(n);
  for (int j = 0; j < n - 1; ++j) v[j] = std::exp(k[j] * w.hyp[j] + k[j] / kn * root.t);
  v[n - 1] = std::exp(root.t);
  return v.cwiseQuotient(spec.a());
}

Rank1Jacobian jacobian_rank1(const Vec& u, const SystemSpec& spec) {
  require_rank1(spec, u.size());
  require_positive_density(u);
  const int n = spec.n;
  const Vec& k = spec.k();
  const Vec& a = spec.a();
  Rank1Jacobian J;
  J.D = Mat::Zero(n, n);
  for (int i = 0; i < n - 1; ++i) {
    J.D(i, i) = 1.0 / (k[i] * u[i]);
    J.D(i, n - 1) = -1.0 / (k[n - 1] * u[n - 1]);
  }
  J.D.row(n - 1) = a.transpose();
  // sum_l a_l prod_{i != l} 1/(k_i u_i) = prod_i 1/(k_i u_i) * sum_l a_l k_l u_l
  double prod = 1.0;
  for (int i = 0; i < n; ++i) prod /= k[i] * u[i];
  J.det = prod * (a.cwiseProduct(k).cwiseProduct(u)).sum();
  return J;
}

PointW phi_general(const Vec& u, const EigenStructure& E) {
  if (u.size() != E.n()) throw Error(ErrorCode::BadDimension, "state size does not match B");
  require_positive_density(u);
  PointW w;
  w.variant = TransformVariant::GeneralEigen;
  w.hyp = E.Q * u.array().log().matrix();
  w.par = E.P * u;
  return w;
}

GeneralInverse invert_general(const PointW& w, const EigenStructure& E, const std::optional<Vec>& warm_start,
                              const GeneralInverseOptions& opt) {
  const int h = E.kernel_dim();
  const int r = E.rank;
  if (w.hyp.size() != h || w.par.size() != r) throw Error(ErrorCode::BadDimension, "w has wrong block sizes");
  const Vec base = E.Q.transpose() * w.hyp;
  const double wnorm = std::sqrt(w.hyp.squaredNorm() + w.par.squaredNorm());
  const double tol = opt.grad_tol * (1.0 + w.par.norm());
  const double bound = opt.divergence_factor * (1.0 + wnorm);

  auto objective = [&](const Vec& X, Vec& u) {
    u = (base + E.P.transpose() * X).array().exp().matrix();
    return u.sum() - w.par.dot(X);
  };

  Vec X;
  if (warm_start && warm_start->size() == r) {
    X = *warm_start;
  } else {
    const Vec proxy = (E.P.transpose() * w.par).cwiseMax(1e-8);
    X = E.P * proxy.array().log().matrix();
  }
  Vec u;
  double G = objective(X, u);
  if (!std::isfinite(G)) {
    X.setZero();
    G = objective(X, u);
  }

  GeneralInverse out;
  int polish = 0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Vec F = E.P * u - w.par;
    const double fnorm = F.norm();
    if (fnorm <= tol) {
      // One extra Newton step brings the residual to round-off level.
      if (polish++ >= 1) break;
    }
    const Mat H = E.P * u.asDiagonal() * E.P.transpose();
    const Eigen::LDLT<Mat> ldlt(H);
    if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::SingularBlock, "Hessian factorisation failed");
    const Vec step = -ldlt.solve(F);
    const double slope = F.dot(step);
    double t = 1.0;
    Vec trial_u;
    Vec trial = X + step;
    double trial_G = objective(trial, trial_u);
    // Close to the minimiser the decrease of G drops below its round-off; the
    // gradient norm is then the only meaningful merit.
    const bool resolvable = -slope > 1e-11 * (1.0 + std::abs(G));
    if (!resolvable && (E.P * trial_u - w.par).norm() < fnorm) {
      X = trial;
      u = trial_u;
      G = trial_G;
      out.iterations = it + 1;
      continue;
    }
    while (!(trial_G <= G + 1e-4 * t * slope) && t > 1e-12) {
      t *= 0.5;
      trial = X + t * step;
      trial_G = objective(trial, trial_u);
    }
    if (!(trial_G <= G + 1e-4 * t * slope)) {
      // Step too small to register a decrease: accept if the gradient is already tiny.
      if (fnorm <= 1e3 * tol) break;
      throw Error(ErrorCode::MinimizerDiverged, "line search stalled");
    }
    X = trial;
    u = trial_u;
    G = trial_G;
    out.iterations = it + 1;
    if (X.norm() > bound) {
      throw Error(ErrorCode::MinimizerDiverged, "iterate left every bounded set; w_II is outside P R_+^n");
    }
  }
  const double residual = (E.P * u - w.par).norm();
  if (!(residual <= 1e3 * tol)) {
    throw Error(ErrorCode::MinimizerDiverged, "no convergence, gradient norm " + std::to_string(residual));
  }
  out.u = u;
  out.X = X;
  out.residual = residual;
  return out;
}

Vec psi_general(const PointW& w, const EigenStructure& E) { return invert_general(w, E).u; }

GeneralSensitivity dpsi_general(const Vec& u, const EigenStructure& E) {
  require_positive_density(u);
  const int h = E.kernel_dim();
  const int r = E.rank;
  GeneralSensitivity s;
  s.dXF = E.P * u.asDiagonal() * E.P.transpose();
  const Eigen::LDLT<Mat> ldlt(s.dXF);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::SingularBlock, "P D(u) P^T is singular");

  const Vec uinv = u.cwiseInverse();
  const Mat PDinvPt = E.P * uinv.asDiagonal() * E.P.transpose();
  if (h > 0) {
    const Mat QDinvQt = E.Q * uinv.asDiagonal() * E.Q.transpose();
    const Mat PDinvQt = E.P * uinv.asDiagonal() * E.Q.transpose();
    const Eigen::LDLT<Mat> qblock(QDinvQt);
    s.dXF_inverse = PDinvPt - PDinvQt * qblock.solve(PDinvQt.transpose());
  } else {
    s.dXF_inverse = PDinvPt;
  }
  // d/dw_m F = P D(u) xi^m for m in I, and -I for the parabolic block.
  s.dX_dwI = -ldlt.solve(E.P * u.asDiagonal() * E.Q.transpose());
  s.dX_dwII = ldlt.solve(Mat::Identity(r, r));
  s.dlogu_dwI = E.Q.transpose() + E.P.transpose() * s.dX_dwI;
  s.dlogu_dwII = E.P.transpose() * s.dX_dwII;
  return s;
}

namespace {

void require_alt(const SystemSpec& spec, std::size_t size) {
  require_rank1(spec, size);
  if ((spec.a() - spec.k()).cwiseAbs().maxCoeff() > 1e-14 * spec.k().cwiseAbs().maxCoeff()) {
    throw Error(ErrorCode::BadDimension, "the alternative transform requires a = k");
  }
}

}  // namespace

PointW phi_alt(const Vec& u, const SystemSpec& spec) {
  require_alt(spec, u.size());
  require_positive_density(u);
  const int n = spec.n;
  const Vec& k = spec.k();
  Vec roots(n);
  for (int j = 0; j < n; ++j) roots[j] = std::pow(u[j], 1.0 / k[j]);
  const double L = roots.sum();
  PointW w;
  w.variant = TransformVariant::SimplexAlt;
  w.hyp = roots.head(n - 1) / L;
  w.par = Vec::Constant(1, k.dot(u));
  return w;
}

Vec psi_alt(const PointW& w, const SystemSpec& spec) {
  require_alt(spec, w.hyp.size() + w.par.size());
  const int n = spec.n;
  const Vec& k = spec.k();
  const double sigma = 1.0 - w.hyp.sum();
  for (int i = 0; i < n - 1; ++i) {
    if (!(w.hyp[i] > 0.0)) throw Error(ErrorCode::SimplexViolation, "w_I has a non-positive entry");
  }
  if (!(sigma > 0.0)) throw Error(ErrorCode::SimplexViolation, "entries of w_I must sum to less than 1");
  const double wn = w.par[0];
  if (!(wn > 0.0) || !std::isfinite(wn)) throw Error(ErrorCode::DomainExit, "parabolic variable must be positive");

  // With s = u_n = e^t: L = s^{1/k_n}/sigma and u_i = (w_i L)^{k_i}.
  const double kn = k[n - 1];
  const double log_sigma = std::log(sigma);
  Vec log_w(n - 1);
  for (int i = 0; i < n - 1; ++i) log_w[i] = std::log(w.hyp[i]);
  auto g = [&](double t) {
    double value = kn * std::exp(t);
    double slope = value;
    for (int i = 0; i < n - 1; ++i) {
      const double term = k[i] * std::exp(k[i] * (log_w[i] + t / kn - log_sigma));
      value += term;
      slope += k[i] / kn * term;
    }
    return std::pair{value - wn, slope};
  };
  MonotoneRootOptions opt;
  opt.abs_tol = 1e-14 * wn;
  const auto root = monotone_root(g, std::log(0.5 * wn / kn), opt);
  Vec u(n);
  for (int i = 0; i < n - 1; ++i) u[i] = std::exp(k[i] * (log_w[i] + root.t / kn - log_sigma));
  u[n - 1] = std::exp(root.t);
  return u;
}

AggregationPlan aggregation_plan(const SystemSpec& sorted_spec) {
  if (!sorted_spec.is_rank1()) throw Error(ErrorCode::BadDimension, "aggregation needs a rank-one spec");
  const Vec& k = sorted_spec.k();
  const int n = sorted_spec.n;
  for (int i = 1; i < n; ++i) {
    if (k[i] < k[i - 1]) throw Error(ErrorCode::BadDimension, "spec must be sorted by k");
  }
  AggregationPlan plan;
  plan.original_n = n;
  plan.tail_k = k[n - 1];
  int m = n - 1;
  while (m > 0 && k[m - 1] == k[n - 1]) --m;
  plan.first_tail = m;
  plan.tail_a = sorted_spec.a().tail(n - m);
  return plan;
}

SystemSpec reduced_spec(const SystemSpec& sorted_spec, const AggregationPlan& plan) {
  if (plan.trivial()) return sorted_spec;
  const int m = plan.first_tail;
  Vec k(m + 1), a(m + 1);
  k.head(m) = sorted_spec.k().head(m);
  a.head(m) = sorted_spec.a().head(m);
  k[m] = plan.tail_k;
  a[m] = 1.0;
  SystemSpec out = sorted_spec;
  out.n = m + 1;
  out.kind = Rank1Coefficients{k, a};
  return out;
}

Vec aggregate_point(const Vec& u, const AggregationPlan& plan) {
  if (plan.trivial()) return u;
  const int m = plan.first_tail;
  Vec out(m + 1);
  out.head(m) = u.head(m);
  out[m] = plan.tail_a.dot(u.tail(plan.original_n - m));
  return out;
}

Vec reconstruct_point(const Vec& reduced_u, const Vec& advected_tail, const AggregationPlan& plan) {
  if (plan.trivial()) return reduced_u;
  const int m = plan.first_tail;
  Vec u(plan.original_n);
  u.head(m) = reduced_u.head(m);
  u.tail(plan.advected()) = advected_tail;
  u[m] = (reduced_u[m] - plan.tail_a.tail(plan.advected()).dot(advected_tail)) / plan.tail_a[0];
  return u;
}

Aggregation aggregate_equal_k(const SystemSpec& sorted_spec, const Field& u) {
  const AggregationPlan plan = aggregation_plan(sorted_spec);
  Field reduced(u.grid, plan.reduced_n(), VariableSpace::U, u.time);
  for (int p = 0; p < u.grid.points(); ++p) reduced.values.col(p) = aggregate_point(u.point(p), plan);
  return {reduced_spec(sorted_spec, plan), std::move(reduced), plan};
}

}  // namespace crossdiff
