#include "crossdiff/solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "crossdiff/entropy.hpp"
#include "crossdiff/error.hpp"
#include "crossdiff/spectral_structure.hpp"
#include "crossdiff/transforms.hpp"

namespace crossdiff {

std::string_view to_string(TimeScheme scheme) {
  return scheme == TimeScheme::Imex ? "imex" : "explicit_rk2";
}

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::Direct:
      return "direct";
    case RunMode::NormalForm:
      return "normal_form";
    case RunMode::Both:
      return "both";
  }
  return "direct";
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

Vec row_of(const FieldData& X, int c) { return X.row(c).transpose(); }

/// Value at p + 1/2 along `axis` by arithmetic mean.
Field half_average(const Field& f, int axis) {
  Field out(f.grid, f.components(), f.space, f.time);
  for (int p = 0; p < f.grid.points(); ++p) {
    const int q = f.grid.neighbour(p, axis, 1);
    out.values.col(p) = 0.5 * (f.values.col(p) + f.values.col(q));
  }
  return out;
}

/// Pointwise quantities shared by the parabolic blocks of both solvers:
/// y = extract u is the parabolic variable, d_t y = div(C(u) grad y),
/// lhs C symmetric, and mu = potential y the chemical potentials.
struct ParabolicStructure {
  Mat extract;
  Mat lhs;
  Mat potential;
  std::function<Mat(const Vec&)> flux;
  double lambda_max = 0.0;
  bool rank1 = true;
  Vec ka;  // k∘a for the rank-one coefficient

  int r() const { return static_cast<int>(extract.rows()); }

  static ParabolicStructure from_spec(const SystemSpec& spec) {
    ParabolicStructure s;
    if (spec.is_rank1()) {
      s.rank1 = true;
      s.extract = spec.a().transpose();
      s.lhs = Mat::Identity(1, 1);
      s.potential = spec.k();
      s.ka = spec.k().cwiseProduct(spec.a());
      const Vec ka = s.ka;
      s.flux = [ka](const Vec& u) { return Mat::Constant(1, 1, ka.dot(u)); };
    } else {
      s.rank1 = false;
      const EigenStructure E = eigenstructure(spec.B());
      const Vec lambda = E.range_eigenvalues();
      s.extract = E.P;
      s.lhs = lambda.asDiagonal();
      s.potential = E.P.transpose() * lambda.asDiagonal();
      s.lambda_max = lambda.maxCoeff();
      const Mat P = E.P;
      s.flux = [P, lambda](const Vec& u) { return Mat(P * u.asDiagonal() * P.transpose() * lambda.asDiagonal()); };
    }
    return s;
  }

  /// Upper bound for the largest parabolic eigenvalue at u.
  double a_bound(const Vec& u) const { return rank1 ? ka.dot(u) : lambda_max * u.maxCoeff(); }
};

void require_positive_field(const Field& u, const char* where) {
  for (int c = 0; c < u.components(); ++c) {
    for (int p = 0; p < u.grid.points(); ++p) {
      const double v = u.values(c, p);
      if (!(v > 0.0) || !std::isfinite(v)) {
        std::ostringstream msg;
        msg << where << ": u_" << c + 1 << " = " << v << " at point " << p;
        throw Error(ErrorCode::NonPositiveDensity, msg.str());
      }
    }
  }
}

/// Conservative transport div(u_i grad mu_i) of every row of u by the matching row of mu.
FieldData conservative_transport(const Field& u, const FieldData& mu, DerivativeScheme scheme) {
  const Grid& g = u.grid;
  const int n = u.components();
  FieldData out = FieldData::Zero(n, g.points());
  if (scheme == DerivativeScheme::Central2) {
    const double inv_dx2 = 1.0 / (g.dx() * g.dx());
    Vec flux(g.points());
    for (int axis = 0; axis < g.dim(); ++axis) {
      for (int i = 0; i < n; ++i) {
        for (int p = 0; p < g.points(); ++p) {
          const int q = g.neighbour(p, axis, 1);
          flux[p] = 0.5 * (u.values(i, p) + u.values(i, q)) * (mu(i, q) - mu(i, p));
        }
        for (int p = 0; p < g.points(); ++p) {
          out(i, p) += (flux[p] - flux[g.neighbour(p, axis, -1)]) * inv_dx2;
        }
      }
    }
  } else {
    for (int axis = 0; axis < g.dim(); ++axis) {
      for (int i = 0; i < n; ++i) {
        const Vec dmu = derivative(g, row_of(mu, i), axis, scheme);
        const Vec inner = row_of(u.values, i).cwiseProduct(dmu);
        out.row(i) += derivative(g, inner, axis, scheme).transpose();
      }
    }
  }
  return out;
}

/// Half-point flux matrices C(ū_{p+1/2}) for every axis.
std::vector<std::vector<Mat>> half_point_flux(const Field& u, const std::function<Mat(const Vec&)>& flux) {
  std::vector<std::vector<Mat>> out(u.grid.dim());
  for (int axis = 0; axis < u.grid.dim(); ++axis) {
    const Field avg = half_average(u, axis);
    out[axis].resize(u.grid.points());
    for (int p = 0; p < u.grid.points(); ++p) out[axis][p] = flux(avg.point(p));
  }
  return out;
}

/// div(C grad y) with half-point matrices C.
FieldData parabolic_divergence(const Grid& g, const FieldData& y, const std::vector<std::vector<Mat>>& C) {
  const int r = static_cast<int>(y.rows());
  FieldData out = FieldData::Zero(r, g.points());
  const double inv_dx2 = 1.0 / (g.dx() * g.dx());
  FieldData flux(r, g.points());
  for (int axis = 0; axis < g.dim(); ++axis) {
    for (int p = 0; p < g.points(); ++p) {
      const int q = g.neighbour(p, axis, 1);
      flux.col(p) = C[axis][p] * (y.col(q) - y.col(p));
    }
    for (int p = 0; p < g.points(); ++p) out.col(p) += (flux.col(p) - flux.col(g.neighbour(p, axis, -1))) * inv_dx2;
  }
  return out;
}

/// div(C grad y) with pointwise C and spectral derivatives.
FieldData parabolic_divergence_spectral(const Grid& g, const FieldData& y, const std::vector<Mat>& C) {
  const int r = static_cast<int>(y.rows());
  FieldData out = FieldData::Zero(r, g.points());
  for (int axis = 0; axis < g.dim(); ++axis) {
    FieldData dy(r, g.points());
    for (int c = 0; c < r; ++c) dy.row(c) = derivative(g, row_of(y, c), axis, DerivativeScheme::Spectral).transpose();
    FieldData inner(r, g.points());
    for (int p = 0; p < g.points(); ++p) inner.col(p) = C[p] * dy.col(p);
    for (int c = 0; c < r; ++c) {
      out.row(c) += derivative(g, row_of(inner, c), axis, DerivativeScheme::Spectral).transpose();
    }
  }
  return out;
}

/// Solves lhs y - dt div(C grad y) = lhs y_old (lhs C symmetric) by Jacobi-preconditioned CG.
FieldData implicit_parabolic_solve(const Grid& g, const FieldData& y_old, const Mat& lhs,
                                   const std::vector<std::vector<Mat>>& C, double dt, const SolverConfig& cfg) {
  const int r = static_cast<int>(y_old.rows());
  const int P = g.points();
  std::vector<std::vector<Mat>> G(g.dim());
  for (int axis = 0; axis < g.dim(); ++axis) {
    G[axis].resize(P);
    for (int p = 0; p < P; ++p) G[axis][p] = lhs * C[axis][p];
  }
  auto apply = [&](const FieldData& x) {
    FieldData out = lhs * x;
    out -= dt * parabolic_divergence(g, x, G);
    return out;
  };
  FieldData diag(r, P);
  const double inv_dx2 = 1.0 / (g.dx() * g.dx());
  for (int p = 0; p < P; ++p) {
    for (int c = 0; c < r; ++c) {
      double d = lhs(c, c);
      for (int axis = 0; axis < g.dim(); ++axis) {
        d += dt * inv_dx2 * (G[axis][p](c, c) + G[axis][g.neighbour(p, axis, -1)](c, c));
      }
      diag(c, p) = d;
    }
  }
  const FieldData b = lhs * y_old;
  FieldData x = y_old;
  FieldData res = b - apply(x);
  const double bnorm = std::max(b.norm(), 1e-300);
  FieldData z = res.cwiseQuotient(diag);
  FieldData dir = z;
  double rz = (res.array() * z.array()).sum();
  for (int it = 0; it < cfg.cg_max_iters; ++it) {
    if (res.norm() <= cfg.cg_tol * bnorm) return x;
    const FieldData Ad = apply(dir);
    const double alpha = rz / (dir.array() * Ad.array()).sum();
    x += alpha * dir;
    res -= alpha * Ad;
    z = res.cwiseQuotient(diag);
    const double rz_new = (res.array() * z.array()).sum();
    dir = z + (rz_new / rz) * dir;
    rz = rz_new;
  }
  if (res.norm() <= cfg.cg_tol * bnorm) return x;
  throw Error(ErrorCode::StepRejected, "implicit parabolic solve did not converge");
}

/// Largest particle speed |grad mu_i| over the grid.
double max_speed(const Grid& g, const FieldData& mu) {
  double vmax = 0.0;
  for (int i = 0; i < mu.rows(); ++i) {
    Vec speed2 = Vec::Zero(g.points());
    for (int axis = 0; axis < g.dim(); ++axis) {
      speed2 += derivative(g, row_of(mu, i), axis, DerivativeScheme::Central2).cwiseAbs2();
    }
    vmax = std::max(vmax, std::sqrt(speed2.maxCoeff()));
  }
  return vmax;
}

StepLimits make_limits(const Grid& g, double vmax, double amax, const SolverConfig& cfg) {
  StepLimits l;
  l.v_max = vmax;
  l.a_max = amax;
  l.dt_hyperbolic = vmax > 0.0 ? cfg.cfl_hyp * g.dx() / vmax : kInf;
  l.dt_parabolic = amax > 0.0 ? cfg.diff_number * g.dx() * g.dx() / amax : kInf;
  l.dt = cfg.scheme == TimeScheme::Imex ? l.dt_hyperbolic : std::min(l.dt_hyperbolic, l.dt_parabolic);
  return l;
}

// --- Direct system ------------------------------------------------------------

class DirectSystem {
 public:
  DirectSystem(const SystemSpec& spec, const SolverConfig& cfg)
      : spec_(spec), cfg_(cfg), M_(spec.interaction_matrix()), par_(ParabolicStructure::from_spec(spec)) {}

  Field rate(const Field& u) const { return rhs(u, cfg_.spatial); }

  Field rhs(const Field& u, DerivativeScheme scheme) const {
    require_positive_field(u, "direct right-hand side");
    const FieldData mu = M_ * u.values;
    Field out(u.grid, u.components(), VariableSpace::U, u.time);
    out.values = conservative_transport(u, mu, scheme);
    return out;
  }

  StepLimits limits(const Field& u) const {
    const FieldData mu = M_ * u.values;
    double amax = 0.0;
    for (int p = 0; p < u.grid.points(); ++p) amax = std::max(amax, par_.a_bound(u.point(p)));
    return make_limits(u.grid, max_speed(u.grid, mu), amax, cfg_);
  }

  Field step(const Field& u, double dt) const {
    if (cfg_.scheme == TimeScheme::ExplicitRK2) {
      Field u1 = u;
      u1.values += dt * rate(u).values;
      check_stage(u1);
      Field u2 = u1;
      u2.values += dt * rate(u1).values;
      Field out = u;
      out.values = 0.5 * (u.values + u2.values);
      out.time = u.time + dt;
      return out;
    }
    const Field s1 = imex_substep(u, dt);
    check_stage(s1);
    const Field s2 = imex_substep(s1, dt);
    Field out = u;
    out.values = 0.5 * (u.values + s2.values);
    out.time = u.time + dt;
    return out;
  }

 private:
  void check_stage(const Field& u) const {
    const double m = u.values.minCoeff();
    if (!(m >= cfg_.positivity_floor)) {
      throw Error(ErrorCode::PositivityLost, "density fell to " + std::to_string(m) + " inside a step");
    }
  }

  Field imex_substep(const Field& u, double dt) const {
    if (cfg_.spatial != DerivativeScheme::Central2) {
      throw Error(ErrorCode::BadDimension, "the implicit scheme uses the central stencil only");
    }
    const FieldData y_old = par_.extract * u.values;
    const auto C = half_point_flux(u, par_.flux);
    const FieldData y_new = implicit_parabolic_solve(u.grid, y_old, par_.lhs, C, dt, cfg_);
    const FieldData mu = par_.potential * y_new;
    Field out = u;
    out.values += dt * conservative_transport(u, mu, DerivativeScheme::Central2);
    return out;
  }

  SystemSpec spec_;
  SolverConfig cfg_;
  Mat M_;
  ParabolicStructure par_;
};

// --- Normal-form system ---------------------------------------------------------
//
// State rows: the model's w (n rows), then `tail` densities advected with the
// velocity tail_k grad w_n (equal-coefficient species, see aggregate_equal_k).

class NormalFormSystem {
 public:
  NormalFormSystem(const NormalFormModel& model, const SolverConfig& cfg, int tail = 0, double tail_k = 0.0)
      : model_(model), cfg_(cfg), tail_(tail), tail_k_(tail_k) {}

  int n() const { return model_.n(); }
  int h() const { return model_.hyperbolic_dim(); }
  int r() const { return model_.parabolic_dim(); }

  /// Densities of the model species (no tail), warm-starting the inversion.
  Field densities(const Field& state) const {
    Field u(state.grid, n(), VariableSpace::U, state.time);
    if (warm_.size() != static_cast<std::size_t>(state.grid.points())) warm_.assign(state.grid.points(), Vec());
    for (int p = 0; p < state.grid.points(); ++p) {
      const Vec w = state.values.col(p).head(n());
      try {
        u.values.col(p) = model_.to_u(w, &warm_[p]);
      } catch (const Error& e) {
        std::ostringstream msg;
        msg << "state left the normal-form domain at point " << p << " (" << e.what() << ")";
        throw Error(ErrorCode::DomainExit, msg.str());
      }
    }
    return u;
  }

  /// Full rate; `u_out` receives the densities used.
  Field rate(const Field& state, DerivativeScheme scheme, double eps, Field* u_out = nullptr) const {
    const Grid& g = state.grid;
    const Field u = densities(state);
    Field out(g, state.components(), state.space, state.time);
    out.values.topRows(h()) = hyperbolic_rate(state, u, scheme, eps);
    const FieldData y = state.values.middleRows(h(), r());
    if (scheme == DerivativeScheme::Central2) {
      out.values.middleRows(h(), r()) = parabolic_divergence(g, y, half_point_flux(u, flux_fn()));
    } else {
      std::vector<Mat> C(g.points());
      for (int p = 0; p < g.points(); ++p) C[p] = model_.parabolic_flux(u.point(p));
      out.values.middleRows(h(), r()) = parabolic_divergence_spectral(g, y, C);
    }
    if (tail_ > 0) out.values.bottomRows(tail_) = tail_rate(state, state.values.row(n() - 1), scheme);
    if (u_out != nullptr) *u_out = u;
    return out;
  }

  FieldData hyperbolic_rate(const Field& state, const Field& u, DerivativeScheme scheme, double eps) const {
    const Grid& g = state.grid;
    const int hd = h();
    FieldData out = FieldData::Zero(hd, g.points());
    if (hd == 0) return out;
    const int d = g.dim();
    std::vector<FieldData> dwI(d, FieldData(hd, g.points()));
    std::vector<FieldData> dwII(d, FieldData(r(), g.points()));
    for (int axis = 0; axis < d; ++axis) {
      for (int c = 0; c < hd; ++c) dwI[axis].row(c) = derivative(g, row_of(state.values, c), axis, scheme).transpose();
      for (int c = 0; c < r(); ++c) {
        dwII[axis].row(c) = derivative(g, row_of(state.values, hd + c), axis, scheme).transpose();
      }
    }
    std::vector<Mat> T;
    Vec source;
    Mat grad_par(r(), d);
    for (int p = 0; p < g.points(); ++p) {
      for (int axis = 0; axis < d; ++axis) grad_par.col(axis) = dwII[axis].col(p);
      model_.transport(u.point(p), grad_par, T, source);
      Vec acc = source;
      for (int axis = 0; axis < d; ++axis) acc += T[axis] * dwI[axis].col(p);
      out.col(p) = acc;
    }
    if (eps > 0.0) {
      const double scale = eps / g.dx();
      for (int axis = 0; axis < d; ++axis) {
        for (int c = 0; c < hd; ++c) {
          out.row(c) -= scale * fourth_difference(g, row_of(state.values, c), axis).transpose();
        }
      }
    }
    return out;
  }

  FieldData tail_rate(const Field& state, const Eigen::Ref<const Eigen::RowVectorXd>& p, DerivativeScheme scheme) const {
    Field tail(state.grid, tail_, VariableSpace::U, state.time);
    tail.values = state.values.bottomRows(tail_);
    require_positive_field(tail, "advected species");
    FieldData mu(tail_, state.grid.points());
    for (int i = 0; i < tail_; ++i) mu.row(i) = tail_k_ * p;
    return conservative_transport(tail, mu, scheme);
  }

  std::function<Mat(const Vec&)> flux_fn() const {
    return [this](const Vec& u) { return model_.parabolic_flux(u); };
  }

  StepLimits limits(const Field& state, const Field& u) const {
    const FieldData mu = model_.potential_map() * state.values.middleRows(h(), r());
    double amax = 0.0;
    const SystemSpec& spec = model_.spec();
    if (spec.is_rank1()) {
      const Vec ka = spec.k().cwiseProduct(spec.a());
      for (int p = 0; p < u.grid.points(); ++p) amax = std::max(amax, ka.dot(u.point(p)));
    } else {
      const double lmax = model_.parabolic_lhs().diagonal().maxCoeff();
      amax = lmax * u.values.maxCoeff();
    }
    return make_limits(state.grid, max_speed(state.grid, mu), amax, cfg_);
  }

  Field step(const Field& state, double dt) const {
    if (cfg_.scheme == TimeScheme::ExplicitRK2) {
      Field s1 = state;
      s1.values += dt * rate(state, cfg_.spatial, cfg_.dissipation).values;
      Field s2 = s1;
      s2.values += dt * rate(s1, cfg_.spatial, cfg_.dissipation).values;
      Field out = state;
      out.values = 0.5 * (state.values + s2.values);
      out.time = state.time + dt;
      return out;
    }
    const Field s1 = imex_substep(state, dt);
    const Field s2 = imex_substep(s1, dt);
    Field out = state;
    out.values = 0.5 * (state.values + s2.values);
    out.time = state.time + dt;
    return out;
  }

 private:
  Field imex_substep(const Field& state, double dt) const {
    if (cfg_.spatial != DerivativeScheme::Central2) {
      throw Error(ErrorCode::BadDimension, "the implicit scheme uses the central stencil only");
    }
    const Field u = densities(state);
    Field out = state;
    out.values.topRows(h()) += dt * hyperbolic_rate(state, u, cfg_.spatial, cfg_.dissipation);
    const FieldData y_old = state.values.middleRows(h(), r());
    const auto C = half_point_flux(u, flux_fn());
    const FieldData y_new = implicit_parabolic_solve(state.grid, y_old, model_.parabolic_lhs(), C, dt, cfg_);
    out.values.middleRows(h(), r()) = y_new;
    if (tail_ > 0) out.values.bottomRows(tail_) += dt * tail_rate(state, y_new.row(r() - 1), cfg_.spatial);
    return out;
  }

  const NormalFormModel& model_;
  SolverConfig cfg_;
  int tail_;
  double tail_k_;
  mutable std::vector<Vec> warm_;
};

}  // namespace

// --- Public wrappers -------------------------------------------------------------

Field rhs_direct(const Field& u, const SystemSpec& spec, DerivativeScheme scheme) {
  if (u.components() != spec.n) throw Error(ErrorCode::BadDimension, "field does not match spec");
  SolverConfig cfg;
  cfg.spatial = scheme;
  return DirectSystem(spec, cfg).rhs(u, scheme);
}

Field rhs_normal_form(const Field& w, const NormalFormModel& model, DerivativeScheme scheme, double dissipation) {
  if (w.components() != model.n()) throw Error(ErrorCode::BadDimension, "field does not match model");
  SolverConfig cfg;
  cfg.spatial = scheme;
  NormalFormSystem sys(model, cfg);
  return sys.rate(w, scheme, dissipation);
}

Field to_w_field(const Field& u, const NormalFormModel& model) {
  Field w(u.grid, model.n(), model.space(), u.time);
  for (int p = 0; p < u.grid.points(); ++p) w.values.col(p) = model.to_w(u.point(p));
  return w;
}

Field to_u_field(const Field& w, const NormalFormModel& model) {
  SolverConfig cfg;
  return NormalFormSystem(model, cfg).densities(w);
}

Field push_forward(const Field& u, const Field& du, const NormalFormModel& model) {
  Field out(u.grid, model.n(), model.space(), u.time);
  const SystemSpec& spec = model.spec();
  if (spec.is_rank1()) {
    for (int p = 0; p < u.grid.points(); ++p) {
      out.values.col(p) = jacobian_rank1(u.point(p), spec).D * du.point(p);
    }
    return out;
  }
  const auto& general = dynamic_cast<const GeneralModel&>(model);
  const EigenStructure& E = general.eigen();
  const int h = E.kernel_dim();
  for (int p = 0; p < u.grid.points(); ++p) {
    const Vec dlog = du.point(p).cwiseQuotient(u.point(p));
    out.values.col(p).head(h) = E.Q * dlog;
    out.values.col(p).tail(E.rank) = E.P * du.point(p);
  }
  return out;
}

StepLimits step_limits_direct(const Field& u, const SystemSpec& spec, const SolverConfig& cfg) {
  return DirectSystem(spec, cfg).limits(u);
}

Field step_direct(const Field& u, const SystemSpec& spec, const SolverConfig& cfg, double dt) {
  return DirectSystem(spec, cfg).step(u, dt);
}

Field step_normal_form(const Field& w, const NormalFormModel& model, const SolverConfig& cfg, double dt) {
  return NormalFormSystem(model, cfg).step(w, dt);
}

// --- Picard ------------------------------------------------------------------------

namespace {

/// Coefficients of the linear stage frozen at one time level.
struct FrozenLevel {
  std::vector<std::vector<Mat>> T;         // point -> direction
  std::vector<Vec> source;
  std::vector<std::vector<Mat>> C_half;    // axis -> point (central)
  std::vector<Mat> C_point;                // point (spectral)
};

FrozenLevel freeze(const NormalFormModel& model, const Field& v, const SolverConfig& cfg) {
  NormalFormSystem sys(model, cfg);
  const Field u = sys.densities(v);
  const Grid& g = v.grid;
  const int h = model.hyperbolic_dim();
  const int r = model.parabolic_dim();
  FrozenLevel lvl;
  lvl.T.resize(g.points());
  lvl.source.resize(g.points());
  std::vector<FieldData> dwII(g.dim(), FieldData(r, g.points()));
  for (int axis = 0; axis < g.dim(); ++axis) {
    for (int c = 0; c < r; ++c) dwII[axis].row(c) = derivative(g, row_of(v.values, h + c), axis, cfg.spatial).transpose();
  }
  Mat grad_par(r, g.dim());
  for (int p = 0; p < g.points(); ++p) {
    for (int axis = 0; axis < g.dim(); ++axis) grad_par.col(axis) = dwII[axis].col(p);
    model.transport(u.point(p), grad_par, lvl.T[p], lvl.source[p]);
  }
  auto flux = [&model](const Vec& x) { return model.parabolic_flux(x); };
  if (cfg.spatial == DerivativeScheme::Central2) {
    lvl.C_half = half_point_flux(u, flux);
  } else {
    lvl.C_point.resize(g.points());
    for (int p = 0; p < g.points(); ++p) lvl.C_point[p] = flux(u.point(p));
  }
  return lvl;
}

FieldData linear_rate(const NormalFormModel& model, const FrozenLevel& lvl, const Field& w, const SolverConfig& cfg) {
  const Grid& g = w.grid;
  const int h = model.hyperbolic_dim();
  const int r = model.parabolic_dim();
  FieldData out = FieldData::Zero(w.components(), g.points());
  if (h > 0) {
    std::vector<FieldData> dwI(g.dim(), FieldData(h, g.points()));
    for (int axis = 0; axis < g.dim(); ++axis) {
      for (int c = 0; c < h; ++c) dwI[axis].row(c) = derivative(g, row_of(w.values, c), axis, cfg.spatial).transpose();
    }
    for (int p = 0; p < g.points(); ++p) {
      Vec acc = lvl.source[p];
      for (int axis = 0; axis < g.dim(); ++axis) acc += lvl.T[p][axis] * dwI[axis].col(p);
      out.col(p).head(h) = acc;
    }
    if (cfg.dissipation > 0.0) {
      const double scale = cfg.dissipation / g.dx();
      for (int axis = 0; axis < g.dim(); ++axis) {
        for (int c = 0; c < h; ++c) out.row(c) -= scale * fourth_difference(g, row_of(w.values, c), axis).transpose();
      }
    }
  }
  const FieldData y = w.values.middleRows(h, r);
  if (cfg.spatial == DerivativeScheme::Central2) {
    out.middleRows(h, r) = parabolic_divergence(g, y, lvl.C_half);
  } else {
    out.middleRows(h, r) = parabolic_divergence_spectral(g, y, lvl.C_point);
  }
  return out;
}

double trajectory_sup_l2(const std::vector<Field>& a, const std::vector<Field>& b) {
  double sup = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    Field diff = a[k];
    diff.values -= b[k].values;
    sup = std::max(sup, l2_norm(diff));
  }
  return sup;
}

double gradient_increment(const std::vector<Field>& a, const std::vector<Field>& b, int h, int r, double dt,
                          DerivativeScheme scheme) {
  // Trapezoidal rule in time of |grad (a_II - b_II)|^2_{L2}.
  double total = 0.0;
  const std::size_t K = a.size() - 1;
  for (std::size_t k = 0; k <= K; ++k) {
    const Grid& g = a[k].grid;
    double sq = 0.0;
    for (int c = 0; c < r; ++c) {
      const Vec diff = row_of(a[k].values, h + c) - row_of(b[k].values, h + c);
      for (int axis = 0; axis < g.dim(); ++axis) {
        const double norm = l2_norm(g, derivative(g, diff, axis, scheme));
        sq += norm * norm;
      }
    }
    const double weight = (k == 0 || k == K) ? 0.5 : 1.0;
    total += weight * dt * sq;
  }
  return std::sqrt(total);
}

}  // namespace

std::vector<Field> picard_stage(const NormalFormModel& model, const std::vector<Field>& frozen, const Field& z,
                                double dt, const SolverConfig& cfg) {
  if (frozen.empty()) throw Error(ErrorCode::BadDimension, "frozen trajectory is empty");
  const int r = model.parabolic_dim();
  const int h = model.hyperbolic_dim();
  for (const Field& v : frozen) {
    const double vmin = v.values.middleRows(h, r).minCoeff();
    if (model.spec().is_rank1() && !(vmin > 0.0)) {
      throw Error(ErrorCode::DomainExit, "frozen parabolic variable is not positive");
    }
  }
  std::vector<Field> out;
  out.reserve(frozen.size());
  Field w = z;
  w.time = 0.0;
  out.push_back(w);
  FrozenLevel current = freeze(model, frozen[0], cfg);
  for (std::size_t k = 0; k + 1 < frozen.size(); ++k) {
    FrozenLevel next = freeze(model, frozen[k + 1], cfg);
    Field w1 = w;
    w1.values += dt * linear_rate(model, current, w, cfg);
    Field w2 = w1;
    w2.values += dt * linear_rate(model, next, w1, cfg);
    w.values = 0.5 * (w.values + w2.values);
    w.time = static_cast<double>(k + 1) * dt;
    if (!w.values.allFinite()) throw Error(ErrorCode::DomainExit, "linear stage produced non-finite values");
    out.push_back(w);
    current = std::move(next);
  }
  return out;
}

PicardResult run_picard(const SystemSpec& spec, const Field& u0, const SolverConfig& cfg) {
  // Species order and equal-coefficient reduction as in the normal-form solver.
  SystemSpec work = spec;
  Field u_work = u0;
  if (spec.is_rank1()) {
    const RelabelledSpec rel = canonical_relabel(spec);
    Field sorted(u0.grid, spec.n, VariableSpace::U, u0.time);
    for (int p = 0; p < u0.grid.points(); ++p) sorted.values.col(p) = rel.permutation.apply(u0.point(p));
    Aggregation agg = aggregate_equal_k(rel.spec, sorted);
    work = agg.spec;
    u_work = agg.field;
  }
  const auto model = make_model(work);
  const int h = model->hyperbolic_dim();
  const int r = model->parabolic_dim();
  const Grid& g = u0.grid;

  PicardResult res;
  res.sobolev_index = monitoring_sobolev_index(g.dim());
  const Field w_in = to_w_field(u_work, *model);
  res.R = sobolev_norm(w_in, res.sobolev_index);

  auto z = [&](int level) {
    Field f = mollify(w_in, level);
    f.space = model->space();
    return f;
  };
  const Field z0 = z(0);

  // K = 2 sqrt(Lambda1 / lambda1) from the spectrum of A0 over the mollified data.
  res.lambda_min = 1.0;
  res.lambda_max = 1.0;
  const Field u_z0 = to_u_field(z0, *model);
  if (h > 0) {
    const Mat grad = Mat::Zero(r, g.dim());
    for (int p = 0; p < g.points(); ++p) {
      const Mat A0 = model->coeffs(u_z0.point(p), grad).A0;
      const Vec ev = Eigen::SelfAdjointEigenSolver<Mat>(A0, Eigen::EigenvaluesOnly).eigenvalues();
      res.lambda_min = std::min(res.lambda_min, ev.minCoeff());
      res.lambda_max = std::max(res.lambda_max, ev.maxCoeff());
    }
  }
  res.K = cfg.picard.K.value_or(2.0 * std::sqrt(res.lambda_max / res.lambda_min));

  // Stage step: explicit limit with the maximum-principle bound on the parabolic coefficient.
  double dt = 0.0;
  if (cfg.dt) {
    dt = *cfg.dt;
  } else {
    const FieldData mu = model->potential_map() * z0.values.middleRows(h, r);
    double amax = 0.0;
    if (work.is_rank1()) {
      amax = work.k().maxCoeff() * w_in.values.row(work.n - 1).maxCoeff();
    } else {
      amax = 2.0 * model->parabolic_lhs().diagonal().maxCoeff() * u_z0.values.maxCoeff();
    }
    SolverConfig explicit_cfg = cfg;
    explicit_cfg.scheme = TimeScheme::ExplicitRK2;
    dt = make_limits(g, max_speed(g, mu), amax, explicit_cfg).dt;
    if (!std::isfinite(dt)) dt = cfg.t_end;
  }
  res.dt = dt;
  double T_star = cfg.picard.stage_horizon.value_or(50.0 * dt);
  const double bound = res.K * res.R;

  while (true) {
    if (T_star < dt) {
      throw Error(ErrorCode::NoContraction, "stage horizon shrank below the time step without contraction");
    }
    const int levels = std::max(1, static_cast<int>(std::lround(T_star / dt)));
    const double stage_dt = T_star / levels;
    std::vector<Field> prev(levels + 1, z0);
    for (int k = 0; k <= levels; ++k) prev[k].time = k * stage_dt;
    res.trace.clear();
    bool restart = false;
    std::string reason;
    for (int level = 1; level <= cfg.picard.max_iters; ++level) {
      std::vector<Field> next;
      try {
        next = picard_stage(*model, prev, z(level), stage_dt, cfg);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DomainExit) throw;
        restart = true;
        reason = std::string("domain exit at level ") + std::to_string(level);
        break;
      }
      PicardRecord rec;
      rec.level = level;
      rec.sup_l2 = trajectory_sup_l2(next, prev);
      rec.grad_increment = gradient_increment(next, prev, h, r, stage_dt, cfg.spatial);
      rec.N = rec.sup_l2 + rec.grad_increment;
      rec.min_wn = kInf;
      for (const Field& f : next) {
        rec.max_hs = std::max(rec.max_hs, sobolev_norm(f, res.sobolev_index));
        rec.min_wn = std::min(rec.min_wn, f.values.middleRows(h, r).minCoeff());
      }
      rec.ratio = res.trace.empty() ? kNaN : rec.N / res.trace.back().N;
      res.trace.push_back(rec);
      prev = std::move(next);
      if (!(rec.max_hs < bound)) {
        restart = true;
        reason = "H^s bound exceeded at level " + std::to_string(level);
        break;
      }
      if (level >= 2 && rec.N > res.trace[res.trace.size() - 2].N) {
        restart = true;
        reason = "increment grew at level " + std::to_string(level);
        break;
      }
      if (rec.N <= cfg.picard.contraction_tol) {
        res.converged = true;
        break;
      }
    }
    if (!restart) {
      res.T_star = T_star;
      res.trajectory = std::move(prev);
      return res;
    }
    std::ostringstream msg;
    msg << reason << " with T* = " << T_star << "; halving";
    res.monitor_events.push_back(msg.str());
    ++res.halvings;
    T_star *= 0.5;
  }
}

// --- Full runs -----------------------------------------------------------------------

std::vector<double> sample_times(double t_end, double interval) {
  std::vector<double> times{0.0};
  if (interval > 0.0) {
    const int count = static_cast<int>(std::floor(t_end / interval + 1e-9));
    for (int j = 1; j <= count; ++j) {
      const double t = j * interval;
      if (t < t_end * (1.0 - 1e-12)) times.push_back(t);
    }
  }
  if (t_end > 0.0) times.push_back(t_end);
  return times;
}

namespace {

Field permute_field(const Field& u, const Permutation& perm, bool restore) {
  Field out = u;
  for (int p = 0; p < u.grid.points(); ++p) {
    out.values.col(p) = restore ? perm.restore(u.point(p)) : perm.apply(u.point(p));
  }
  return out;
}

SeriesRow make_row(const Field& u, const SystemSpec& spec, int s, double hs_w) {
  SeriesRow row;
  row.t = u.time;
  for (int e = 0; e < kEntropyCount; ++e) row.entropy[e] = total_energy(u, kAllEntropyKinds[e], spec);
  row.mass.resize(u.components());
  for (int c = 0; c < u.components(); ++c) row.mass[c] = grid_sum(u.component(c)) * u.grid.cell_volume();
  row.min_u = u.values.minCoeff();
  row.hs_u = sobolev_norm(u, s);
  row.hs_w = hs_w;
  return row;
}

void finish_mode(ModeResult& m) {
  m.max_mass_drift = 0.0;
  for (const SeriesRow& row : m.series) {
    m.max_mass_drift = std::max(m.max_mass_drift, (row.mass - m.series.front().mass).cwiseAbs().maxCoeff());
  }
}

double next_step(double t, double target, double dt) {
  if (t + dt >= target - 1e-12 * std::max(1.0, std::abs(target))) return target - t;
  return dt;
}

void check_positive(const Field& u, const SolverConfig& cfg, double t) {
  const double m = u.values.minCoeff();
  if (!(m >= cfg.positivity_floor)) {
    std::ostringstream msg;
    msg << "min u = " << m << " below the floor " << cfg.positivity_floor << " at t = " << t;
    throw Error(ErrorCode::PositivityLost, msg.str());
  }
}

double checked_dt(const StepLimits& limits, const SolverConfig& cfg, double t) {
  double dt = cfg.dt ? *cfg.dt : limits.dt;
  if (!std::isfinite(dt)) dt = cfg.t_end;
  if (!(dt >= cfg.min_dt)) {
    std::ostringstream msg;
    msg << "time step " << dt << " collapsed at t = " << t;
    throw Error(ErrorCode::StepRejected, msg.str());
  }
  return dt;
}

ModeResult integrate_direct(const SystemSpec& spec, const Field& u0, const Permutation& perm,
                            const SystemSpec& original, const SolverConfig& cfg, const std::vector<double>& times) {
  DirectSystem sys(spec, cfg);
  const int s = monitoring_sobolev_index(u0.grid.dim());
  ModeResult m;
  m.mode = "direct";
  m.wn_initial_min = m.wn_initial_max = m.wn_min_all = m.wn_max_all = kNaN;
  Field u = u0;
  u.time = 0.0;
  m.min_u_all = u.values.minCoeff();
  auto record = [&](const Field& state) {
    Field orig = permute_field(state, perm, true);
    m.series.push_back(make_row(orig, original, s, kNaN));
    m.snapshots.push_back(std::move(orig));
  };
  record(u);
  double t = 0.0;
  for (std::size_t idx = 1; idx < times.size(); ++idx) {
    while (t < times[idx]) {
      const double dt = next_step(t, times[idx], checked_dt(sys.limits(u), cfg, t));
      u = sys.step(u, dt);
      t = (t + dt >= times[idx]) ? times[idx] : t + dt;
      if (std::abs(t - times[idx]) <= 1e-12 * std::max(1.0, times[idx])) t = times[idx];
      u.time = t;
      ++m.steps;
      check_positive(u, cfg, t);
      m.min_u_all = std::min(m.min_u_all, u.values.minCoeff());
    }
    record(u);
  }
  finish_mode(m);
  return m;
}

ModeResult integrate_normal_form(const SystemSpec& sorted, const Field& u0, const Permutation& perm,
                                 const SystemSpec& original, const SolverConfig& cfg,
                                 const std::vector<double>& times) {
  AggregationPlan plan;
  SystemSpec reduced = sorted;
  if (sorted.is_rank1()) {
    plan = aggregation_plan(sorted);
    reduced = reduced_spec(sorted, plan);
  } else {
    plan.original_n = sorted.n;
    plan.first_tail = sorted.n - 1;
  }
  const auto model = make_model(reduced);
  const int n = model->n();
  const int tail = plan.advected();
  NormalFormSystem sys(*model, cfg, tail, plan.tail_k);
  const int s = monitoring_sobolev_index(u0.grid.dim());
  const bool rank1 = reduced.is_rank1();

  Field state(u0.grid, n + tail, model->space(), 0.0);
  for (int p = 0; p < u0.grid.points(); ++p) {
    const Vec up = u0.point(p);
    state.values.col(p).head(n) = model->to_w(aggregate_point(up, plan));
    if (tail > 0) state.values.col(p).tail(tail) = up.tail(tail);
  }

  auto full_u = [&](const Field& st, const Field& reduced_u) {
    Field u(st.grid, sorted.n, VariableSpace::U, st.time);
    for (int p = 0; p < st.grid.points(); ++p) {
      const Vec adv = tail > 0 ? Vec(st.values.col(p).tail(tail)) : Vec(0);
      u.values.col(p) = reconstruct_point(reduced_u.point(p), adv, plan);
    }
    return u;
  };
  auto w_only = [&](const Field& st) {
    Field w(st.grid, n, model->space(), st.time);
    w.values = st.values.topRows(n);
    return w;
  };

  ModeResult m;
  m.mode = "normal_form";
  Field u_red = sys.densities(state);
  Field u = full_u(state, u_red);
  check_positive(u, cfg, 0.0);
  m.min_u_all = u.values.minCoeff();
  if (rank1) {
    m.wn_initial_min = m.wn_min_all = state.values.row(n - 1).minCoeff();
    m.wn_initial_max = m.wn_max_all = state.values.row(n - 1).maxCoeff();
  } else {
    m.wn_initial_min = m.wn_initial_max = m.wn_min_all = m.wn_max_all = kNaN;
  }
  auto record = [&](const Field& st, const Field& uu) {
    Field orig = permute_field(uu, perm, true);
    m.series.push_back(make_row(orig, original, s, sobolev_norm(w_only(st), s)));
    m.snapshots.push_back(std::move(orig));
  };
  record(state, u);
  double t = 0.0;
  for (std::size_t idx = 1; idx < times.size(); ++idx) {
    while (t < times[idx]) {
      const double dt = next_step(t, times[idx], checked_dt(sys.limits(state, u_red), cfg, t));
      state = sys.step(state, dt);
      t = (t + dt >= times[idx]) ? times[idx] : t + dt;
      if (std::abs(t - times[idx]) <= 1e-12 * std::max(1.0, times[idx])) t = times[idx];
      state.time = t;
      ++m.steps;
      u_red = sys.densities(state);
      u = full_u(state, u_red);
      check_positive(u, cfg, t);
      m.min_u_all = std::min(m.min_u_all, u.values.minCoeff());
      if (rank1) {
        m.wn_min_all = std::min(m.wn_min_all, state.values.row(n - 1).minCoeff());
        m.wn_max_all = std::max(m.wn_max_all, state.values.row(n - 1).maxCoeff());
      }
    }
    record(state, u);
  }
  finish_mode(m);
  return m;
}

}  // namespace

RunReport run(const SystemSpec& spec, const Field& u0, const SolverConfig& cfg, RunMode mode) {
  if (u0.components() != spec.n) throw Error(ErrorCode::BadDimension, "initial field does not match species count");
  if (u0.grid.dim() != spec.d) throw Error(ErrorCode::BadDimension, "initial field does not match dimension");
  if (!(cfg.t_end > 0.0)) throw Error(ErrorCode::BadDimension, "t_end must be positive");
  if (cfg.dt && !(*cfg.dt > 0.0)) throw Error(ErrorCode::BadDimension, "dt must be positive");
  {
    const double m = u0.values.minCoeff();
    if (!(m >= cfg.positivity_floor)) {
      std::ostringstream msg;
      msg << "initial data has min u = " << m << " (floor " << cfg.positivity_floor << ") at t = 0";
      throw Error(ErrorCode::PositivityLost, msg.str());
    }
  }

  RunReport report;
  report.spec = spec;
  report.config = cfg;
  report.mode = mode;
  report.sample_times = sample_times(cfg.t_end, cfg.snapshot_interval);

  SystemSpec sorted = spec;
  Permutation perm;
  perm.order.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) perm.order[i] = i;
  if (spec.is_rank1()) {
    const RelabelledSpec rel = canonical_relabel(spec);
    sorted = rel.spec;
    perm = rel.permutation;
  }
  const Field u_sorted = permute_field(u0, perm, false);

  if (mode == RunMode::Direct || mode == RunMode::Both) {
    report.direct = integrate_direct(sorted, u_sorted, perm, spec, cfg, report.sample_times);
  }
  if (mode == RunMode::NormalForm || mode == RunMode::Both) {
    report.normal_form = integrate_normal_form(sorted, u_sorted, perm, spec, cfg, report.sample_times);
  }
  if (report.direct && report.normal_form) {
    for (std::size_t j = 0; j < report.sample_times.size(); ++j) {
      report.cross_distance.push_back(
          (report.direct->snapshots[j].values - report.normal_form->snapshots[j].values).cwiseAbs().maxCoeff());
    }
  }
  if (cfg.picard.enabled) report.picard = run_picard(spec, u0, cfg);
  return report;
}

}  // namespace crossdiff
