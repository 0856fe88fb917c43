#pragma once

// Independent reference computations used by the tests. Nothing here calls the
// library routine it is meant to check.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "crossdiff/grid.hpp"
#include "crossdiff/types.hpp"

namespace oracle {

using crossdiff::Mat;
using crossdiff::Vec;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Positive vector with log-uniform entries in [lo, hi].
inline Vec positive(std::mt19937_64& rng, int n, double lo = 0.05, double hi = 20.0) {
  Vec u(n);
  for (int i = 0; i < n; ++i) u[i] = std::exp(uniform(rng, std::log(lo), std::log(hi)));
  return u;
}

inline Vec gaussian(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> N(0.0, 1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = N(rng);
  return v;
}

/// Random symmetric PSD matrix of exact rank r, as a Gram matrix G G^T.
inline Mat psd(std::mt19937_64& rng, int n, int r) {
  std::normal_distribution<double> N(0.0, 1.0);
  Mat G(n, r);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j) G(i, j) = N(rng);
  Mat B = G * G.transpose();
  return 0.5 * (B + B.transpose());
}

/// Eigenvalues of a symmetric 2x2 matrix from the characteristic polynomial.
inline std::pair<double, double> eig2x2(double a, double b, double d) {
  const double mean = 0.5 * (a + d);
  const double rad = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
  return {mean - rad, mean + rad};
}

/// Central-difference Jacobian of f at x.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h) {
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

/// Determinant by cofactor expansion along the first row (small matrices only).
inline double cofactor_det(const Mat& A) {
  const Eigen::Index n = A.rows();
  if (n == 1) return A(0, 0);
  if (n == 2) return A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
  double det = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    Mat minor(n - 1, n - 1);
    for (Eigen::Index r = 1; r < n; ++r) {
      Eigen::Index cc = 0;
      for (Eigen::Index c = 0; c < n; ++c) {
        if (c == j) continue;
        minor(r - 1, cc++) = A(r, c);
      }
    }
    det += ((j % 2 == 0) ? 1.0 : -1.0) * A(0, j) * cofactor_det(minor);
  }
  return det;
}

/// Smooth positive periodic field: base + sum of a few random low modes per component.
inline crossdiff::Field smooth_field(const crossdiff::Grid& g, int n, std::mt19937_64& rng, double base = 1.0,
                                     double amp = 0.25, int modes = 3) {
  crossdiff::Field f(g, n);
  const double wave = 2.0 * std::numbers::pi / g.length();
  for (int c = 0; c < n; ++c) {
    struct Mode {
      int kx, ky;
      double a, phase;
    };
    std::vector<Mode> list;
    for (int m = 0; m < modes; ++m) {
      Mode md;
      md.kx = static_cast<int>(uniform(rng, 0.0, 3.0));
      md.ky = g.dim() == 2 ? static_cast<int>(uniform(rng, 0.0, 3.0)) : 0;
      if (md.kx == 0 && md.ky == 0) md.kx = 1;
      md.a = amp / modes * uniform(rng, 0.3, 1.0);
      md.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      list.push_back(md);
    }
    const double scale = base * uniform(rng, 0.7, 1.3);
    for (int p = 0; p < g.points(); ++p) {
      const double x = g.coordinate(p, 0);
      const double y = g.dim() == 2 ? g.coordinate(p, 1) : 0.0;
      double v = 1.0;
      for (const auto& md : list) v += md.a * std::cos(wave * (md.kx * x + md.ky * y) + md.phase);
      f.values(c, p) = scale * v;
    }
  }
  return f;
}

/// Rate of w_I = Q log u evaluated in u-variables at one point, from the pointwise
/// identity (1/u_i) div(u_i grad mu_i) = lap mu_i + grad log u_i . grad mu_i and
/// Q lap mu = Q B lap u = 0. grad_u is n x d.
inline Vec kernel_rate_from_u(const Mat& Q, const Mat& B, const Vec& u, const Mat& grad_u) {
  const Mat grad_mu = B * grad_u;
  Vec t = Vec::Zero(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) t[i] = grad_u.row(i).dot(grad_mu.row(i)) / u[i];
  return Q * t;
}

}  // namespace oracle
