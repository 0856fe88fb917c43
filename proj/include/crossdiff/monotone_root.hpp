#pragma once

#include <cmath>
#include <utility>

#include "crossdiff/error.hpp"

namespace crossdiff {

struct MonotoneRootOptions {
  double abs_tol = 0.0;          // stop when |f(t)| <= abs_tol
  double x_tol = 1e-15;          // or when the bracket is this narrow (relative)
  int max_newton = 50;           // Newton steps before falling back to bisection
  int max_bisection = 200;
  int max_expansions = 200;
};

struct MonotoneRootResult {
  double t = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// Root of a strictly increasing smooth function given as f(t) -> {value, slope}.
///
/// A bracket is grown geometrically around the initial guess, then Newton steps
/// are taken, each one replaced by bisection when it would leave the bracket.
/// After `max_newton` steps the remaining work is pure bisection.
template <typename F>
MonotoneRootResult monotone_root(F&& f, double t0, const MonotoneRootOptions& opt = {}) {
  auto [f0, df0] = f(t0);
  if (std::isnan(f0)) throw Error(ErrorCode::RootBracketFailure, "undefined value at initial guess");
  if (f0 == 0.0 || std::abs(f0) <= opt.abs_tol) return {t0, f0, 0};

  double lo = t0, hi = t0, flo = f0, fhi = f0;
  double step = 1.0;
  int expansions = 0;
  if (f0 < 0.0) {
    while (fhi < 0.0) {
      lo = hi;
      flo = fhi;
      hi += step;
      step *= 2.0;
      fhi = f(hi).first;
      if (++expansions > opt.max_expansions || std::isnan(fhi)) {
        throw Error(ErrorCode::RootBracketFailure, "could not bracket root from below");
      }
    }
  } else {
    while (flo > 0.0) {
      hi = lo;
      fhi = flo;
      lo -= step;
      step *= 2.0;
      flo = f(lo).first;
      if (++expansions > opt.max_expansions || std::isnan(flo)) {
        throw Error(ErrorCode::RootBracketFailure, "could not bracket root from above");
      }
    }
  }

  double t = f0 < 0.0 ? lo : hi;
  double ft = f0 < 0.0 ? flo : fhi;
  double dft = f(t).second;
  int iterations = 0;
  const int max_total = opt.max_newton + opt.max_bisection;
  while (iterations < max_total) {
    ++iterations;
    double next;
    const bool newton_ok = iterations <= opt.max_newton && dft > 0.0 && std::isfinite(dft);
    if (newton_ok) {
      next = t - ft / dft;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    } else {
      next = 0.5 * (lo + hi);
    }
    auto [fn, dfn] = f(next);
    if (std::isnan(fn)) throw Error(ErrorCode::RootBracketFailure, "undefined value inside bracket");
    if (fn < 0.0) {
      lo = next;
    } else {
      hi = next;
    }
    const double moved = std::abs(next - t);
    t = next;
    ft = fn;
    dft = dfn;
    if (fn == 0.0 || std::abs(fn) <= opt.abs_tol) break;
    const double scale = std::max(1.0, std::abs(t));
    if (hi - lo <= opt.x_tol * scale || moved <= 0.25 * opt.x_tol * scale) break;
  }
  return {t, ft, iterations};
}

}  // namespace crossdiff
