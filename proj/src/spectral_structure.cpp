#include "crossdiff/spectral_structure.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crossdiff/error.hpp"

namespace crossdiff {

namespace {

double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

void fix_sign(Eigen::Ref<Vec> v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v[arg] < 0.0) v = -v;
}

}  // namespace

EigenStructure eigenstructure(const Mat& B, double tol) {
  const auto n = B.rows();
  Eigen::SelfAdjointEigenSolver<Mat> solver(B);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::EigenFailure, "symmetric eigensolver did not converge");
  }
  Vec lambda = solver.eigenvalues();
  Mat vectors = solver.eigenvectors();  // columns
  for (Eigen::Index k = 0; k < n; ++k) fix_sign(vectors.col(k));

  const double lmax = std::max(lambda.maxCoeff(), 0.0);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (lambda[k] < tol * lmax) lambda[k] = 0.0;
  }

  // Eigen returns ascending values. Inside clusters of (numerically) equal values
  // order lexicographically by eigenvector entries so the basis is reproducible.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double cluster_tol = 1e-12 * std::max(lmax, 1.0);
  Eigen::Index start = 0;
  while (start < n) {
    Eigen::Index stop = start + 1;
    while (stop < n && lambda[stop] - lambda[stop - 1] <= cluster_tol) ++stop;
    std::stable_sort(order.begin() + start, order.begin() + stop, [&](int lhs, int rhs) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double a = vectors(i, lhs);
        const double b = vectors(i, rhs);
        if (std::abs(a - b) > 1e-12) return a > b;
      }
      return false;
    });
    start = stop;
  }

  EigenStructure E;
  E.lambda.resize(n);
  E.basis.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    E.lambda[k] = lambda[order[k]];
    E.basis.row(k) = vectors.col(order[k]).transpose();
  }
  E.rank = static_cast<int>((E.lambda.array() > 0.0).count());
  const auto h = n - E.rank;
  E.Q = E.basis.topRows(h);
  E.P = E.basis.bottomRows(E.rank);
  return E;
}

EigenStructure eigenstructure(const SystemSpec& spec) {
  if (spec.is_rank1()) {
    throw Error(ErrorCode::BadDimension, "eigenstructure needs a symmetric matrix spec");
  }
  return eigenstructure(spec.B());
}

double BlockIdentityReport::max_deviation() const {
  return std::max({qqt_identity, ppt_identity, completeness, pqt_zero, qpt_zero});
}

BlockIdentityReport verify_block_identities(const EigenStructure& E) {
  const int n = E.n();
  const int h = E.kernel_dim();
  const int r = E.rank;
  BlockIdentityReport rep;
  rep.qqt_identity = max_abs(E.Q * E.Q.transpose() - Mat::Identity(h, h));
  rep.ppt_identity = max_abs(E.P * E.P.transpose() - Mat::Identity(r, r));
  rep.completeness =
      max_abs(E.Q.transpose() * E.Q + E.P.transpose() * E.P - Mat::Identity(n, n));
  rep.pqt_zero = max_abs(E.P * E.Q.transpose());
  rep.qpt_zero = max_abs(E.Q * E.P.transpose());
  return rep;
}

EigenRelationReport verify_eigen_relations(const Mat& B, const EigenStructure& E) {
  EigenRelationReport rep;
  rep.kernel = max_abs(B * E.Q.transpose());
  rep.range = max_abs(B * E.P.transpose() - E.P.transpose() * E.range_eigenvalues().asDiagonal());
  rep.reconstruction = max_abs(B - E.basis.transpose() * E.lambda.asDiagonal() * E.basis);
  return rep;
}

}  // namespace crossdiff
