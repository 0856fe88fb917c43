#include "crossdiff/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "crossdiff/error.hpp"

namespace crossdiff {

namespace {

Vec to_vec(const std::vector<double>& values) {
  return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void require_positive(const Vec& v, std::string_view name) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0) || !std::isfinite(v[i])) {
      std::ostringstream msg;
      msg << name << "[" << i << "] = " << v[i] << " must be positive";
      throw Error(ErrorCode::NonPositiveCoefficient, msg.str());
    }
  }
}

Mat to_matrix(const std::vector<std::vector<double>>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Mat B(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != n) {
      throw Error(ErrorCode::BadDimension, "B must be square");
    }
    for (Eigen::Index j = 0; j < n; ++j) B(i, j) = rows[i][j];
  }
  return B;
}

}  // namespace

Mat SystemSpec::interaction_matrix() const {
  if (is_rank1()) return k() * a().transpose();
  return B();
}

SystemSpec build_system_spec(const RawSpec& raw) {
  SystemSpec spec;
  if (raw.d != 1 && raw.d != 2) {
    throw Error(ErrorCode::BadDimension, "spatial dimension must be 1 or 2");
  }
  spec.d = raw.d;
  spec.domain_length = raw.domain_length.value_or(2.0 * std::numbers::pi);
  if (!(spec.domain_length > 0.0)) {
    throw Error(ErrorCode::BadDimension, "domain_length must be positive");
  }

  const bool has_rank1 = raw.k.has_value() || raw.a.has_value();
  if (has_rank1 == raw.B.has_value()) {
    throw Error(ErrorCode::BadDimension, "supply either (k, a) or B");
  }

  if (has_rank1) {
    if (!raw.k || !raw.a) throw Error(ErrorCode::BadDimension, "rank-one spec needs both k and a");
    if (raw.k->size() != raw.a->size() || raw.k->empty()) {
      throw Error(ErrorCode::BadDimension, "k and a must be non-empty and of equal length");
    }
    Rank1Coefficients coeffs{to_vec(*raw.k), to_vec(*raw.a)};
    require_positive(coeffs.k, "k");
    require_positive(coeffs.a, "a");
    spec.n = static_cast<int>(coeffs.k.size());
    spec.rank = 1;
    spec.kind = std::move(coeffs);
  } else {
    Mat B = to_matrix(*raw.B);
    if (B.rows() == 0) throw Error(ErrorCode::BadDimension, "B must be non-empty");
    if (!B.allFinite()) throw Error(ErrorCode::BadDimension, "B has non-finite entries");
    const double scale = B.cwiseAbs().maxCoeff();
    const double asym = (B - B.transpose()).cwiseAbs().maxCoeff();
    if (asym > kSymmetryTol * scale) {
      std::ostringstream msg;
      msg << "max |B_ij - B_ji| = " << asym;
      throw Error(ErrorCode::NonSymmetric, msg.str());
    }
    Mat sym = 0.5 * (B + B.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> solver(sym, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw Error(ErrorCode::EigenFailure, "eigenvalues of B");
    const Vec& lambda = solver.eigenvalues();
    const double lmax = lambda.maxCoeff();
    if (!(lmax > 0.0)) throw Error(ErrorCode::BadDimension, "B has rank 0");
    if (lambda.minCoeff() < -kPsdTol * lmax) {
      std::ostringstream msg;
      msg << "min eigenvalue " << lambda.minCoeff();
      throw Error(ErrorCode::NotPositiveSemidefinite, msg.str());
    }
    spec.n = static_cast<int>(B.rows());
    spec.rank = static_cast<int>((lambda.array() > kRankTol * lmax).count());
    spec.kind = GeneralMatrix{std::move(sym)};
  }

  if (raw.n && *raw.n != spec.n) {
    throw Error(ErrorCode::BadDimension, "declared n does not match coefficient sizes");
  }
  if (spec.n > kMaxSpecies) throw Error(ErrorCode::BadDimension, "at most 16 species");
  return spec;
}

bool Permutation::is_identity() const {
  for (std::size_t j = 0; j < order.size(); ++j) {
    if (order[j] != static_cast<int>(j)) return false;
  }
  return true;
}

Permutation Permutation::inverse() const {
  Permutation inv;
  inv.order.resize(order.size());
  for (std::size_t j = 0; j < order.size(); ++j) inv.order[order[j]] = static_cast<int>(j);
  return inv;
}

Vec Permutation::apply(const Vec& v) const {
  Vec out(v.size());
  for (std::size_t j = 0; j < order.size(); ++j) out[j] = v[order[j]];
  return out;
}

Vec Permutation::restore(const Vec& v) const {
  Vec out(v.size());
  for (std::size_t j = 0; j < order.size(); ++j) out[order[j]] = v[j];
  return out;
}

SystemSpec permute_spec(const SystemSpec& spec, const Permutation& perm) {
  SystemSpec out = spec;
  if (spec.is_rank1()) {
    out.kind = Rank1Coefficients{perm.apply(spec.k()), perm.apply(spec.a())};
  } else {
    const Mat& B = spec.B();
    Mat P(spec.n, spec.n);
    for (int i = 0; i < spec.n; ++i)
      for (int j = 0; j < spec.n; ++j) P(i, j) = B(perm.order[i], perm.order[j]);
    out.kind = GeneralMatrix{std::move(P)};
  }
  return out;
}

RelabelledSpec canonical_relabel(const SystemSpec& spec) {
  Permutation perm;
  perm.order.resize(spec.n);
  std::iota(perm.order.begin(), perm.order.end(), 0);
  if (spec.is_rank1()) {
    const Vec& k = spec.k();
    std::stable_sort(perm.order.begin(), perm.order.end(),
                     [&](int lhs, int rhs) { return k[lhs] < k[rhs]; });
  }
  return {permute_spec(spec, perm), perm};
}

std::string_view to_string(EntropyKind kind) {
  switch (kind) {
    case EntropyKind::ShannonF1: return "f1";
    case EntropyKind::QuadraticF2: return "f2";
    case EntropyKind::PLogPF3: return "f3";
    case EntropyKind::BoltzmannShannon: return "hBS";
    case EntropyKind::Rao: return "hR";
  }
  return "?";
}

Vec shannon_weights(const SystemSpec& spec) {
  return spec.a().cwiseQuotient(spec.k());
}

}  // namespace crossdiff
