#pragma once

#include "crossdiff/model.hpp"
#include "crossdiff/types.hpp"

namespace crossdiff {

/// Orthonormal eigenbasis of a symmetric PSD matrix split into kernel and range blocks.
///
/// Rows of `basis` are the eigenvectors; the first n - rank rows span the kernel
/// (they form Q), the remaining rows span the range (they form P). Within a cluster
/// of repeated eigenvalues the basis is only defined up to rotation; everything
/// downstream depends on the spans alone.
struct EigenStructure {
  Vec lambda;
  Mat basis;
  Mat Q;
  Mat P;
  int rank = 0;

  int n() const { return static_cast<int>(lambda.size()); }
  int kernel_dim() const { return n() - rank; }
  /// Positive eigenvalues, in the order of the rows of P.
  Vec range_eigenvalues() const { return lambda.tail(rank); }
};

/// Eigenvalues below tol * max(lambda) are snapped to exactly zero.
EigenStructure eigenstructure(const Mat& B, double tol = kRankTol);

EigenStructure eigenstructure(const SystemSpec& spec);

/// Max-norm deviations of the orthogonality relations between the blocks.
struct BlockIdentityReport {
  double qqt_identity = 0.0;    // |QQ^T - I|
  double ppt_identity = 0.0;    // |PP^T - I|
  double completeness = 0.0;    // |Q^T Q + P^T P - I|
  double pqt_zero = 0.0;        // |PQ^T|
  double qpt_zero = 0.0;        // |QP^T|

  double max_deviation() const;
};

BlockIdentityReport verify_block_identities(const EigenStructure& E);

/// Deviations of B Q^T = 0, B P^T = P^T diag(lambda_II) and B = O^T diag(lambda) O.
struct EigenRelationReport {
  double kernel = 0.0;
  double range = 0.0;
  double reconstruction = 0.0;
};

EigenRelationReport verify_eigen_relations(const Mat& B, const EigenStructure& E);

}  // namespace crossdiff
