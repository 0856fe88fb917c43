#pragma once

#include <optional>

#include "crossdiff/grid.hpp"
#include "crossdiff/model.hpp"
#include "crossdiff/spectral_structure.hpp"
#include "crossdiff/types.hpp"

namespace crossdiff {

enum class TransformVariant { Rank1Explicit, GeneralEigen, SimplexAlt };

/// Normal-form variables at one point: hyperbolic block w_I and parabolic block w_II.
struct PointW {
  Vec hyp;
  Vec par;
  TransformVariant variant = TransformVariant::Rank1Explicit;

  Vec stacked() const;
  static PointW split(const Vec& w, int hyperbolic_dim, TransformVariant variant);
};

// ---------------------------------------------------------------------------
// Rank-one transform. With v = a∘u (so p(u) = sum v_j):
//   w_i = log(v_i^{1/k_i} / v_n^{1/k_n}),  i < n,      w_n = sum_j v_j.
// For a = 1 this is exactly the transform of the unscaled system. Requires
// the species sorted so that k_n is the largest coefficient.

PointW phi_rank1(const Vec& u, const SystemSpec& spec);

/// Inverse transform: solves s + sum_j exp(k_j w_j) s^{k_j/k_n} = w_n for s = v_n.
Vec psi_rank1(const PointW& w, const SystemSpec& spec);

struct Rank1Jacobian {
  Mat D;          // dw/du
  double det = 0; // closed form sum_l a_l prod_{i != l} 1/(k_i u_i)
};

Rank1Jacobian jacobian_rank1(const Vec& u, const SystemSpec& spec);

// ---------------------------------------------------------------------------
// General transform: w_I = Q log u, w_II = P u.

PointW phi_general(const Vec& u, const EigenStructure& E);

struct GeneralInverseOptions {
  double grad_tol = 1e-12;     // relative to 1 + |w_II|
  int max_iterations = 200;
  double divergence_factor = 1e3;
};

struct GeneralInverse {
  Vec u;
  Vec X;              // minimiser of G(X; w); equals P log u
  int iterations = 0;
  double residual = 0; // |P u - w_II|
};

/// Minimises the strictly convex G(X; w) = sum_i exp((Q^T w_I + P^T X)_i) - w_II . X
/// by damped Newton. Divergence of X certifies that w_II lies outside P R_+^n.
GeneralInverse invert_general(const PointW& w, const EigenStructure& E,
                              const std::optional<Vec>& warm_start = std::nullopt,
                              const GeneralInverseOptions& opt = {});

Vec psi_general(const PointW& w, const EigenStructure& E);

/// Implicit-function derivatives of the general inverse at u = psi_general(w).
struct GeneralSensitivity {
  Mat dXF;           // P D(u) P^T
  Mat dXF_inverse;   // closed form via the complementary blocks
  Mat dX_dwI;        // r x (n-r), column m is d X / d w_m for m in I
  Mat dX_dwII;       // r x r
  Mat dlogu_dwI;     // n x (n-r)
  Mat dlogu_dwII;    // n x r
};

GeneralSensitivity dpsi_general(const Vec& u, const EigenStructure& E);

// ---------------------------------------------------------------------------
// Alternative transform for a = k: w_i = u_i^{1/k_i} / L(u) (i < n),
// L(u) = sum_j u_j^{1/k_j}, w_n = sum_j k_j u_j. w_I lives in the open simplex.

PointW phi_alt(const Vec& u, const SystemSpec& spec);
Vec psi_alt(const PointW& w, const SystemSpec& spec);

// ---------------------------------------------------------------------------
// Equal-coefficient reduction. For a spec sorted by k whose trailing species
// m..n-1 (0-based) share k_n, those species are merged into
// ũ_m = sum_{i >= m} a_i u_i, with reduced coefficients k_m' = k_n, a_m' = 1.
// The merged species are recovered afterwards by advecting u_{m+1..n-1} with the
// velocity field of the reduced solution.

struct AggregationPlan {
  int original_n = 0;
  int first_tail = 0;   // m; equals original_n - 1 when nothing is merged
  Vec tail_a;           // a_m, ..., a_{n-1}
  double tail_k = 0.0;

  bool trivial() const { return first_tail == original_n - 1; }
  int reduced_n() const { return first_tail + 1; }
  /// Number of species that must be advected alongside the reduced problem.
  int advected() const { return original_n - 1 - first_tail; }
};

AggregationPlan aggregation_plan(const SystemSpec& sorted_spec);

SystemSpec reduced_spec(const SystemSpec& sorted_spec, const AggregationPlan& plan);

/// Merged densities of one point.
Vec aggregate_point(const Vec& u, const AggregationPlan& plan);

/// Inverse of the merge given the reduced state and the advected tail u_{m+1..n-1}.
Vec reconstruct_point(const Vec& reduced_u, const Vec& advected_tail, const AggregationPlan& plan);

struct Aggregation {
  SystemSpec spec;
  Field field;
  AggregationPlan plan;
};

Aggregation aggregate_equal_k(const SystemSpec& sorted_spec, const Field& u);

}  // namespace crossdiff
