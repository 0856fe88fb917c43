#pragma once

#include <vector>

#include "crossdiff/grid.hpp"
#include "crossdiff/model.hpp"
#include "crossdiff/types.hpp"

namespace crossdiff {

/// Free-energy density f(u) of the given kind.
///
/// f1 = sum pi_i (u_i log u_i - u_i) with pi = a/k, f2 = p^2/2, f3 = p log p - p,
/// hBS = sum (u_i log u_i - u_i), hR = u.Bu/2. The p-based densities need a
/// rank-one spec and hR a general one; the value is NaN where a kind is undefined.
double free_energy_density(const Vec& u, EntropyKind kind, const SystemSpec& spec);

/// Whether the kind is defined for this spec.
bool entropy_defined(EntropyKind kind, const SystemSpec& spec);

/// Chemical potential mu_i = d f / d u_i.
Vec chemical_potential(const Vec& u, EntropyKind kind, const SystemSpec& spec);

/// p - (-f3 + sum u_i d_i f3); zero up to round-off.
double gibbs_duhem_residual(const Vec& u, const SystemSpec& spec);

/// Quadrature of f over the grid (cell sum times cell volume).
double total_energy(const Field& u, EntropyKind kind, const SystemSpec& spec);

struct DissipationSample {
  double t = 0.0;
  double F = 0.0;
  double dFdt = 0.0;
};

struct DissipationSeries {
  std::vector<DissipationSample> samples;
  std::vector<int> violations;   // interval indices where F rose beyond slack
  double worst_increase = 0.0;   // max of (F_{j+1} - F_j) / (1 + |F_j|)

  bool monotone() const { return violations.empty(); }
};

/// Centered-difference dF/dt along a uniformly sampled trajectory; flags intervals
/// where F_{j+1} - F_j > slack (1 + |F_j|).
DissipationSeries dissipation_series(const std::vector<double>& times, const std::vector<double>& values,
                                     double slack = 1e-8);

DissipationSeries dissipation_series(const std::vector<Field>& trajectory, EntropyKind kind,
                                     const SystemSpec& spec, double slack = 1e-8);

}  // namespace crossdiff
