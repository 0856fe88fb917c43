#pragma once

#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "crossdiff/types.hpp"

namespace crossdiff {

/// Coefficients of the rank-one system d_t u_i = div(k_i u_i grad p(u)), p = sum a_j u_j.
struct Rank1Coefficients {
  Vec k;
  Vec a;
};

/// Symmetric positive semidefinite interaction matrix: d_t u_i = div(u_i grad (Bu)_i).
struct GeneralMatrix {
  Mat B;
};

struct SystemSpec {
  int n = 0;
  int d = 1;
  double domain_length = 0.0;
  std::variant<Rank1Coefficients, GeneralMatrix> kind;
  int rank = 0;

  bool is_rank1() const { return std::holds_alternative<Rank1Coefficients>(kind); }
  const Vec& k() const { return std::get<Rank1Coefficients>(kind).k; }
  const Vec& a() const { return std::get<Rank1Coefficients>(kind).a; }
  const Mat& B() const { return std::get<GeneralMatrix>(kind).B; }

  /// Matrix M with chemical potential mu = M u, so that d_t u_i = div(u_i grad mu_i).
  /// Rank-one: M_ij = k_i a_j. General: M = B.
  Mat interaction_matrix() const;
};

/// Unvalidated problem description as read from a config file.
struct RawSpec {
  std::optional<int> n;
  int d = 1;
  std::optional<double> domain_length;
  std::optional<std::vector<double>> k;
  std::optional<std::vector<double>> a;
  std::optional<std::vector<std::vector<double>>> B;
};

inline constexpr double kSymmetryTol = 1e-12;
inline constexpr double kPsdTol = 1e-10;
inline constexpr double kRankTol = 1e-9;
inline constexpr int kMaxSpecies = 16;

SystemSpec build_system_spec(const RawSpec& raw);

/// Species permutation. `order[j]` is the original index of relabelled species j.
struct Permutation {
  std::vector<int> order;

  bool is_identity() const;
  Permutation inverse() const;
  /// Relabelled vector: out[j] = v[order[j]].
  Vec apply(const Vec& v) const;
  /// Undo apply(): out[order[j]] = v[j].
  Vec restore(const Vec& v) const;
};

struct RelabelledSpec {
  SystemSpec spec;
  Permutation permutation;
};

/// Sorts a rank-one spec so that k_1 <= ... <= k_n (stable for ties).
RelabelledSpec canonical_relabel(const SystemSpec& spec);

/// Applies a permutation to the species of a spec (rank-one or general).
SystemSpec permute_spec(const SystemSpec& spec, const Permutation& perm);

enum class EntropyKind {
  ShannonF1,
  QuadraticF2,
  PLogPF3,
  BoltzmannShannon,
  Rao,
};

inline constexpr EntropyKind kAllEntropyKinds[] = {
    EntropyKind::ShannonF1, EntropyKind::QuadraticF2, EntropyKind::PLogPF3,
    EntropyKind::BoltzmannShannon, EntropyKind::Rao};

std::string_view to_string(EntropyKind kind);

/// Shannon weights pi_i = a_i / k_i of a rank-one spec.
Vec shannon_weights(const SystemSpec& spec);

}  // namespace crossdiff
