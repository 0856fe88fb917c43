#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "crossdiff/grid.hpp"
#include "crossdiff/model.hpp"
#include "crossdiff/normal_form.hpp"
#include "crossdiff/types.hpp"

namespace crossdiff {

enum class TimeScheme { ExplicitRK2, Imex };
enum class RunMode { Direct, NormalForm, Both };

std::string_view to_string(TimeScheme scheme);
std::string_view to_string(RunMode mode);

struct PicardConfig {
  bool enabled = false;
  int max_iters = 40;
  double contraction_tol = 1e-9;
  std::optional<double> K;              // working-bound factor; derived from A0 when unset
  std::optional<double> stage_horizon;  // initial T*; 50 explicit steps when unset
};

struct SolverConfig {
  std::optional<double> dt;  // fixed step; automatic when unset
  double t_end = 0.05;
  TimeScheme scheme = TimeScheme::ExplicitRK2;
  double cfl_hyp = 0.4;
  double diff_number = 0.25;
  double dissipation = 0.01;  // coefficient of the eps dx^3 d^4 smoothing on the hyperbolic block
  double positivity_floor = 1e-10;
  double snapshot_interval = 0.0;  // 0: record only the initial and final state
  DerivativeScheme spatial = DerivativeScheme::Central2;
  double cg_tol = 1e-10;
  int cg_max_iters = 10000;
  double min_dt = 1e-12;
  PicardConfig picard;
};

// --- Right-hand sides ---------------------------------------------------------

/// Conservative discretisation of d_t u_i = div(u_i grad mu_i), mu = M u:
/// half-point fluxes with arithmetic-mean u_i and centred differences of mu_i.
/// The spectral variant evaluates div(u_i grad mu_i) with Fourier derivatives.
Field rhs_direct(const Field& u, const SystemSpec& spec,
                 DerivativeScheme scheme = DerivativeScheme::Central2);

/// Normal-form rate d_t w: hyperbolic block in non-conservative form from the
/// pointwise coefficients, parabolic block in conservative form with the flux
/// matrix evaluated at half-point averaged densities.
Field rhs_normal_form(const Field& w, const NormalFormModel& model,
                      DerivativeScheme scheme = DerivativeScheme::Central2, double dissipation = 0.01);

/// Pointwise push-forward DPhi(u) du of a rate in u-space into w-space.
Field push_forward(const Field& u, const Field& du, const NormalFormModel& model);

Field to_w_field(const Field& u, const NormalFormModel& model);
Field to_u_field(const Field& w, const NormalFormModel& model);

// --- Time stepping --------------------------------------------------------------

/// Step-size bounds at a state: dt_hyp = cfl dx / V_max and dt_par = diff dx^2 / a_max.
struct StepLimits {
  double v_max = 0.0;
  double a_max = 0.0;
  double dt_hyperbolic = 0.0;
  double dt_parabolic = 0.0;
  double dt = 0.0;  // the one the configured scheme uses
};

StepLimits step_limits_direct(const Field& u, const SystemSpec& spec, const SolverConfig& cfg);

/// One step of the direct solver.
Field step_direct(const Field& u, const SystemSpec& spec, const SolverConfig& cfg, double dt);

/// One step of the normal-form solver (w-space).
Field step_normal_form(const Field& w, const NormalFormModel& model, const SolverConfig& cfg, double dt);

// --- Picard iteration ------------------------------------------------------------

/// Frozen-coefficient linear stage on the time levels t_k = k dt, k = 0..K.
/// `frozen` holds the previous iterate at those levels; the result has the same length.
std::vector<Field> picard_stage(const NormalFormModel& model, const std::vector<Field>& frozen, const Field& z,
                                double dt, const SolverConfig& cfg);

struct PicardRecord {
  int level = 0;
  double sup_l2 = 0.0;          // sup_t |w^l - w^{l-1}|_{L2}
  double grad_increment = 0.0;  // (int |grad(w^l_II - w^{l-1}_II)|^2 dt)^{1/2}
  double N = 0.0;
  double max_hs = 0.0;
  double min_wn = 0.0;
  double ratio = 0.0;  // N^l / N^{l-1}; NaN for l = 1
};

struct PicardResult {
  std::vector<PicardRecord> trace;
  std::vector<Field> trajectory;  // final iterate on the stage levels
  double T_star = 0.0;
  double dt = 0.0;
  double K = 0.0;
  double R = 0.0;
  double lambda_min = 0.0;  // range of A0 over the mollified data used for K
  double lambda_max = 0.0;
  int sobolev_index = 0;
  int halvings = 0;
  bool converged = false;
  std::vector<std::string> monitor_events;
};

/// Mollified Picard iteration for the normal form of `spec`, starting from u0.
/// Rank-one specs are relabelled and equal trailing coefficients merged first.
PicardResult run_picard(const SystemSpec& spec, const Field& u0, const SolverConfig& cfg);

// --- Full runs -----------------------------------------------------------------

inline constexpr int kEntropyCount = 5;

struct SeriesRow {
  double t = 0.0;
  std::array<double, kEntropyCount> entropy{};
  Vec mass;
  double min_u = 0.0;
  double hs_u = 0.0;
  double hs_w = 0.0;  // NaN for the direct solver
};

struct ModeResult {
  std::string mode;
  std::vector<Field> snapshots;  // u-space, original species order
  std::vector<SeriesRow> series;
  int steps = 0;
  double min_u_all = 0.0;        // min over all steps
  double max_mass_drift = 0.0;   // max over samples and species of |mass - mass(0)|
  // Parabolic variable range of the rank-one normal form (NaN otherwise).
  double wn_initial_min = 0.0, wn_initial_max = 0.0;
  double wn_min_all = 0.0, wn_max_all = 0.0;
};

struct RunReport {
  SystemSpec spec;
  SolverConfig config;
  RunMode mode = RunMode::Direct;
  std::vector<double> sample_times;
  std::optional<ModeResult> direct;
  std::optional<ModeResult> normal_form;
  std::vector<double> cross_distance;  // |u_direct - Psi(w)|_inf per sample (mode both)
  std::optional<PicardResult> picard;
};

RunReport run(const SystemSpec& spec, const Field& u0, const SolverConfig& cfg, RunMode mode);

/// Sample times 0, h, 2h, ..., t_end (always ending at t_end).
std::vector<double> sample_times(double t_end, double interval);

}  // namespace crossdiff
