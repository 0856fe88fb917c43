#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "crossdiff/model.hpp"
#include "crossdiff/spectral_structure.hpp"
#include "crossdiff/transforms.hpp"
#include "crossdiff/types.hpp"

namespace crossdiff {

/// Pointwise coefficients of the symmetric hyperbolic-parabolic normal form
///   A0 d_t w_I = sum_nu A1[nu] d_nu w_I + lower_order,
///   parab_lhs d_t w_II = div(parab_coeff grad w_II).
struct NormalFormCoeffs {
  Mat A0;
  std::vector<Mat> A1;  // one per spatial direction, gradient factor included
  Vec lower_order;
  Mat parab_lhs;
  Mat parab_coeff;
};

/// Rank-one transport data, written in the scaled densities v = a∘u:
///   Y_il = k_i delta_il + (k_n - k_i) k_l v_l / â,  Y_n,i = (k_i - k_n)/â,  â = sum k_i v_i.
/// The hyperbolic equations read d_t w' = grad w_n . Y grad w' + Y_n |grad w_n|^2.
struct Rank1Transport {
  Mat Y;
  Vec Yn;
  double a_hat = 0.0;
};

Rank1Transport rank1_transport(const Vec& u, const SystemSpec& spec);

/// Diagonal symmetriser X_i = k_i v_i / (k_n - k_i); requires k_i < k_n for i < n.
Vec rank1_symmetriser(const Vec& u, const SystemSpec& spec);

struct Rank1Coeffs {
  NormalFormCoeffs coeffs;
  Rank1Transport transport;
  Mat A0Y;   // the symmetric product A0 Y (no gradient factor)
  Vec Vn;    // A0 Y_n
};

Rank1Coeffs coeffs_rank1_u(const Vec& u, const SystemSpec& spec, const Vec& grad_wn);
Rank1Coeffs coeffs_rank1(const PointW& w, const SystemSpec& spec, const Vec& grad_wn);

/// General-system coefficients at u. `grad_par` is r x d (column nu = d_nu w_II).
struct GeneralCoeffs {
  NormalFormCoeffs coeffs;
  Mat Sigma;           // Q^T A0 Q
  Vec g_circ;          // A0^{-1} lower_order
  GeneralSensitivity sensitivity;
};

GeneralCoeffs coeffs_general_u(const Vec& u, const EigenStructure& E, const Mat& grad_par);
GeneralCoeffs coeffs_general(const PointW& w, const EigenStructure& E, const Mat& grad_par);

/// A1^I(u, zeta) = Q Sigma D(u)^{-1} D[P^T Lambda zeta] Sigma Q^T for one direction.
Mat a1_general(const Vec& u, const EigenStructure& E, const Mat& Sigma, const Vec& zeta);

/// Quadratic lower-order term g°_k = sum_i xi^k_i sum_{m in II} d_{w_m} log u_i grad w_m . grad mu_i.
Vec lower_order_general(const Vec& u, const EigenStructure& E, const Mat& grad_par);
Vec lower_order_general(const Vec& u, const EigenStructure& E, const Mat& grad_par,
                        const GeneralSensitivity& sensitivity);

struct CertifyReport {
  double a0_asymmetry = 0.0;     // relative to max |A0|
  double a1_asymmetry = 0.0;     // max over directions, relative
  double parab_asymmetry = 0.0;  // relative
  double a0_min_eigenvalue = 0.0;
  double parab_min_eigenvalue = 0.0;
  bool passed = false;
};

CertifyReport certify(const NormalFormCoeffs& coeffs, double tol = 1e-12);

/// Normal form of one system in a form the time integrators can use directly:
///   d_t w_I  = sum_nu T_nu(w) d_nu w_I + s(w)
///   d_t w_II = div(C(u) grad w_II),   C linear in u.
class NormalFormModel {
 public:
  virtual ~NormalFormModel() = default;

  virtual int n() const = 0;
  virtual int hyperbolic_dim() const = 0;
  int parabolic_dim() const { return n() - hyperbolic_dim(); }
  virtual VariableSpace space() const = 0;
  virtual const SystemSpec& spec() const = 0;

  virtual Vec to_w(const Vec& u) const = 0;
  /// `warm` is an optional solver hint updated in place.
  virtual Vec to_u(const Vec& w, Vec* warm = nullptr) const = 0;

  /// Transport matrices (one per direction) and source of the hyperbolic block.
  virtual void transport(const Vec& u, const Mat& grad_par, std::vector<Mat>& T, Vec& source) const = 0;
  /// Parabolic flux matrix C(u) (r x r).
  virtual Mat parabolic_flux(const Vec& u) const = 0;
  /// Constant left factor making parab_lhs * C symmetric.
  virtual Mat parabolic_lhs() const = 0;
  /// Chemical potentials mu = M_mu w_II (n x r).
  virtual Mat potential_map() const = 0;
  /// Full symmetric coefficient set at a state.
  virtual NormalFormCoeffs coeffs(const Vec& u, const Mat& grad_par) const = 0;
};

class Rank1Model final : public NormalFormModel {
 public:
  /// `spec` must be sorted by k.
  explicit Rank1Model(SystemSpec spec);

  int n() const override { return spec_.n; }
  int hyperbolic_dim() const override { return spec_.n - 1; }
  VariableSpace space() const override { return VariableSpace::WRank1; }
  const SystemSpec& spec() const override { return spec_; }
  Vec to_w(const Vec& u) const override;
  Vec to_u(const Vec& w, Vec* warm = nullptr) const override;
  void transport(const Vec& u, const Mat& grad_par, std::vector<Mat>& T, Vec& source) const override;
  Mat parabolic_flux(const Vec& u) const override;
  Mat parabolic_lhs() const override;
  Mat potential_map() const override;
  NormalFormCoeffs coeffs(const Vec& u, const Mat& grad_par) const override;

 private:
  SystemSpec spec_;
};

class GeneralModel final : public NormalFormModel {
 public:
  explicit GeneralModel(SystemSpec spec);

  int n() const override { return spec_.n; }
  int hyperbolic_dim() const override { return E_.kernel_dim(); }
  VariableSpace space() const override { return VariableSpace::WGeneral; }
  const SystemSpec& spec() const override { return spec_; }
  const EigenStructure& eigen() const { return E_; }
  Vec to_w(const Vec& u) const override;
  Vec to_u(const Vec& w, Vec* warm = nullptr) const override;
  void transport(const Vec& u, const Mat& grad_par, std::vector<Mat>& T, Vec& source) const override;
  Mat parabolic_flux(const Vec& u) const override;
  Mat parabolic_lhs() const override;
  Mat potential_map() const override;
  NormalFormCoeffs coeffs(const Vec& u, const Mat& grad_par) const override;

 private:
  SystemSpec spec_;
  EigenStructure E_;
};

std::unique_ptr<NormalFormModel> make_model(const SystemSpec& spec);

}  // namespace crossdiff
