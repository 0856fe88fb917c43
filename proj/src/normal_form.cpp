#include "crossdiff/normal_form.hpp"

#include <cmath>
#include <limits>

#include "crossdiff/error.hpp"

namespace crossdiff {

Rank1Transport rank1_transport(const Vec& u, const SystemSpec& spec) {
  const int n = spec.n;
  const Vec& k = spec.k();
  const Vec v = spec.a().cwiseProduct(u);
  const double kn = k[n - 1];
  Rank1Transport t;
  t.a_hat = k.dot(v);
  t.Y.resize(n - 1, n - 1);
  t.Yn.resize(n - 1);
  for (int i = 0; i < n - 1; ++i) {
    for (int l = 0; l < n - 1; ++l) {
      t.Y(i, l) = (i == l ? k[i] : 0.0) + (kn - k[i]) * k[l] * v[l] / t.a_hat;
    }
    t.Yn[i] = (k[i] - kn) / t.a_hat;
  }
  return t;
}

Vec rank1_symmetriser(const Vec& u, const SystemSpec& spec) {
  const int n = spec.n;
  const Vec& k = spec.k();
  const double kn = k[n - 1];
  Vec X(n - 1);
  for (int i = 0; i < n - 1; ++i) {
    if (!(k[i] < kn)) {
      throw Error(ErrorCode::DegenerateSpectrumGap,
                  "k_" + std::to_string(i + 1) + " equals the largest coefficient; aggregate equal species first");
    }
    X[i] = k[i] * spec.a()[i] * u[i] / (kn - k[i]);
  }
  return X;
}

Rank1Coeffs coeffs_rank1_u(const Vec& u, const SystemSpec& spec, const Vec& grad_wn) {
  Rank1Coeffs out;
  out.transport = rank1_transport(u, spec);
  const Vec X = rank1_symmetriser(u, spec);
  out.A0Y = X.asDiagonal() * out.transport.Y;
  out.Vn = X.cwiseProduct(out.transport.Yn);
  NormalFormCoeffs& c = out.coeffs;
  c.A0 = X.asDiagonal();
  for (Eigen::Index nu = 0; nu < grad_wn.size(); ++nu) c.A1.push_back(out.A0Y * grad_wn[nu]);
  c.lower_order = out.Vn * grad_wn.squaredNorm();
  c.parab_lhs = Mat::Identity(1, 1);
  c.parab_coeff = Mat::Constant(1, 1, out.transport.a_hat);
  return out;
}

Rank1Coeffs coeffs_rank1(const PointW& w, const SystemSpec& spec, const Vec& grad_wn) {
  return coeffs_rank1_u(psi_rank1(w, spec), spec, grad_wn);
}

Mat a1_general(const Vec& u, const EigenStructure& E, const Mat& Sigma, const Vec& zeta) {
  const Vec grad_mu = E.P.transpose() * (E.range_eigenvalues().cwiseProduct(zeta));
  const Vec weight = grad_mu.cwiseQuotient(u);
  return E.Q * Sigma * weight.asDiagonal() * Sigma * E.Q.transpose();
}

Vec lower_order_general(const Vec& u, const EigenStructure& E, const Mat& grad_par,
                        const GeneralSensitivity& sensitivity) {
  if (E.kernel_dim() == 0) return Vec(0);
  const Mat grad_mu = E.P.transpose() * E.range_eigenvalues().asDiagonal() * grad_par;  // n x d
  const Mat grad_log = sensitivity.dlogu_dwII * grad_par;                               // n x d
  const Vec pairing = grad_log.cwiseProduct(grad_mu).rowwise().sum();
  (void)u;
  return E.Q * pairing;
}

Vec lower_order_general(const Vec& u, const EigenStructure& E, const Mat& grad_par) {
  return lower_order_general(u, E, grad_par, dpsi_general(u, E));
}

GeneralCoeffs coeffs_general_u(const Vec& u, const EigenStructure& E, const Mat& grad_par) {
  const int h = E.kernel_dim();
  if (grad_par.rows() != E.rank) throw Error(ErrorCode::BadDimension, "gradient must have r rows");
  GeneralCoeffs out;
  out.sensitivity = dpsi_general(u, E);
  NormalFormCoeffs& c = out.coeffs;
  const Vec uinv = u.cwiseInverse();
  if (h > 0) {
    const Mat block = E.Q * uinv.asDiagonal() * E.Q.transpose();
    const Eigen::LLT<Mat> llt(block);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularA0, "Q D(u)^{-1} Q^T is not positive definite");
    c.A0 = llt.solve(Mat::Identity(h, h));
    c.A0 = 0.5 * (c.A0 + c.A0.transpose());
  } else {
    c.A0 = Mat(0, 0);
  }
  out.Sigma = E.Q.transpose() * c.A0 * E.Q;
  for (Eigen::Index nu = 0; nu < grad_par.cols(); ++nu) {
    c.A1.push_back(a1_general(u, E, out.Sigma, grad_par.col(nu)));
  }
  out.g_circ = lower_order_general(u, E, grad_par, out.sensitivity);
  c.lower_order = c.A0 * out.g_circ;
  const Vec lambda = E.range_eigenvalues();
  c.parab_lhs = lambda.asDiagonal();
  c.parab_coeff = lambda.asDiagonal() * E.P * u.asDiagonal() * E.P.transpose() * lambda.asDiagonal();
  return out;
}

GeneralCoeffs coeffs_general(const PointW& w, const EigenStructure& E, const Mat& grad_par) {
  return coeffs_general_u(psi_general(w, E), E, grad_par);
}

namespace {

double relative_asymmetry(const Mat& A) {
  if (A.size() == 0) return 0.0;
  const double scale = A.cwiseAbs().maxCoeff();
  const double asym = (A - A.transpose()).cwiseAbs().maxCoeff();
  return scale > 0.0 ? asym / scale : asym;
}

double min_eigenvalue(const Mat& A) {
  if (A.size() == 0) return std::numeric_limits<double>::infinity();
  const Mat sym = 0.5 * (A + A.transpose());
  return Eigen::SelfAdjointEigenSolver<Mat>(sym, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

}  // namespace

CertifyReport certify(const NormalFormCoeffs& coeffs, double tol) {
  CertifyReport r;
  r.a0_asymmetry = relative_asymmetry(coeffs.A0);
  for (const Mat& A1 : coeffs.A1) r.a1_asymmetry = std::max(r.a1_asymmetry, relative_asymmetry(A1));
  r.parab_asymmetry = relative_asymmetry(coeffs.parab_coeff);
  r.a0_min_eigenvalue = min_eigenvalue(coeffs.A0);
  r.parab_min_eigenvalue = min_eigenvalue(coeffs.parab_coeff);
  r.passed = r.a0_asymmetry <= tol && r.a1_asymmetry <= tol && r.parab_asymmetry <= tol &&
             r.a0_min_eigenvalue > 0.0 && r.parab_min_eigenvalue > 0.0;
  return r;
}

// --- Rank-one model ---------------------------------------------------------

Rank1Model::Rank1Model(SystemSpec spec) : spec_(std::move(spec)) {
  if (!spec_.is_rank1()) throw Error(ErrorCode::BadDimension, "Rank1Model needs a rank-one spec");
  const Vec& k = spec_.k();
  for (int i = 0; i + 1 < spec_.n; ++i) {
    if (k[i] > k[spec_.n - 1]) throw Error(ErrorCode::BadDimension, "species must be sorted so that k_n is largest");
  }
}

Vec Rank1Model::to_w(const Vec& u) const { return phi_rank1(u, spec_).stacked(); }

Vec Rank1Model::to_u(const Vec& w, Vec*) const {
  return psi_rank1(PointW::split(w, spec_.n - 1, TransformVariant::Rank1Explicit), spec_);
}

void Rank1Model::transport(const Vec& u, const Mat& grad_par, std::vector<Mat>& T, Vec& source) const {
  const Rank1Transport t = rank1_transport(u, spec_);
  const Eigen::Index d = grad_par.cols();
  T.resize(d);
  double grad2 = 0.0;
  for (Eigen::Index nu = 0; nu < d; ++nu) {
    T[nu] = t.Y * grad_par(0, nu);
    grad2 += grad_par(0, nu) * grad_par(0, nu);
  }
  source = t.Yn * grad2;
}

Mat Rank1Model::parabolic_flux(const Vec& u) const {
  return Mat::Constant(1, 1, spec_.k().dot(spec_.a().cwiseProduct(u)));
}

Mat Rank1Model::parabolic_lhs() const { return Mat::Identity(1, 1); }

Mat Rank1Model::potential_map() const { return spec_.k(); }

NormalFormCoeffs Rank1Model::coeffs(const Vec& u, const Mat& grad_par) const {
  return coeffs_rank1_u(u, spec_, grad_par.row(0).transpose()).coeffs;
}

// --- General model ----------------------------------------------------------

GeneralModel::GeneralModel(SystemSpec spec) : spec_(std::move(spec)), E_(eigenstructure(spec_)) {}

Vec GeneralModel::to_w(const Vec& u) const { return phi_general(u, E_).stacked(); }

Vec GeneralModel::to_u(const Vec& w, Vec* warm) const {
  const PointW pw = PointW::split(w, E_.kernel_dim(), TransformVariant::GeneralEigen);
  std::optional<Vec> start;
  if (warm != nullptr && warm->size() == E_.rank) start = *warm;
  GeneralInverse inv = invert_general(pw, E_, start);
  if (warm != nullptr) *warm = inv.X;
  return inv.u;
}

void GeneralModel::transport(const Vec& u, const Mat& grad_par, std::vector<Mat>& T, Vec& source) const {
  const Eigen::Index d = grad_par.cols();
  T.resize(d);
  if (E_.kernel_dim() == 0) {
    for (auto& t : T) t.resize(0, 0);
    source.resize(0);
    return;
  }
  const GeneralCoeffs c = coeffs_general_u(u, E_, grad_par);
  // Evaluate A0^{-1} (A1 . + f) from the assembled symmetric coefficients.
  const Eigen::LLT<Mat> llt(c.coeffs.A0);
  for (Eigen::Index nu = 0; nu < d; ++nu) T[nu] = llt.solve(c.coeffs.A1[nu]);
  source = llt.solve(c.coeffs.lower_order);
}

Mat GeneralModel::parabolic_flux(const Vec& u) const {
  return E_.P * u.asDiagonal() * E_.P.transpose() * E_.range_eigenvalues().asDiagonal();
}

Mat GeneralModel::parabolic_lhs() const { return E_.range_eigenvalues().asDiagonal(); }

Mat GeneralModel::potential_map() const { return E_.P.transpose() * E_.range_eigenvalues().asDiagonal(); }

NormalFormCoeffs GeneralModel::coeffs(const Vec& u, const Mat& grad_par) const {
  return coeffs_general_u(u, E_, grad_par).coeffs;
}

std::unique_ptr<NormalFormModel> make_model(const SystemSpec& spec) {
  if (spec.is_rank1()) return std::make_unique<Rank1Model>(spec);
  return std::make_unique<GeneralModel>(spec);
}

}  // namespace crossdiff
