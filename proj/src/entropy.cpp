#include "crossdiff/entropy.hpp"

#include <cmath>
#include <limits>

#include "crossdiff/error.hpp"

namespace crossdiff {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double boltzmann(const Vec& u, const Vec& weights) {
  double f = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) f += weights[i] * (u[i] * std::log(u[i]) - u[i]);
  return f;
}

}  // namespace

bool entropy_defined(EntropyKind kind, const SystemSpec& spec) {
  switch (kind) {
    case EntropyKind::ShannonF1:
    case EntropyKind::QuadraticF2:
    case EntropyKind::PLogPF3:
      return spec.is_rank1();
    case EntropyKind::BoltzmannShannon:
      return true;
    case EntropyKind::Rao:
      return !spec.is_rank1();
  }
  return false;
}

double free_energy_density(const Vec& u, EntropyKind kind, const SystemSpec& spec) {
  if (!entropy_defined(kind, spec)) return kNaN;
  switch (kind) {
    case EntropyKind::ShannonF1:
      return boltzmann(u, shannon_weights(spec));
    case EntropyKind::QuadraticF2: {
      const double p = spec.a().dot(u);
      return 0.5 * p * p;
    }
    case EntropyKind::PLogPF3: {
      const double p = spec.a().dot(u);
      return p * std::log(p) - p;
    }
    case EntropyKind::BoltzmannShannon:
      return boltzmann(u, Vec::Ones(u.size()));
    case EntropyKind::Rao:
      return 0.5 * u.dot(spec.B() * u);
  }
  return kNaN;
}

Vec chemical_potential(const Vec& u, EntropyKind kind, const SystemSpec& spec) {
  if (!entropy_defined(kind, spec)) return Vec::Constant(u.size(), kNaN);
  switch (kind) {
    case EntropyKind::ShannonF1:
      return shannon_weights(spec).cwiseProduct(u.array().log().matrix());
    case EntropyKind::QuadraticF2:
      return spec.a() * spec.a().dot(u);
    case EntropyKind::PLogPF3:
      return spec.a() * std::log(spec.a().dot(u));
    case EntropyKind::BoltzmannShannon:
      return u.array().log().matrix();
    case EntropyKind::Rao:
      return spec.B() * u;
  }
  return Vec::Constant(u.size(), kNaN);
}

double gibbs_duhem_residual(const Vec& u, const SystemSpec& spec) {
  if (!spec.is_rank1()) throw Error(ErrorCode::BadDimension, "Gibbs-Duhem check needs the pressure of a rank-one spec");
  const double p = spec.a().dot(u);
  const double f = free_energy_density(u, EntropyKind::PLogPF3, spec);
  const Vec mu = chemical_potential(u, EntropyKind::PLogPF3, spec);
  return p - (-f + u.dot(mu));
}

double total_energy(const Field& u, EntropyKind kind, const SystemSpec& spec) {
  if (!entropy_defined(kind, spec)) return kNaN;
  double sum = 0.0;
  for (int p = 0; p < u.grid.points(); ++p) sum += free_energy_density(u.point(p), kind, spec);
  return sum * u.grid.cell_volume();
}

DissipationSeries dissipation_series(const std::vector<double>& times, const std::vector<double>& values,
                                     double slack) {
  if (times.size() != values.size()) throw Error(ErrorCode::BadDimension, "series lengths differ");
  DissipationSeries out;
  const std::size_t m = times.size();
  for (std::size_t j = 0; j < m; ++j) {
    DissipationSample s{times[j], values[j], 0.0};
    if (m >= 2) {
      const std::size_t lo = j == 0 ? 0 : j - 1;
      const std::size_t hi = j + 1 == m ? m - 1 : j + 1;
      s.dFdt = (values[hi] - values[lo]) / (times[hi] - times[lo]);
    }
    out.samples.push_back(s);
  }
  for (std::size_t j = 0; j + 1 < m; ++j) {
    const double rise = (values[j + 1] - values[j]) / (1.0 + std::abs(values[j]));
    out.worst_increase = std::max(out.worst_increase, rise);
    if (rise > slack) out.violations.push_back(static_cast<int>(j));
  }
  return out;
}

DissipationSeries dissipation_series(const std::vector<Field>& trajectory, EntropyKind kind,
                                     const SystemSpec& spec, double slack) {
  std::vector<double> times, values;
  for (const Field& f : trajectory) {
    times.push_back(f.time);
    values.push_back(total_energy(f, kind, spec));
  }
  return dissipation_series(times, values, slack);
}

}  // namespace crossdiff
