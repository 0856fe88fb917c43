#pragma once

#include <complex>
#include <filesystem>
#include <functional>
#include <string>

#include "crossdiff/types.hpp"

namespace crossdiff {

/// Uniform periodic grid on [0, L)^d with N points per axis. Point index is
/// iy * N + ix (x fastest).
class Grid {
 public:
  Grid(int d, int N, double L);

  int dim() const { return d_; }
  int size() const { return N_; }
  double length() const { return L_; }
  double dx() const { return L_ / N_; }
  int points() const { return d_ == 1 ? N_ : N_ * N_; }
  double cell_volume() const;
  double coordinate(int point, int axis) const;
  /// Periodic neighbour of `point` shifted by `offset` along `axis`.
  int neighbour(int point, int axis, int offset) const;

  bool operator==(const Grid&) const = default;

 private:
  int d_;
  int N_;
  double L_;
};

enum class DerivativeScheme { Central2, Spectral };

enum class VariableSpace { U, WRank1, WGeneral, WAlt };

using FieldData = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Gridded state: one row per component, one column per grid point.
struct Field {
  Grid grid;
  VariableSpace space = VariableSpace::U;
  double time = 0.0;
  FieldData values;

  Field(Grid g, int components, VariableSpace s = VariableSpace::U, double t = 0.0)
      : grid(g), space(s), time(t), values(FieldData::Zero(components, g.points())) {}

  int components() const { return static_cast<int>(values.rows()); }
  Vec component(int c) const { return values.row(c).transpose(); }
  Vec point(int p) const { return values.col(p); }
};

Vec derivative(const Grid& grid, const Vec& f, int axis, DerivativeScheme scheme);
Field derivative(const Field& field, int axis, DerivativeScheme scheme);

/// Undivided fourth difference along `axis` (stencil 1, -4, 6, -4, 1).
Vec fourth_difference(const Grid& grid, const Vec& f, int axis);

/// Applies the Fourier multiplier m(xi_x, xi_y) (physical wavenumbers) to f.
Vec apply_multiplier(const Grid& grid, const Vec& f,
                     const std::function<std::complex<double>(double, double)>& multiplier);

/// Convolution with the periodic heat kernel of width h (Gaussian multiplier).
Vec mollify_width(const Grid& grid, const Vec& f, double width);

/// Mollifier width at level l: h_l = 0.1 L 2^{-l}.
double mollifier_width(const Grid& grid, int level);

Field mollify(const Field& field, int level);

double l2_norm(const Grid& grid, const Vec& f);
double l2_norm(const Field& field);

/// Discrete H^s norm via the multiplier sum_{|alpha| <= s} xi^{2 alpha}.
double sobolev_norm(const Grid& grid, const Vec& f, int s);
double sobolev_norm(const Field& field, int s);

/// Smallest integer index above d/2 + 1.
int monitoring_sobolev_index(int d);

double grid_sum(const Vec& f);

void write_csv(const Field& field, const std::filesystem::path& path);
/// Reads a snapshot written by write_csv; the axis length is inferred from the spacing.
Field read_csv(const std::filesystem::path& path, int d);

/// Binary layout: int32 d, int32 N, int32 n, float64 time, then point-major doubles.
void write_binary(const Field& field, const std::filesystem::path& path);
Field read_binary(const std::filesystem::path& path, double L);

}  // namespace crossdiff
