#include "crossdiff/grid.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <utility>

#include "crossdiff/error.hpp"

namespace crossdiff {

Grid::Grid(int d, int N, double L) : d_(d), N_(N), L_(L) {
  if (d != 1 && d != 2) throw Error(ErrorCode::BadDimension, "grid dimension must be 1 or 2");
  if (N < 8 || (N & (N - 1)) != 0) {
    throw Error(ErrorCode::BadDimension, "points per axis must be a power of two >= 8");
  }
  if (!(L > 0.0)) throw Error(ErrorCode::BadDimension, "axis length must be positive");
}

double Grid::cell_volume() const { return d_ == 1 ? dx() : dx() * dx(); }

double Grid::coordinate(int point, int axis) const {
  const int i = axis == 0 ? point % N_ : point / N_;
  return i * dx();
}

int Grid::neighbour(int point, int axis, int offset) const {
  if (axis == 0) {
    const int ix = point % N_;
    const int base = point - ix;
    return base + ((ix + offset) % N_ + N_) % N_;
  }
  const int ix = point % N_;
  const int iy = point / N_;
  return ((iy + offset) % N_ + N_) % N_ * N_ + ix;
}

namespace {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double, FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex, FftwFree>;

// Forward/backward r2c plans for one grid shape. Plans are created once under a
// lock and executed on per-call aligned buffers (fftw_execute_dft_* is reentrant).
class SpectralPlan {
 public:
  explicit SpectralPlan(const Grid& grid) : d_(grid.dim()), N_(grid.size()) {
    RealBuffer real(static_cast<double*>(fftw_malloc(sizeof(double) * real_size())));
    ComplexBuffer spec(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * complex_size())));
    if (d_ == 1) {
      forward_ = fftw_plan_dft_r2c_1d(N_, real.get(), spec.get(), FFTW_ESTIMATE);
      backward_ = fftw_plan_dft_c2r_1d(N_, spec.get(), real.get(), FFTW_ESTIMATE);
    } else {
      forward_ = fftw_plan_dft_r2c_2d(N_, N_, real.get(), spec.get(), FFTW_ESTIMATE);
      backward_ = fftw_plan_dft_c2r_2d(N_, N_, spec.get(), real.get(), FFTW_ESTIMATE);
    }
  }
  SpectralPlan(const SpectralPlan&) = delete;
  SpectralPlan& operator=(const SpectralPlan&) = delete;
  ~SpectralPlan() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  std::size_t real_size() const { return d_ == 1 ? N_ : static_cast<std::size_t>(N_) * N_; }
  std::size_t half() const { return N_ / 2 + 1; }
  std::size_t complex_size() const { return d_ == 1 ? half() : N_ * half(); }

  // Transforms f, multiplies mode (kx, ky) by m(kx, ky) (integer wavenumbers) and
  // transforms back, including the 1/N^d normalisation.
  template <typename Multiplier>
  Vec filter(const Vec& f, Multiplier&& m) const {
    RealBuffer real(static_cast<double*>(fftw_malloc(sizeof(double) * real_size())));
    ComplexBuffer spec(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * complex_size())));
    std::copy(f.data(), f.data() + real_size(), real.get());
    fftw_execute_dft_r2c(forward_, real.get(), spec.get());
    const double scale = 1.0 / static_cast<double>(real_size());
    const int rows = d_ == 1 ? 1 : N_;
    for (int iy = 0; iy < rows; ++iy) {
      const int ky = iy <= N_ / 2 ? iy : iy - N_;
      for (std::size_t ix = 0; ix < half(); ++ix) {
        const std::complex<double> factor = m(static_cast<int>(ix), ky) * scale;
        auto& c = spec.get()[iy * half() + ix];
        const std::complex<double> value = std::complex<double>(c[0], c[1]) * factor;
        c[0] = value.real();
        c[1] = value.imag();
      }
    }
    fftw_execute_dft_c2r(backward_, spec.get(), real.get());
    return Eigen::Map<const Vec>(real.get(), static_cast<Eigen::Index>(real_size()));
  }

  // Sum over all modes of weight(kx, ky) * |f_hat|^2, with f_hat unnormalised.
  template <typename Weight>
  double weighted_power(const Vec& f, Weight&& w) const {
    RealBuffer real(static_cast<double*>(fftw_malloc(sizeof(double) * real_size())));
    ComplexBuffer spec(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * complex_size())));
    std::copy(f.data(), f.data() + real_size(), real.get());
    fftw_execute_dft_r2c(forward_, real.get(), spec.get());
    double total = 0.0;
    const int rows = d_ == 1 ? 1 : N_;
    for (int iy = 0; iy < rows; ++iy) {
      const int ky = iy <= N_ / 2 ? iy : iy - N_;
      for (std::size_t ix = 0; ix < half(); ++ix) {
        const auto& c = spec.get()[iy * half() + ix];
        const double power = c[0] * c[0] + c[1] * c[1];
        // Columns 0 and N/2 are self-conjugate; the rest stand for two modes.
        const double mult = (ix == 0 || static_cast<int>(ix) == N_ / 2) ? 1.0 : 2.0;
        total += mult * power * w(static_cast<int>(ix), ky);
      }
    }
    return total;
  }

 private:
  int d_;
  int N_;
  fftw_plan forward_{};
  fftw_plan backward_{};
};

const SpectralPlan& plan_for(const Grid& grid) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::unique_ptr<SpectralPlan>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{grid.dim(), grid.size()}];
  if (!slot) slot = std::make_unique<SpectralPlan>(grid);
  return *slot;
}

void check_size(const Grid& grid, const Vec& f) {
  if (f.size() != grid.points()) throw Error(ErrorCode::BadDimension, "field size does not match grid");
}

}  // namespace

Vec derivative(const Grid& grid, const Vec& f, int axis, DerivativeScheme scheme) {
  check_size(grid, f);
  if (axis < 0 || axis >= grid.dim()) throw Error(ErrorCode::BadDimension, "axis out of range");
  if (scheme == DerivativeScheme::Central2) {
    Vec out(f.size());
    const double inv = 0.5 / grid.dx();
    for (int p = 0; p < grid.points(); ++p) {
      out[p] = (f[grid.neighbour(p, axis, 1)] - f[grid.neighbour(p, axis, -1)]) * inv;
    }
    return out;
  }
  const int N = grid.size();
  const double wave = 2.0 * M_PI / grid.length();
  return plan_for(grid).filter(f, [&](int kx, int ky) {
    const int k = axis == 0 ? kx : ky;
    // The Nyquist mode has no odd-derivative counterpart on the grid.
    if (2 * std::abs(k) == N) return std::complex<double>(0.0, 0.0);
    return std::complex<double>(0.0, wave * k);
  });
}

Field derivative(const Field& field, int axis, DerivativeScheme scheme) {
  Field out(field.grid, field.components(), field.space, field.time);
  for (int c = 0; c < field.components(); ++c) {
    out.values.row(c) = derivative(field.grid, field.component(c), axis, scheme).transpose();
  }
  return out;
}

Vec fourth_difference(const Grid& grid, const Vec& f, int axis) {
  check_size(grid, f);
  Vec out(f.size());
  for (int p = 0; p < grid.points(); ++p) {
    out[p] = f[grid.neighbour(p, axis, -2)] - 4.0 * f[grid.neighbour(p, axis, -1)] + 6.0 * f[p] -
             4.0 * f[grid.neighbour(p, axis, 1)] + f[grid.neighbour(p, axis, 2)];
  }
  return out;
}

Vec apply_multiplier(const Grid& grid, const Vec& f,
                     const std::function<std::complex<double>(double, double)>& multiplier) {
  check_size(grid, f);
  const double wave = 2.0 * M_PI / grid.length();
  return plan_for(grid).filter(f, [&](int kx, int ky) { return multiplier(wave * kx, wave * ky); });
}

Vec mollify_width(const Grid& grid, const Vec& f, double width) {
  check_size(grid, f);
  const double wave = 2.0 * M_PI / grid.length();
  const bool two_d = grid.dim() == 2;
  return plan_for(grid).filter(f, [&](int kx, int ky) {
    const double xi2 = wave * wave * (kx * kx + (two_d ? ky * ky : 0));
    return std::complex<double>(std::exp(-0.5 * width * width * xi2), 0.0);
  });
}

double mollifier_width(const Grid& grid, int level) {
  return 0.1 * grid.length() * std::ldexp(1.0, -level);
}

Field mollify(const Field& field, int level) {
  Field out(field.grid, field.components(), field.space, field.time);
  const double h = mollifier_width(field.grid, level);
  for (int c = 0; c < field.components(); ++c) {
    out.values.row(c) = mollify_width(field.grid, field.component(c), h).transpose();
  }
  return out;
}

double l2_norm(const Grid& grid, const Vec& f) {
  check_size(grid, f);
  return std::sqrt(f.squaredNorm() * grid.cell_volume());
}

double l2_norm(const Field& field) {
  return std::sqrt(field.values.squaredNorm() * field.grid.cell_volume());
}

double sobolev_norm(const Grid& grid, const Vec& f, int s) {
  check_size(grid, f);
  if (s < 0) throw Error(ErrorCode::BadDimension, "Sobolev index must be non-negative");
  const double wave = 2.0 * M_PI / grid.length();
  const bool two_d = grid.dim() == 2;
  // Parseval: int |v|^2 = (cell volume / N^d) sum |v_hat|^2.
  const double scale = grid.cell_volume() / static_cast<double>(grid.points());
  const double total = plan_for(grid).weighted_power(f, [&](int kx, int ky) {
    const double x2 = wave * wave * kx * kx;
    const double y2 = two_d ? wave * wave * ky * ky : 0.0;
    // sum over multi-indices |alpha| <= s of xi_x^{2 alpha_1} xi_y^{2 alpha_2}
    double weight = 0.0;
    for (int ax = 0; ax <= s; ++ax) {
      const int ay_max = two_d ? s - ax : 0;
      for (int ay = 0; ay <= ay_max; ++ay) weight += std::pow(x2, ax) * std::pow(y2, ay);
    }
    return weight;
  });
  return std::sqrt(total * scale);
}

double sobolev_norm(const Field& field, int s) {
  double total = 0.0;
  for (int c = 0; c < field.components(); ++c) {
    const double v = sobolev_norm(field.grid, field.component(c), s);
    total += v * v;
  }
  return std::sqrt(total);
}

int monitoring_sobolev_index(int d) { return d / 2 + 2; }

double grid_sum(const Vec& f) {
  // Pairwise-free Kahan sum keeps telescoping cancellations at round-off level.
  double sum = 0.0;
  double carry = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const double y = f[i] - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  return sum;
}

void write_csv(const Field& field, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "x";
  if (field.grid.dim() == 2) out << ",y";
  for (int c = 0; c < field.components(); ++c) out << ",c" << c + 1;
  out << '\n' << std::setprecision(17);
  for (int p = 0; p < field.grid.points(); ++p) {
    out << field.grid.coordinate(p, 0);
    if (field.grid.dim() == 2) out << ',' << field.grid.coordinate(p, 1);
    for (int c = 0; c < field.components(); ++c) out << ',' << field.values(c, p);
    out << '\n';
  }
}

Field read_csv(const std::filesystem::path& path, int d) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const int columns = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  const int comps = columns - d;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != columns) throw std::runtime_error("ragged CSV row");
    rows.push_back(std::move(row));
  }
  const int points = static_cast<int>(rows.size());
  const int N = d == 1 ? points : static_cast<int>(std::lround(std::sqrt(points)));
  if (N < 2) throw std::runtime_error("CSV snapshot too small");
  const double L = N * (rows[1][0] - rows[0][0]);
  Field field(Grid(d, N, L), comps);
  for (int p = 0; p < points; ++p)
    for (int c = 0; c < comps; ++c) field.values(c, p) = rows[p][d + c];
  return field;
}

void write_binary(const Field& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  const std::int32_t header[3] = {field.grid.dim(), field.grid.size(), field.components()};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(&field.time), sizeof(double));
  for (int p = 0; p < field.grid.points(); ++p) {
    for (int c = 0; c < field.components(); ++c) {
      const double v = field.values(c, p);
      out.write(reinterpret_cast<const char*>(&v), sizeof(double));
    }
  }
}

Field read_binary(const std::filesystem::path& path, double L) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::int32_t header[3];
  double time = 0.0;
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  in.read(reinterpret_cast<char*>(&time), sizeof(double));
  Field field(Grid(header[0], header[1], L), header[2], VariableSpace::U, time);
  for (int p = 0; p < field.grid.points(); ++p) {
    for (int c = 0; c < field.components(); ++c) {
      in.read(reinterpret_cast<char*>(&field.values(c, p)), sizeof(double));
    }
  }
  if (!in) throw std::runtime_error("truncated binary snapshot " + path.string());
  return field;
}

}  // namespace crossdiff
