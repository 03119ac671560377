#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wkam/error.hpp"

namespace wkam {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// A point of the flat torus R^dim / Z^dim, or a tangent/cotangent vector.
/// Only the first `dim` components are meaningful.
using Coord = std::array<double, 2>;

/// Reduces a coordinate to [0, 1).
inline double wrap(double x) {
  double r = x - std::floor(x);
  return r >= 1.0 ? 0.0 : r;
}

/// Signed shortest displacement from a to b along one periodic axis, in [-1/2, 1/2).
inline double periodic_delta(double a, double b) {
  double d = b - a;
  d -= std::floor(d + 0.5);
  return d;
}

inline double periodic_distance(const Coord& a, const Coord& b, int dim) {
  double s = 0.0;
  for (int k = 0; k < dim; ++k) {
    double d = periodic_delta(a[k], b[k]);
    s += d * d;
  }
  return std::sqrt(s);
}

/// Uniform periodic grid with N points per axis on a torus of circumference 1.
class TorusGrid {
 public:
  static constexpr int kMinResolution = 8;

  TorusGrid(int dim, int n) : dim_(dim), n_(n) {
    if (dim != 1 && dim != 2) throw Error("TorusGrid: dim must be 1 or 2");
    if (n < kMinResolution) throw Error("TorusGrid: N must be at least 8");
  }

  int dim() const noexcept { return dim_; }
  int n() const noexcept { return n_; }
  double spacing() const noexcept { return 1.0 / n_; }
  std::size_t size() const noexcept {
    return dim_ == 1 ? static_cast<std::size_t>(n_)
                     : static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_);
  }

  /// Per-axis node index of a flat index. Axis 0 varies fastest.
  int axis_index(std::size_t flat, int axis) const noexcept {
    return axis == 0 ? static_cast<int>(flat % n_) : static_cast<int>(flat / n_);
  }

  std::size_t flat_index(int i, int j = 0) const noexcept {
    auto wi = static_cast<std::size_t>(((i % n_) + n_) % n_);
    if (dim_ == 1) return wi;
    auto wj = static_cast<std::size_t>(((j % n_) + n_) % n_);
    return wj * n_ + wi;
  }

  /// Flat index of the node shifted by `offset` cells along `axis` (wrapping).
  std::size_t neighbor(std::size_t flat, int axis, int offset) const noexcept {
    int i = axis_index(flat, 0);
    int j = dim_ == 2 ? axis_index(flat, 1) : 0;
    if (axis == 0) i += offset; else j += offset;
    return flat_index(i, j);
  }

  Coord coordinate(std::size_t flat) const noexcept {
    Coord c{0.0, 0.0};
    c[0] = axis_index(flat, 0) * spacing();
    if (dim_ == 2) c[1] = axis_index(flat, 1) * spacing();
    return c;
  }

  /// Index of the node closest to x.
  std::size_t nearest(const Coord& x) const noexcept {
    int i = static_cast<int>(std::lround(wrap(x[0]) * n_)) % n_;
    int j = dim_ == 2 ? static_cast<int>(std::lround(wrap(x[1]) * n_)) % n_ : 0;
    return flat_index(i, j);
  }

  friend bool operator==(const TorusGrid& a, const TorusGrid& b) noexcept {
    return a.dim_ == b.dim_ && a.n_ == b.n_;
  }

 private:
  int dim_;
  int n_;
};

/// Real values sampled at the nodes of a TorusGrid. All values are finite.
class GridFunction {
 public:
  explicit GridFunction(const TorusGrid& grid, double fill = 0.0)
      : grid_(grid), values_(grid.size(), fill) {
    require_finite(fill);
  }

  GridFunction(const TorusGrid& grid, std::vector<double> values)
      : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size())
      throw GridMismatch("GridFunction: value count does not match grid size");
    for (double v : values_) require_finite(v);
  }

  static GridFunction sample(const TorusGrid& grid,
                             const std::function<double(const Coord&)>& f) {
    std::vector<double> v(grid.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = f(grid.coordinate(k));
    return GridFunction(grid, std::move(v));
  }

  const TorusGrid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const noexcept { return values_[k]; }
  std::span<const double> values() const noexcept { return values_; }

  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }

  /// Largest first difference quotient over all nodes and axes.
  double lipschitz() const {
    double lip = 0.0;
    for (std::size_t k = 0; k < values_.size(); ++k)
      for (int a = 0; a < grid_.dim(); ++a)
        lip = std::max(lip, std::abs(values_[grid_.neighbor(k, a, 1)] - values_[k]));
    return lip / grid_.spacing();
  }

  GridFunction operator+(double c) const {
    std::vector<double> v(values_);
    for (double& x : v) x += c;
    return GridFunction(grid_, std::move(v));
  }
  GridFunction operator-(double c) const { return *this + (-c); }
  GridFunction operator-() const {
    std::vector<double> v(values_);
    for (double& x : v) x = -x;
    return GridFunction(grid_, std::move(v));
  }
  GridFunction operator+(const GridFunction& o) const {
    check_same_grid(o);
    std::vector<double> v(values_);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] += o.values_[k];
    return GridFunction(grid_, std::move(v));
  }
  GridFunction operator-(const GridFunction& o) const { return *this + (-o); }

  void check_same_grid(const GridFunction& o) const {
    if (!(grid_ == o.grid_)) throw GridMismatch("grid functions live on different grids");
  }

 private:
  static void require_finite(double v) {
    if (!std::isfinite(v)) throw Error("GridFunction: values must be finite");
  }

  TorusGrid grid_;
  std::vector<double> values_;
};

/// Periodic linear (1D) or bilinear (2D) interpolation.
inline double interpolate(const GridFunction& f, const Coord& x) {
  const TorusGrid& g = f.grid();
  const int n = g.n();
  auto split = [n](double c, int& i0, double& w) {
    double s = wrap(c) * n;
    double fl = std::floor(s);
    i0 = static_cast<int>(fl) % n;
    w = s - fl;
  };
  int i0;
  double wx;
  split(x[0], i0, wx);
  if (g.dim() == 1) {
    return (1.0 - wx) * f[g.flat_index(i0)] + wx * f[g.flat_index(i0 + 1)];
  }
  int j0;
  double wy;
  split(x[1], j0, wy);
  return (1.0 - wx) * (1.0 - wy) * f[g.flat_index(i0, j0)] +
         wx * (1.0 - wy) * f[g.flat_index(i0 + 1, j0)] +
         (1.0 - wx) * wy * f[g.flat_index(i0, j0 + 1)] +
         wx * wy * f[g.flat_index(i0 + 1, j0 + 1)];
}

/// max over nodes of |f - g|.
inline double sup_diff(const GridFunction& f, const GridFunction& g) {
  f.check_same_grid(g);
  double m = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) m = std::max(m, std::abs(f[k] - g[k]));
  return m;
}

/// Shortest-round-trip decimal form; used by every CSV writer so output is bit-stable.
inline std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// CSV with columns index, x[, y], value.
inline void write_csv(std::ostream& os, const GridFunction& f) {
  const TorusGrid& g = f.grid();
  os << (g.dim() == 1 ? "index,x,value\n" : "index,x,y,value\n");
  for (std::size_t k = 0; k < f.size(); ++k) {
    Coord c = g.coordinate(k);
    os << k << ',' << format_real(c[0]) << ',';
    if (g.dim() == 2) os << format_real(c[1]) << ',';
    os << format_real(f[k]) << '\n';
  }
}

/// Reads the CSV layout produced by write_csv. The last column holds the value;
/// the number of rows fixes N (dim is inferred from the header).
inline GridFunction read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("read_csv: empty input");
  int dim = std::count(line.begin(), line.end(), ',') == 3 ? 2 : 1;
  std::vector<double> values;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto pos = line.rfind(',');
    values.push_back(std::stod(line.substr(pos + 1)));
  }
  int n = dim == 1 ? static_cast<int>(values.size())
                   : static_cast<int>(std::lround(std::sqrt(static_cast<double>(values.size()))));
  TorusGrid grid(dim, n);
  return GridFunction(grid, std::move(values));
}

inline nlohmann::json to_json(const GridFunction& f) {
  return {{"schema", 1},
          {"dim", f.grid().dim()},
          {"N", f.grid().n()},
          {"values", std::vector<double>(f.values().begin(), f.values().end())}};
}

inline GridFunction grid_function_from_json(const nlohmann::json& j) {
  TorusGrid grid(j.at("dim").get<int>(), j.at("N").get<int>());
  return GridFunction(grid, j.at("values").get<std::vector<double>>());
}

}  // namespace wkam
