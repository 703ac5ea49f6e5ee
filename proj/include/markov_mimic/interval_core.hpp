#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "markov_mimic/error.hpp"
#include "markov_mimic/rational.hpp"
#include "markov_mimic/trace.hpp"

namespace markov_mimic {

/// Uniform grid i/M, i = 0..M.
class Grid {
 public:
  explicit Grid(int M) : M_(M) {
    if (M < 2) throw Error("grid: M must be at least 2");
  }

  int M() const noexcept { return M_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(M_) + 1; }
  double point(int i) const noexcept { return static_cast<double>(i) / M_; }
  Rational exact_point(int i) const { return Rational(i, M_); }

  /// Grid index nearest to x (ties round up), clamped to [0, M].
  int nearest_index(double x) const noexcept {
    auto i = static_cast<int>(std::floor(x * M_ + 0.5));
    return std::clamp(i, 0, M_);
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int M_;
};

/// Function on [0,1] given by its grid values; linear in between.
class SampledFunction {
 public:
  SampledFunction(Grid grid, std::vector<double> values)
      : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.size()) throw Error("sampled function: value count does not match grid");
  }

  static SampledFunction constant(Grid grid, double c) {
    return SampledFunction(grid, std::vector<double>(grid.size(), c));
  }

  template <class Fn>
  static SampledFunction from(Grid grid, Fn&& fn) {
    std::vector<double> v(grid.size());
    for (int i = 0; i <= grid.M(); ++i) v[i] = fn(grid.point(i));
    return SampledFunction(grid, std::move(v));
  }

  const Grid& grid() const noexcept { return grid_; }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](int i) const noexcept { return values_[static_cast<std::size_t>(i)]; }
  double front() const noexcept { return values_.front(); }
  double back() const noexcept { return values_.back(); }

  double operator()(double x) const noexcept {
    const int M = grid_.M();
    double u = x * M;
    if (u <= 0) return values_.front();
    if (u >= M) return values_.back();
    auto i = static_cast<int>(std::floor(u));
    double t = u - i;
    if (t == 0.0) return values_[i];
    return values_[i] + t * (values_[i + 1] - values_[i]);
  }

  double sup_norm() const noexcept {
    double s = 0;
    for (double v : values_) s = std::max(s, std::fabs(v));
    return s;
  }

  double min() const noexcept { return *std::min_element(values_.begin(), values_.end()); }
  double max() const noexcept { return *std::max_element(values_.begin(), values_.end()); }

  SampledFunction operator+(const SampledFunction& o) const { return zip(o, std::plus<>()); }
  SampledFunction operator-(const SampledFunction& o) const { return zip(o, std::minus<>()); }
  SampledFunction operator+(double c) const { return map([c](double v) { return v + c; }); }
  SampledFunction operator-(double c) const { return map([c](double v) { return v - c; }); }
  SampledFunction operator*(double c) const { return map([c](double v) { return v * c; }); }
  friend SampledFunction operator*(double c, const SampledFunction& f) { return f * c; }

  template <class Fn>
  SampledFunction map(Fn&& fn) const {
    std::vector<double> v(values_.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fn(values_[i]);
    return SampledFunction(grid_, std::move(v));
  }

  /// Copy with one grid value replaced.
  SampledFunction with_value(int i, double v) const {
    SampledFunction out = *this;
    out.values_.at(static_cast<std::size_t>(i)) = v;
    return out;
  }

 private:
  template <class Op>
  SampledFunction zip(const SampledFunction& o, Op op) const {
    if (!(grid_ == o.grid_)) throw Error("sampled function: grid mismatch");
    std::vector<double> v(values_.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = op(values_[i], o.values_[i]);
    return SampledFunction(grid_, std::move(v));
  }

  Grid grid_;
  std::vector<double> values_;
};

/// Runs fn(i) for i in [0, n) on up to `threads` threads.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

/// max |f - g| over the grid.
inline double sup_distance(const SampledFunction& f, const SampledFunction& g) {
  trace::note("sup_distance");
  if (!(f.grid() == g.grid())) throw Error("sup_distance: grid mismatch");
  double d = 0;
  for (std::size_t i = 0; i < f.values().size(); ++i)
    d = std::max(d, std::fabs(f.values()[i] - g.values()[i]));
  return d;
}

/// Largest j such that every f in F oscillates by less than eps over index gaps < j.
inline int modulus_delta_steps(std::span<const SampledFunction> F, double eps) {
  if (F.empty()) throw Error("modulus_delta: F is empty");
  if (!(eps > 0)) throw Error("modulus_delta: eps must be positive");
  const Grid grid = F.front().grid();
  const int M = grid.M();
  for (const auto& f : F)
    if (!(f.grid() == grid)) throw Error("modulus_delta: grid mismatch");
  const double bound = eps - 1e-12;
  int gap = 0;
  for (int d = 1; d <= M; ++d) {
    double osc = 0;
    for (const auto& f : F) {
      auto v = f.values();
      for (int i = 0; i + d <= M; ++i) osc = std::max(osc, std::fabs(v[i + d] - v[i]));
    }
    if (!(osc < bound)) break;
    gap = d;
  }
  return std::min(gap + 1, M);
}

/// delta0 = j/M from modulus_delta_steps; at least 1/M, at most 1.
inline double modulus_delta(std::span<const SampledFunction> F, double eps) {
  trace::note("modulus_delta");
  int j = modulus_delta_steps(F, eps);
  return static_cast<double>(j) / F.front().grid().M();
}

/// n = ceil(1/delta0) + 1 uniform points, as grid indices.
inline std::vector<int> dense_points(double delta0, const Grid& grid) {
  trace::note("dense_points");
  const int M = grid.M();
  if (!(delta0 <= 1.0 + 1e-12)) throw Error("dense_points: delta0 must be at most 1");
  if (delta0 * M < 1.0 - 1e-9) throw Error("dense_points: delta0 below grid resolution");
  auto n = static_cast<long long>(std::ceil(1.0 / delta0 - 1e-9)) + 1;
  if (n - 1 > M) throw Error("dense_points: delta0 below grid resolution");
  std::vector<int> pts(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) {
    long long num = 2 * i * M + (n - 1);
    pts[static_cast<std::size_t>(i)] = static_cast<int>(num / (2 * (n - 1)));
  }
  return pts;
}

/// Closed index range [first, last] of grid points.
struct Cell {
  int first;
  int last;
};

/// Cells X_1..X_n around representatives x_1 = 0 < ... < x_n = 1.
class CellPartition {
 public:
  CellPartition(Grid grid, std::vector<int> reps, std::vector<Cell> cells, double radius)
      : grid_(grid), reps_(std::move(reps)), cells_(std::move(cells)), radius_(radius) {}

  const Grid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return reps_.size(); }
  std::span<const int> representatives() const noexcept { return reps_; }
  int representative(std::size_t i) const noexcept { return reps_[i]; }
  double point(std::size_t i) const noexcept { return grid_.point(reps_[i]); }
  std::span<const Cell> cells() const noexcept { return cells_; }
  const Cell& cell(std::size_t i) const noexcept { return cells_[i]; }
  double radius() const noexcept { return radius_; }

  std::size_t cell_of(int grid_index) const {
    auto it = std::upper_bound(cells_.begin(), cells_.end(), grid_index,
                               [](int g, const Cell& c) { return g < c.first; });
    if (it == cells_.begin()) throw Error("cell_of: index outside grid");
    return static_cast<std::size_t>(std::distance(cells_.begin(), it) - 1);
  }

 private:
  Grid grid_;
  std::vector<int> reps_;
  std::vector<Cell> cells_;
  double radius_;
};

/// Voronoi cells; a grid point equidistant from two representatives opens the next cell.
inline CellPartition make_partition(std::span<const int> points, const Grid& grid, double radius) {
  trace::note("make_partition");
  const std::size_t n = points.size();
  if (n < 2) throw Error("make_partition: need at least two points (x_1 = 0 and x_n = 1)");
  if (points.front() != 0 || points.back() != grid.M())
    throw Error("make_partition: points must start at 0 and end at 1");
  for (std::size_t i = 1; i < n; ++i)
    if (points[i] <= points[i - 1]) throw Error("make_partition: points must be strictly increasing");
  std::vector<Cell> cells(n);
  int start = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    int sum = points[i] + points[i + 1];
    int last = (sum + 1) / 2 - 1;
    cells[i] = Cell{start, last};
    start = last + 1;
  }
  cells[n - 1] = Cell{start, grid.M()};
  const double limit = radius * grid.M() - 1e-9;
  for (std::size_t i = 0; i < n; ++i) {
    int far = std::max(points[i] - cells[i].first, cells[i].last - points[i]);
    if (!(far < limit))
      throw Error("make_partition: cell " + std::to_string(i + 1) + " reaches beyond radius");
  }
  return CellPartition(grid, std::vector<int>(points.begin(), points.end()), std::move(cells), radius);
}

inline CellPartition make_partition(std::span<const int> points, const Grid& grid) {
  return make_partition(points, grid, 1.0 + 1.0 / grid.M());
}

/// Rows "x,value".
inline void write_function_csv(std::ostream& os, const SampledFunction& f) {
  os << "x,value\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (int i = 0; i <= f.grid().M(); ++i) {
    line.str("");
    line << f.grid().point(i) << ',' << f[i] << '\n';
    os << line.str();
  }
}

inline SampledFunction read_function_csv(std::istream& is) {
  std::vector<double> xs, vs;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (lineno == 1 && (line[0] == 'x' || line[0] == 'X')) continue;
    std::istringstream row(line);
    double x = 0, v = 0;
    char comma = 0;
    if (!(row >> x >> comma >> v) || comma != ',')
      throw Error("function csv: malformed row at line " + std::to_string(lineno));
    xs.push_back(x);
    vs.push_back(v);
  }
  if (vs.size() < 3) throw Error("function csv: need at least 3 rows");
  Grid grid(static_cast<int>(vs.size()) - 1);
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (std::fabs(xs[i] - grid.point(static_cast<int>(i))) > 1e-9)
      throw Error("function csv: x at row " + std::to_string(i + 1) + " is off the uniform grid");
  return SampledFunction(grid, std::move(vs));
}

}  // namespace markov_mimic
