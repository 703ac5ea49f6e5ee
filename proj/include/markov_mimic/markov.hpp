#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "markov_mimic/error.hpp"
#include "markov_mimic/interval_core.hpp"
#include "markov_mimic/subspace.hpp"
#include "markov_mimic/trace.hpp"

namespace markov_mimic {

/// Weights over the grid points.
class DiscreteMeasure {
 public:
  DiscreteMeasure(Grid grid, std::vector<double> weights) : grid_(grid), w_(std::move(weights)) {
    if (w_.size() != grid_.size()) throw Error("measure: weight count does not match grid");
  }

  const Grid& grid() const noexcept { return grid_; }
  std::span<const double> weights() const noexcept { return w_; }
  double mass_at(int i) const noexcept { return w_[static_cast<std::size_t>(i)]; }

  double total() const noexcept {
    double s = 0;
    for (double w : w_) s += w;
    return s;
  }

  double integrate(const SampledFunction& f) const {
    if (!(f.grid() == grid_)) throw Error("measure: grid mismatch");
    double s = 0;
    for (std::size_t i = 0; i < w_.size(); ++i) s += w_[i] * f.values()[i];
    return s;
  }

  /// Mass of the index range [first, last].
  double mass(int first, int last) const noexcept {
    double s = 0;
    for (int i = first; i <= last; ++i) s += w_[static_cast<std::size_t>(i)];
    return s;
  }

 private:
  Grid grid_;
  std::vector<double> w_;
};

/// Row y holds the measure mu_y; phi(f)(y) = sum_x w(y,x) f(x).
class MarkovKernel {
 public:
  MarkovKernel(Grid grid, std::vector<double> dense) : grid_(grid), w_(std::move(dense)) {
    if (w_.size() != grid_.size() * grid_.size()) throw Error("kernel: expected (M+1)^2 weights");
    index_rows();
  }

  const Grid& grid() const noexcept { return grid_; }

  std::span<const double> row(int y) const noexcept {
    return std::span<const double>(w_).subspan(static_cast<std::size_t>(y) * grid_.size(), grid_.size());
  }

  DiscreteMeasure measure(int y) const {
    auto r = row(y);
    return DiscreteMeasure(grid_, std::vector<double>(r.begin(), r.end()));
  }

  double weight(int y, int x) const noexcept { return row(y)[static_cast<std::size_t>(x)]; }

  /// Column indices with nonzero weight in row y.
  std::span<const int> support(int y) const noexcept {
    auto b = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(y)]);
    auto e = static_cast<std::size_t>(offsets_[static_cast<std::size_t>(y) + 1]);
    return std::span<const int>(support_).subspan(b, e - b);
  }

 private:
  void index_rows() {
    const std::size_t n = grid_.size();
    offsets_.assign(n + 1, 0);
    support_.clear();
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x)
        if (w_[y * n + x] != 0.0) support_.push_back(static_cast<int>(x));
      offsets_[y + 1] = static_cast<long long>(support_.size());
    }
  }

  Grid grid_;
  std::vector<double> w_;
  std::vector<long long> offsets_;
  std::vector<int> support_;
};

namespace detail {

inline void add_point_mass(std::vector<double>& row, const Grid& grid, double x, double w) {
  const int M = grid.M();
  double u = x * M;
  auto i = static_cast<int>(std::floor(u));
  if (i >= M) {
    row[static_cast<std::size_t>(M)] += w;
    return;
  }
  i = std::max(i, 0);
  double t = u - i;
  if (t <= 0) {
    row[static_cast<std::size_t>(i)] += w;
    return;
  }
  row[static_cast<std::size_t>(i)] += w * (1.0 - t);
  row[static_cast<std::size_t>(i) + 1] += w * t;
}

inline double checked_unit(double v, const char* who, int y) {
  if (v < -1e-12 || v > 1.0 + 1e-12 || !std::isfinite(v))
    throw Error(std::string(who) + ": map value " + std::to_string(v) + " at grid index " +
                std::to_string(y) + " leaves [0,1]");
  return std::clamp(v, 0.0, 1.0);
}

}  // namespace detail

/// f -> f o lam; off-grid targets are split between the bracketing grid points.
inline MarkovKernel from_composition(const SampledFunction& lam) {
  trace::note("from_composition");
  const Grid grid = lam.grid();
  const std::size_t n = grid.size();
  std::vector<double> w(n * n, 0.0);
  for (int y = 0; y <= grid.M(); ++y) {
    std::vector<double> row(n, 0.0);
    detail::add_point_mass(row, grid, detail::checked_unit(lam[y], "from_composition", y), 1.0);
    std::copy(row.begin(), row.end(), w.begin() + static_cast<std::ptrdiff_t>(y * n));
  }
  return MarkovKernel(grid, std::move(w));
}

/// Row y = sum_i w_i(y)/W(y) * point mass at maps_i(y).
inline MarkovKernel from_weighted_compositions(std::span<const SampledFunction> maps,
                                               std::span<const SampledFunction> weights) {
  trace::note("from_weighted_compositions");
  if (maps.empty() || maps.size() != weights.size())
    throw Error("from_weighted_compositions: need one weight per map");
  const Grid grid = maps.front().grid();
  for (std::size_t i = 0; i < maps.size(); ++i)
    if (!(maps[i].grid() == grid) || !(weights[i].grid() == grid))
      throw Error("from_weighted_compositions: grid mismatch");
  const std::size_t n = grid.size();
  std::vector<double> w(n * n, 0.0);
  for (int y = 0; y <= grid.M(); ++y) {
    double total = 0;
    for (const auto& wt : weights) {
      if (wt[y] < 0) throw Error("from_weighted_compositions: negative weight at grid index " + std::to_string(y));
      total += wt[y];
    }
    if (!(total > 0)) throw Error("from_weighted_compositions: zero total weight at grid index " + std::to_string(y));
    std::vector<double> row(n, 0.0);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      double c = weights[i][y] / total;
      if (c == 0) continue;
      detail::add_point_mass(row, grid, detail::checked_unit(maps[i][y], "from_weighted_compositions", y), c);
    }
    std::copy(row.begin(), row.end(), w.begin() + static_cast<std::ptrdiff_t>(y * n));
  }
  return MarkovKernel(grid, std::move(w));
}

inline MarkovKernel identity_kernel(const Grid& grid) {
  return from_composition(SampledFunction::from(grid, [](double x) { return x; }));
}

struct KernelReport {
  double max_row_sum_deviation = 0;
  double most_negative_weight = 0;
  bool pass = true;
};

inline KernelReport validate_kernel(const MarkovKernel& kernel) {
  trace::note("validate_kernel");
  KernelReport rep;
  for (int y = 0; y <= kernel.grid().M(); ++y) {
    double s = 0;
    for (double w : kernel.row(y)) {
      s += w;
      rep.most_negative_weight = std::min(rep.most_negative_weight, w);
    }
    rep.max_row_sum_deviation = std::max(rep.max_row_sum_deviation, std::fabs(s - 1.0));
  }
  rep.pass = rep.max_row_sum_deviation <= 1e-12 && rep.most_negative_weight >= -1e-12;
  return rep;
}

inline SampledFunction apply(const MarkovKernel& kernel, const SampledFunction& f) {
  trace::note("apply");
  if (!(f.grid() == kernel.grid())) throw Error("apply: grid mismatch");
  std::vector<double> out(f.grid().size());
  for (int y = 0; y <= f.grid().M(); ++y) {
    auto r = kernel.row(y);
    double s = 0;
    for (int x : kernel.support(y)) s += r[static_cast<std::size_t>(x)] * f[x];
    out[static_cast<std::size_t>(y)] = s;
  }
  return SampledFunction(f.grid(), std::move(out));
}

inline std::pair<DiscreteMeasure, DiscreteMeasure> endpoint_measures(const MarkovKernel& kernel) {
  trace::note("endpoint_measures");
  return {kernel.measure(0), kernel.measure(kernel.grid().M())};
}

struct InducedRatio {
  double beta = 0;
  double defect = 0;
  int probes = 0;
};

/// Random piecewise-linear member with f(1) in [1/2, 2].
inline SampledFunction random_member(const SubspaceSpec& spec, const Grid& grid, std::mt19937_64& rng,
                                     int knots = 4) {
  std::uniform_real_distribution<double> top(0.5, 2.0);
  std::uniform_real_distribution<double> mid(0.0, 2.0);
  std::uniform_int_distribution<int> where(1, grid.M() - 1);
  const double f1 = top(rng);
  std::vector<std::pair<int, double>> pts{{0, spec.alpha_value() * f1}, {grid.M(), f1}};
  for (int i = 0; i < knots; ++i) pts.emplace_back(where(rng), mid(rng));
  std::sort(pts.begin(), pts.end(), [](auto& l, auto& r) { return l.first < r.first; });
  pts.erase(std::unique(pts.begin(), pts.end(), [](auto& l, auto& r) { return l.first == r.first; }),
            pts.end());
  if (pts.back().first != grid.M()) pts.back() = {grid.M(), f1};
  pts.back().second = f1;
  std::vector<double> v(grid.size());
  for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
    auto [i0, v0] = pts[s];
    auto [i1, v1] = pts[s + 1];
    for (int i = i0; i <= i1; ++i)
      v[static_cast<std::size_t>(i)] = v0 + (v1 - v0) * static_cast<double>(i - i0) / (i1 - i0);
  }
  v[0] = spec.alpha_value() * v.back();
  return SampledFunction(grid, std::move(v));
}

/// Mean and spread of phi(f)(0)/phi(f)(1) over random members.
inline InducedRatio induced_ratio(const MarkovKernel& kernel, const SubspaceSpec& spec_in, int basis_size,
                                  std::uint64_t seed = 0) {
  trace::note("induced_ratio");
  if (basis_size < 3) throw Error("induced_ratio: basis_size must be at least 3");
  std::mt19937_64 rng(seed);
  const int M = kernel.grid().M();
  std::vector<double> ratios;
  for (int p = 0; p < basis_size; ++p) {
    SampledFunction f = random_member(spec_in, kernel.grid(), rng);
    SampledFunction g = apply(kernel, f);
    if (std::fabs(g[M]) < 1e-9) continue;
    ratios.push_back(g[0] / g[M]);
  }
  if (ratios.empty()) throw Error("induced_ratio: phi(f)(1) vanishes for every probe");
  InducedRatio out;
  out.probes = static_cast<int>(ratios.size());
  for (double r : ratios) out.beta += r;
  out.beta /= static_cast<double>(ratios.size());
  for (double r : ratios) out.defect = std::max(out.defect, std::fabs(r - out.beta));
  return out;
}

struct ConcentrationReport {
  double mass0 = 0;  // mu_0({0})
  double mass1 = 0;  // mu_1({1})
  std::optional<SampledFunction> witness;
  std::optional<TestKind> witness_kind;
  double witness_param = 0;
  double defect = 0;  // |phi(w)(0) - alpha phi(w)(1)|
};

inline ConcentrationReport concentration_check(const MarkovKernel& kernel, const SubspaceSpec& spec) {
  trace::note("concentration_check");
  const Grid& grid = kernel.grid();
  const int M = grid.M();
  const double alpha = spec.alpha_value();
  ConcentrationReport rep;
  rep.mass0 = kernel.weight(0, 0);
  rep.mass1 = kernel.weight(M, M);
  if (rep.mass0 >= 1.0 - 1e-9 && rep.mass1 >= 1.0 - 1e-9) return rep;
  auto endpoint_defect = [&](const SampledFunction& w) {
    auto r0 = kernel.row(0);
    auto r1 = kernel.row(M);
    double v0 = 0, v1 = 0;
    for (int x : kernel.support(0)) v0 += r0[static_cast<std::size_t>(x)] * w[x];
    for (int x : kernel.support(M)) v1 += r1[static_cast<std::size_t>(x)] * w[x];
    return std::fabs(v0 - alpha * v1);
  };
  auto consider = [&](TestKind kind, int j) {
    double p = grid.point(j);
    SampledFunction w = test_function(kind, p, spec, grid);
    double d = endpoint_defect(w);
    if (d > rep.defect) {
      rep.defect = d;
      rep.witness = std::move(w);
      rep.witness_kind = kind;
      rep.witness_param = p;
    }
  };
  for (int j = 1; j <= M; ++j) consider(TestKind::lower, j);
  for (int j = 0; j < M; ++j) consider(TestKind::upper, j);
  return rep;
}

/// (k1 f o id + k2 f o (1-x)) / (k1 + k2).
inline MarkovKernel example2_kernel(const Grid& grid, double k1, double k2) {
  std::vector<SampledFunction> maps{SampledFunction::from(grid, [](double x) { return x; }),
                                    SampledFunction::from(grid, [](double x) { return 1.0 - x; })};
  std::vector<SampledFunction> w{SampledFunction::constant(grid, k1), SampledFunction::constant(grid, k2)};
  return from_weighted_compositions(maps, w);
}

/// example2_kernel plus the constant map 1/2 with weight s(y) = (k1 alpha + k2)(1-y) + (k2 alpha + k1) y.
inline MarkovKernel example3_kernel(const Grid& grid, const SubspaceSpec& spec, double k1, double k2) {
  const double alpha = spec.alpha_value();
  std::vector<SampledFunction> maps{SampledFunction::from(grid, [](double x) { return x; }),
                                    SampledFunction::from(grid, [](double x) { return 1.0 - x; }),
                                    SampledFunction::constant(grid, 0.5)};
  std::vector<SampledFunction> w{
      SampledFunction::constant(grid, k1), SampledFunction::constant(grid, k2),
      SampledFunction::from(grid, [&](double y) {
        return (k1 * alpha + k2) * (1.0 - y) + (k2 * alpha + k1) * y;
      })};
  return from_weighted_compositions(maps, w);
}

/// Closed-form target ratio of example3_kernel.
inline double example3_beta(const SubspaceSpec& spec, double k1, double k2) {
  const double alpha = spec.alpha_value();
  const double K = k1 + k2;
  const double s0 = k1 * alpha + k2;
  const double s1 = k2 * alpha + k1;
  return s0 * (K + s1) / (s1 * (K + s0));
}

inline void write_kernel_csv(std::ostream& os, const MarkovKernel& kernel) {
  std::ostringstream line;
  line << std::setprecision(17);
  for (int y = 0; y <= kernel.grid().M(); ++y) {
    line.str("");
    auto r = kernel.row(y);
    for (std::size_t x = 0; x < r.size(); ++x) {
      if (x) line << ',';
      line << r[x];
    }
    line << '\n';
    os << line.str();
  }
}

/// Square CSV matrix; rejected unless row-stochastic.
inline MarkovKernel read_kernel_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw Error("kernel csv: bad number '" + cell + "' at line " + std::to_string(lineno));
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() < 3) throw Error("kernel csv: need at least 3 rows");
  const std::size_t n = rows.size();
  std::vector<double> dense;
  dense.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n)
      throw Error("kernel csv: row " + std::to_string(i + 1) + " has " + std::to_string(rows[i].size()) +
                  " entries, expected " + std::to_string(n));
    dense.insert(dense.end(), rows[i].begin(), rows[i].end());
  }
  MarkovKernel k(Grid(static_cast<int>(n) - 1), std::move(dense));
  KernelReport rep = validate_kernel(k);
  if (!rep.pass) {
    std::ostringstream msg;
    msg << "kernel csv: not row-stochastic (max row-sum deviation " << rep.max_row_sum_deviation
        << ", most negative weight " << rep.most_negative_weight << ")";
    throw Error(msg.str());
  }
  return k;
}

}  // namespace markov_mimic
