#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "markov_mimic/error.hpp"
#include "markov_mimic/interval_core.hpp"
#include "markov_mimic/markov.hpp"
#include "markov_mimic/rational.hpp"
#include "markov_mimic/relations.hpp"
#include "markov_mimic/subspace.hpp"
#include "markov_mimic/trace.hpp"

namespace markov_mimic {

enum class Mode { same, cross };
enum class CrossCase { none, I, II };

inline const char* to_string(Mode m) { return m == Mode::same ? "same" : "cross"; }
inline const char* to_string(CrossCase c) {
  switch (c) {
    case CrossCase::I: return "I";
    case CrossCase::II: return "II";
    default: return "none";
  }
}

/// lambda_i(y) = mu_y(X_i) per cell.
struct CoefficientField {
  CellPartition partition;
  std::vector<SampledFunction> lambdas;
  std::vector<Rational> at0;  // exact lambda_i(0) once snapped
  std::vector<Rational> at1;  // exact lambda_i(1) once snapped

  std::size_t n() const noexcept { return lambdas.size(); }
  bool snapped() const noexcept { return !at0.empty(); }
  const Grid& grid() const noexcept { return partition.grid(); }

  /// Sum_i lambda_i(y) f(x_i).
  double combine(const SampledFunction& f, int y) const {
    double s = 0;
    for (std::size_t i = 0; i < lambdas.size(); ++i) s += lambdas[i][y] * f[partition.representative(i)];
    return s;
  }
};

inline CoefficientField build_coefficients(const MarkovKernel& kernel, const CellPartition& partition) {
  trace::note("build_coefficients");
  if (!(kernel.grid() == partition.grid())) throw Error("build_coefficients: grid mismatch");
  const Grid& grid = kernel.grid();
  const int M = grid.M();
  const std::size_t n = partition.size();
  std::vector<std::size_t> cell_of(grid.size());
  for (std::size_t i = 0; i < n; ++i)
    for (int x = partition.cell(i).first; x <= partition.cell(i).last; ++x) cell_of[static_cast<std::size_t>(x)] = i;
  std::vector<std::vector<double>> vals(n, std::vector<double>(grid.size(), 0.0));
  for (int y = 0; y <= M; ++y) {
    auto row = kernel.row(y);
    for (int x : kernel.support(y))
      vals[cell_of[static_cast<std::size_t>(x)]][static_cast<std::size_t>(y)] += row[static_cast<std::size_t>(x)];
  }
  CoefficientField field{partition, {}, {}, {}};
  for (auto& v : vals) field.lambdas.emplace_back(grid, std::move(v));
  return field;
}

/// max over f, y of |phi(f)(y) - Sum_i lambda_i(y) f(x_i)|.
inline double coefficient_error(const MarkovKernel& kernel, const CoefficientField& field,
                                std::span<const SampledFunction> F) {
  double worst = 0;
  for (const auto& f : F) {
    SampledFunction pf = apply(kernel, f);
    for (int y = 0; y <= f.grid().M(); ++y) worst = std::max(worst, std::fabs(pf[y] - field.combine(f, y)));
  }
  return worst;
}

inline CoefficientField build_coefficients(const MarkovKernel& kernel, const CellPartition& partition,
                                           std::span<const SampledFunction> F, double eps) {
  CoefficientField field = build_coefficients(kernel, partition);
  double err = coefficient_error(kernel, field, F);
  if (!(err < eps / 4))
    throw Error("build_coefficients: bound violated (" + std::to_string(err) + " >= eps/4); delta0 too large for F");
  return field;
}

/// Same-subspace endpoint snapshot: r = e_1, s = e_n.
inline RationalSnapshot point_mass_snapshot(std::size_t n) {
  RationalSnapshot s;
  s.r.assign(n, Rational(0));
  s.s.assign(n, Rational(0));
  s.r.front() = Rational(1);
  s.s.back() = Rational(1);
  s.eta = Rational(0);
  s.lattice = 1;
  return s;
}

/// Pins lambda(0) = r and lambda(1) = s exactly; the change fades out over one grid cell.
inline CoefficientField snap_endpoints(const CoefficientField& field, const RationalSnapshot& snap,
                                       double slack = std::numeric_limits<double>::infinity(),
                                       double sup_norm = 1.0) {
  trace::note("snap_endpoints");
  const std::size_t n = field.n();
  if (snap.r.size() != n || snap.s.size() != n) throw Error("snap_endpoints: snapshot size does not match field");
  const int M = field.grid().M();
  double moved0 = 0, moved1 = 0;
  std::vector<double> d0(n), d1(n);
  for (std::size_t i = 0; i < n; ++i) {
    d0[i] = snap.r[i].to_double() - field.lambdas[i][0];
    d1[i] = snap.s[i].to_double() - field.lambdas[i][M];
    moved0 += std::fabs(d0[i]);
    moved1 += std::fabs(d1[i]);
  }
  const double cost = std::max(moved0, moved1) * sup_norm;
  if (cost > slack)
    throw Error("snap_endpoints: eta exceeds the coefficient-step error budget slack (" + std::to_string(cost) + " > " +
                std::to_string(slack) + ")");
  CoefficientField out{field.partition, {}, snap.r, snap.s};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(field.lambdas[i].values().begin(), field.lambdas[i].values().end());
    v[1] += 0.5 * d0[i];
    v[static_cast<std::size_t>(M) - 1] += 0.5 * d1[i];
    v[0] = snap.r[i].to_double();
    v[static_cast<std::size_t>(M)] = snap.s[i].to_double();
    for (std::size_t y = 0; y < v.size(); ++y) {
      if (v[y] < -1e-12)
        throw Error("snap_endpoints: blended coefficient " + std::to_string(i + 1) + " turns negative at grid index " +
                    std::to_string(y));
      v[y] = std::max(v[y], 0.0);
    }
    out.lambdas.emplace_back(field.grid(), std::move(v));
  }
  return out;
}

struct Block {
  SampledFunction width;
  int point;          // grid index of the target x'_j
  std::size_t cell;   // cell that supplies the width
  Rational width0;    // exact width at y = 0
  Rational width1;    // exact width at y = 1
};

struct BlockSchedule {
  Grid grid;
  std::vector<Block> blocks;
  bool interleaved = false;

  /// Sum_j l_j(y) f(x'_j).
  double combine(const SampledFunction& f, int y) const {
    double s = 0;
    for (const auto& b : blocks) s += b.width[y] * f[b.point];
    return s;
  }
};

/// One block per cell, in cell order.
inline BlockSchedule same_schedule(const CoefficientField& field) {
  if (!field.snapped()) throw Error("same_schedule: field must be snapped");
  BlockSchedule s{field.grid(), {}, false};
  for (std::size_t i = 0; i < field.n(); ++i)
    s.blocks.push_back(Block{field.lambdas[i], field.partition.representative(i), i, field.at0[i], field.at1[i]});
  return s;
}

/// Odd block 2i-1 carries x_{i+1} with width lambda_{i+1}; even blocks carry 0 and absorb lambda_1.
inline BlockSchedule interleave_coefficients(const CoefficientField& field) {
  trace::note("interleave_coefficients");
  if (!field.snapped()) throw Error("interleave_coefficients: field must be snapped");
  const std::size_t n = field.n();
  const Grid grid = field.grid();
  const int M = grid.M();
  for (std::size_t i = 1; i < n; ++i)
    if (field.at0[i] > field.at1[i])
      throw Error("interleave_coefficients: monotonicity violated, lambda_" + std::to_string(i + 1) +
                  "(0) > lambda_" + std::to_string(i + 1) + "(1)");
  if (field.at0[0] < field.at1[0]) throw Error("interleave_coefficients: monotonicity violated, lambda_1(0) < lambda_1(1)");

  const std::size_t B = 2 * n;
  std::vector<std::vector<double>> w(B, std::vector<double>(grid.size(), 0.0));
  const SampledFunction& l1 = field.lambdas[0];
  const double l1_end = l1[M];
  for (int y = 0; y <= M; ++y) {
    const auto yy = static_cast<std::size_t>(y);
    double used = 0;
    for (std::size_t i = 1; i < n; ++i) {
      const SampledFunction& li = field.lambdas[i];
      w[2 * i - 2][yy] = li[y];
      double e = std::min(l1[y] - l1_end - used, li[M] - li[y]);
      e = std::max(0.0, e);
      w[2 * i - 1][yy] = e;
      used += e;
    }
    w[B - 2][yy] = std::max(0.0, l1[y] - used);
  }
  std::vector<Rational> e0(B, Rational(0)), e1(B, Rational(0));
  for (int end = 0; end < 2; ++end) {
    const auto& at = end == 0 ? field.at0 : field.at1;
    auto& ex = end == 0 ? e0 : e1;
    Rational used(0);
    for (std::size_t i = 1; i < n; ++i) {
      ex[2 * i - 2] = at[i];
      Rational e = min(at[0] - field.at1[0] - used, field.at1[i] - at[i]);
      if (e < Rational(0)) e = Rational(0);
      ex[2 * i - 1] = e;
      used += e;
    }
    ex[B - 2] = at[0] - used;
    if (ex[B - 2] < Rational(0)) throw Error("interleave_coefficients: negative remainder width");
  }
  BlockSchedule s{grid, {}, true};
  for (std::size_t j = 0; j < B; ++j) {
    w[j][0] = e0[j].to_double();
    w[j][static_cast<std::size_t>(M)] = e1[j].to_double();
    const bool odd = j % 2 == 0 && j + 2 < B;
    const std::size_t cell = odd ? j / 2 + 1 : 0;
    const int point = odd ? field.partition.representative(cell) : 0;
    s.blocks.push_back(Block{SampledFunction(grid, std::move(w[j])), point, cell, e0[j], e1[j]});
  }
  return s;
}

namespace detail {

inline double tmin(double a, double b) { return std::min(a, b); }
inline double tmax(double a, double b) { return std::max(a, b); }
inline Rational tmin(const Rational& a, const Rational& b) { return min(a, b); }
inline Rational tmax(const Rational& a, const Rational& b) { return max(a, b); }

template <class T>
struct Trapezoid {
  T x, G0, G1, f, g, plateau;

  Trapezoid(const T& x_, const T& G0_, const T& G1_, const T& delta) : x(x_), G0(G0_), G1(G1_) {
    const T two(2);
    const T mid = (G0 + G1) / two;
    f = tmin(G0 + delta, mid);
    g = tmax(G1 - delta, mid);
    plateau = tmin(x, x * (G1 - G0) / (two * delta));
  }

  T operator()(const T& t, const T& delta) const {
    if (t < f) return x * (t - G0) / delta;
    if (t <= g) return plateau;
    return x * (G1 - t) / delta;
  }
};

}  // namespace detail

/// h(y,t): block j occupies [G_{j-1}(y), G_j(y)] with a trapezoid of height x'_j.
class TransportProfile {
 public:
  TransportProfile(BlockSchedule schedule, Rational delta) : schedule_(std::move(schedule)), delta_(delta) {
    if (!(delta_ > Rational(0))) throw Error("build_profile: delta must be positive");
    delta_d_ = delta_.to_double();
    const Grid& grid = schedule_.grid;
    const int M = grid.M();
    const std::size_t B = schedule_.blocks.size();
    G_.assign(grid.size(), std::vector<double>(B + 1, 0.0));
    for (int end = 0; end < 2; ++end) {
      auto& ge = Gx_[static_cast<std::size_t>(end)];
      ge.assign(B + 1, Rational(0));
      for (std::size_t j = 0; j < B; ++j) {
        const Rational& w = end == 0 ? schedule_.blocks[j].width0 : schedule_.blocks[j].width1;
        ge[j + 1] = ge[j] + w;
      }
      if (ge[B] != Rational(1)) throw Error("build_profile: endpoint widths sum to " + ge[B].str() + ", not 1");
    }
    for (int y = 0; y <= M; ++y) {
      auto& g = G_[static_cast<std::size_t>(y)];
      if (y == 0 || y == M) {
        const auto& ge = Gx_[y == 0 ? 0 : 1];
        for (std::size_t j = 0; j <= B; ++j) g[j] = ge[j].to_double();
        continue;
      }
      for (std::size_t j = 0; j < B; ++j) g[j + 1] = std::min(1.0, g[j] + schedule_.blocks[j].width[y]);
      g[B] = 1.0;
    }
  }

  const BlockSchedule& schedule() const noexcept { return schedule_; }
  const Rational& delta() const noexcept { return delta_; }
  double delta_value() const noexcept { return delta_d_; }
  const Grid& grid() const noexcept { return schedule_.grid; }
  std::size_t blocks() const noexcept { return schedule_.blocks.size(); }
  std::span<const double> breakpoints(int y) const noexcept { return G_[static_cast<std::size_t>(y)]; }
  std::span<const Rational> exact_breakpoints(int end) const noexcept { return Gx_[static_cast<std::size_t>(end)]; }

  double point(std::size_t b) const noexcept { return grid().point(schedule_.blocks[b].point); }
  Rational exact_point(std::size_t b) const { return grid().exact_point(schedule_.blocks[b].point); }

  /// Block containing t at grid row y (G_b <= t < G_{b+1}, last positive block at t = 1).
  std::size_t block_at(int y, double t) const noexcept {
    const auto& g = G_[static_cast<std::size_t>(y)];
    return locate(g, t);
  }

  std::size_t exact_block_at(int end, const Rational& t) const {
    return locate(Gx_[static_cast<std::size_t>(end)], t);
  }

  detail::Trapezoid<double> trapezoid(int y, std::size_t b) const {
    const auto& g = G_[static_cast<std::size_t>(y)];
    return detail::Trapezoid<double>(point(b), g[b], g[b + 1], delta_d_);
  }

  detail::Trapezoid<Rational> exact_trapezoid(int end, std::size_t b) const {
    const auto& g = Gx_[static_cast<std::size_t>(end)];
    return detail::Trapezoid<Rational>(exact_point(b), g[b], g[b + 1], delta_);
  }

  double h(int y, double t) const {
    std::size_t b = block_at(y, t);
    return trapezoid(y, b)(t, delta_d_);
  }

  /// h(0,t) for end = 0 and h(1,t) for end = 1, in exact arithmetic.
  Rational h_exact(int end, const Rational& t) const {
    std::size_t b = exact_block_at(end, t);
    return exact_trapezoid(end, b)(t, delta_);
  }

 private:
  template <class T>
  static std::size_t locate(const std::vector<T>& g, const T& t) {
    const std::size_t B = g.size() - 1;
    auto it = std::upper_bound(g.begin(), g.end(), t);
    auto idx = static_cast<std::size_t>(std::distance(g.begin(), it));
    if (idx == 0) idx = 1;
    std::size_t b = idx - 1;
    if (b >= B) {
      b = B - 1;
      while (b > 0 && !(g[b] < g[b + 1])) --b;
    }
    return b;
  }

  BlockSchedule schedule_;
  Rational delta_;
  double delta_d_ = 0;
  std::vector<std::vector<double>> G_;
  std::array<std::vector<Rational>, 2> Gx_;
};

inline TransportProfile build_profile(const BlockSchedule& schedule, const Rational& delta) {
  trace::note("build_profile");
  return TransportProfile(schedule, delta);
}

/// Unit fractions 1/m, m = 1, 2, 5, 10, 20, 50, ...
inline std::vector<std::int64_t> unit_ladder(std::int64_t cap) {
  std::vector<std::int64_t> out;
  for (std::int64_t p = 1; p <= cap; p *= 10) {
    for (std::int64_t c : {1, 2, 5}) {
      if (p * c > cap) return out;
      out.push_back(p * c);
    }
    if (p > cap / 10) break;
  }
  return out;
}

struct DeltaRequest {
  Mode mode = Mode::same;
  double eps = 0;
  double sup_norm = 0;
  std::size_t n = 2;
  int tau = 0;
  std::int64_t a = 1, k = 1, b = 1;
  const RationalSnapshot* snapshot = nullptr;
  std::int64_t cap = kDefaultN1Cap;
};

/// Number of interior cells carrying snapshot mass.
inline int interior_support(const RationalSnapshot& snap) {
  int tau = 0;
  for (std::size_t i = 1; i + 1 < snap.n(); ++i)
    if (snap.r[i] != Rational(0)) ++tau;
  return tau;
}

inline CrossCase cross_case(const RationalSnapshot& snap) {
  return snap.r.back() == Rational(0) ? CrossCase::I : CrossCase::II;
}

namespace detail {

inline bool cross_delta_ok(const DeltaRequest& q, std::int64_t m) {
  const RationalSnapshot& sn = *q.snapshot;
  const Rational d(1, m);
  const double dd = 1.0 / static_cast<double>(m);
  const double quarter = q.eps / 4;
  const auto n = static_cast<double>(q.n);
  const std::int64_t a = q.a, k = q.k, b = q.b, tau = q.tau;
  if (!(8 * n * dd * q.sup_norm < quarter)) return false;
  if (!(4 * dd * static_cast<double>((1 + tau) * (b + k) * b) * q.sup_norm <= quarter)) return false;
  const CrossCase cc = cross_case(sn);
  const std::size_t last = sn.n() - 1;
  const Rational& r1 = sn.r.front();
  const Rational& s1 = sn.s.front();
  const Rational& rn = sn.r[last];
  const Rational& sn_ = sn.s[last];
  auto R = [](std::int64_t v) { return Rational(v); };
  for (std::size_t i = 1; i < last; ++i) {
    if (sn.r[i] == Rational(0)) continue;
    const Rational need = R(3 * b * (b - a)) * d;
    if (cc == CrossCase::I ? !(need <= sn.r[i]) : !(need < sn.r[i])) return false;
    if (sn.r[i] < R(2 * (b - a) * b) * d) return false;
    if (sn.s[i] - sn.r[i] < R(2 * (b - a) * k) * d) return false;
  }
  if (cc == CrossCase::I) {
    if (!(R(3 * (a + k) * b * tau) * d <= r1)) return false;
    if (!(R(3 * (b + k) * a * tau) * d <= sn_)) return false;
    if (tau >= 1) {
      if (sn_ < R(2 * a * tau * (b + k)) * d) return false;
    } else {
      if (sn_ < R(2 * a) * d) return false;
      if (s1 < R(2 * (b - a)) * d) return false;
    }
  } else {
    if (!(R(3 * (b - a) * b) * d < rn)) return false;
    if (!(R(3 * (a + k) * (b + b * tau)) * d < r1)) return false;
    if (!(R(3 * (b + k) * (a * tau + b)) * d < sn_)) return false;
    if (rn < R(2 * (b - a) * b) * d) return false;
    if (sn_ - rn < R(2 * (a * b * tau + a * k * tau + b * k + a * b)) * d) return false;
  }
  const Rational two_d = R(2) * d;
  for (std::size_t i = 1; i < sn.n(); ++i) {
    for (const Rational& wdt : {sn.r[i], sn.s[i] - sn.r[i], sn.s[i]})
      if (wdt > Rational(0) && wdt < two_d) return false;
  }
  if (s1 > Rational(0) && s1 < two_d) return false;
  return true;
}

inline bool same_delta_ok(const DeltaRequest& q, std::int64_t m) {
  const double dd = 1.0 / static_cast<double>(m);
  const double quarter = q.eps / 4;
  if (m < 4) return false;
  if (!(4 * static_cast<double>(q.n) * dd * q.sup_norm < quarter)) return false;
  return 5 * dd * q.sup_norm <= quarter;
}

}  // namespace detail

/// Largest delta = 1/m on the 1-2-5 ladder meeting every constraint of the mode.
inline Rational choose_delta(const DeltaRequest& q) {
  trace::note("choose_delta");
  if (!(q.eps > 0)) throw Error("choose_delta: eps must be positive");
  if (q.mode == Mode::cross && q.snapshot == nullptr) throw Error("choose_delta: cross mode needs a snapshot");
  for (std::int64_t m : unit_ladder(q.cap)) {
    bool ok = q.mode == Mode::same ? detail::same_delta_ok(q, m) : detail::cross_delta_ok(q, m);
    if (ok) return Rational(1, m);
  }
  throw Error("choose_delta: no feasible delta above 1/" + std::to_string(q.cap) +
              " (masses too small; refine partition)");
}

/// Ascending disjoint inclusive ranges of t-indices.
struct IndexSet {
  std::vector<std::pair<std::int64_t, std::int64_t>> ranges;

  void add(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) return;
    if (!ranges.empty()) {
      if (lo <= ranges.back().second) throw Error("index set: ranges must be ascending and disjoint");
      if (lo == ranges.back().second + 1) {
        ranges.back().second = hi;
        return;
      }
    }
    ranges.emplace_back(lo, hi);
  }

  std::int64_t size() const noexcept {
    std::int64_t s = 0;
    for (auto [lo, hi] : ranges) s += hi - lo + 1;
    return s;
  }

  bool contains(std::int64_t d) const noexcept {
    auto it = std::upper_bound(ranges.begin(), ranges.end(), d,
                               [](std::int64_t v, const auto& r) { return v < r.first; });
    if (it == ranges.begin()) return false;
    --it;
    return d <= it->second;
  }

  /// The pos-th smallest element.
  std::int64_t at(std::int64_t pos) const {
    for (auto [lo, hi] : ranges) {
      if (pos <= hi - lo) return lo + pos;
      pos -= hi - lo + 1;
    }
    throw Error("index set: position out of range");
  }
};

inline IndexSet select_indices_same(std::int64_t N1, const Rational& delta) {
  trace::note("select_indices_same");
  if (!(delta < Rational(1, 2))) throw Error("select_indices_same: delta must be below 1/2");
  if (Rational(N1) * delta < Rational(1)) throw Error("select_indices_same: N1 * delta < 1");
  const std::int64_t lo = (Rational(N1) * delta).ceil();
  const std::int64_t hi = (Rational(N1) * (Rational(1) - delta)).floor();
  if (lo > hi) throw Error("select_indices_same: empty index set");
  IndexSet D;
  D.add(lo, hi);
  return D;
}

/// Excluded counts per cell: m at y = 0, z at y = 1.
struct ExclusionCounts {
  std::vector<std::int64_t> m;
  std::vector<std::int64_t> z;
};

/// Exclusion tallies per cell for window w = delta N1. active[i] marks interior cells with mass.
inline ExclusionCounts exclusion_counts(CrossCase cc, const std::vector<bool>& active, std::int64_t tau,
                                        std::int64_t a, std::int64_t k, std::int64_t b, std::int64_t w) {
  const std::size_t n = active.size();
  ExclusionCounts e{std::vector<std::int64_t>(n, 0), std::vector<std::int64_t>(n, 0)};
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (!active[i]) continue;
    e.m[i] = 2 * w * (b - a) * b;
    e.z[i] = 2 * w * (b - a) * (b + k);
  }
  const std::size_t last = n - 1;
  if (cc == CrossCase::I) {
    if (tau >= 1) {
      e.z[last] = 2 * w * a * tau * (b + k);
      e.m[0] = 2 * w * (a + k) * tau * b;
    } else {
      e.z[last] = 2 * w * a;
      e.z[0] = 2 * w * (b - a);
      e.m[0] = 2 * w * b;
    }
  } else {
    e.m[last] = 2 * w * (b - a) * b;
    e.z[last] = 2 * w * (a * tau + b) * (b + k);
    e.m[0] = 2 * w * b * (a + k) * (1 + tau);
  }
  return e;
}

struct CrossSelection {
  IndexSet D;
  ExclusionCounts counts;
  CrossCase cross_case = CrossCase::none;
  int tau = 0;
};

inline CrossSelection select_indices_cross(const TransportProfile& profile, const RationalSnapshot& snap,
                                           std::int64_t N1, const Rational& delta, int tau, std::int64_t a,
                                           std::int64_t k, std::int64_t b) {
  trace::note("select_indices_cross");
  if (a == b) throw Error("select_indices_cross: alpha = beta, use select_indices_same");
  if (b < a) throw Error("select_indices_cross: infeasible (b < a)");
  if (!profile.schedule().interleaved) throw Error("select_indices_cross: profile must come from an interleaved schedule");
  const std::size_t n = snap.n();
  const Rational RN(N1);
  const Rational wr = RN * delta;
  if (!wr.is_integer()) throw Error("select_indices_cross: N1 * delta is not an integer");
  const std::int64_t w = wr.num();
  std::vector<std::int64_t> R(n), S(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rational rr = RN * snap.r[i], ss = RN * snap.s[i];
    if (!rr.is_integer() || !ss.is_integer()) throw Error("select_indices_cross: N1 r_i or N1 s_i is not an integer");
    R[i] = rr.num();
    S[i] = ss.num();
  }
  if (interior_support(snap) != tau) throw Error("select_indices_cross: tau does not match the snapshot");
  const CrossCase cc = cross_case(snap);
  std::vector<bool> active(n, false);
  for (std::size_t i = 1; i + 1 < n; ++i) active[i] = snap.r[i] != Rational(0);
  CrossSelection sel;
  sel.cross_case = cc;
  sel.tau = tau;
  sel.counts = exclusion_counts(cc, active, tau, a, k, b, w);

  struct Region {
    std::int64_t lo, hi;
    int point0, point1;  // expected grid indices of h(0,t) and h(1,t)
  };
  std::vector<Region> regions;
  const int M = profile.grid().M();
  auto keep = [&](std::int64_t lo, std::int64_t hi, std::int64_t block_lo, std::int64_t block_hi, int p0, int p1,
                  const char* what, std::size_t cell) {
    if (lo > hi + 1 || lo < block_lo || hi > block_hi)
      throw Error(std::string("select_indices_cross: exclusion count exceeds block width (") + what + ", cell " +
                  std::to_string(cell + 1) + ")");
    if (lo <= hi) regions.push_back(Region{lo, hi, p0, p1});
  };
  std::int64_t P = 0;
  const std::size_t last = n - 1;
  const auto& reps = profile.schedule();
  auto rep_of = [&](std::size_t cell) {
    for (const auto& blk : reps.blocks)
      if (blk.cell == cell && blk.point != 0) return blk.point;
    throw Error("select_indices_cross: no block for cell " + std::to_string(cell + 1));
  };
  for (std::size_t i = 1; i < n; ++i) {
    if (S[i] == 0) continue;
    const int x = rep_of(i);
    const std::int64_t Ri = P + R[i], Si = P + S[i];
    if (i < last) {
      const std::int64_t E = w * (b - a) * b;
      keep(P + E + 1, Ri - E, P + 1, Ri, x, x, "(m,m)", i);
      keep(Ri + 1, Si - 2 * w * (b - a) * k, Ri + 1, Si, 0, x, "(0,m)", i);
    } else if (cc == CrossCase::II) {
      const std::int64_t E = w * (b - a) * b;
      const std::int64_t Z = 2 * w * (a * b * tau + a * k * tau + b * k + a * b);
      keep(P + E + 1, Ri - E, P + 1, Ri, x, x, "(n,n)", i);
      keep(Ri + 1, Si - Z, Ri + 1, Si, 0, x, "(0,n)", i);
    } else {
      const std::int64_t H = tau >= 1 ? w * a * tau * (b + k) : w * a;
      keep(P + H + 1, Si - H, P + 1, Si, 0, x, "(0,n)", i);
    }
    P += S[i];
  }
  if (P + S[0] != N1) throw Error("select_indices_cross: snapshot does not fill [0,1]");
  const std::int64_t skip = (cc == CrossCase::I && tau == 0) ? 2 * w * (b - a) : 0;
  keep(P + skip + 1, N1, P + 1, N1, 0, 0, "(0,0)", 0);
  (void)M;

  for (const Region& rg : regions) {
    const Rational x0 = profile.grid().exact_point(rg.point0);
    const Rational x1 = profile.grid().exact_point(rg.point1);
    for (std::int64_t d = rg.lo; d <= rg.hi; ++d) {
      const Rational t(d, N1);
      if (profile.h_exact(0, t) != x0 || profile.h_exact(1, t) != x1)
        throw Error("select_indices_cross: plateau-exactness violated at index " + std::to_string(d));
    }
    sel.D.add(rg.lo, rg.hi);
  }
  if (sel.D.size() == 0) throw Error("select_indices_cross: empty index set");
  return sel;
}

/// Run of consecutive positions sharing a value in one grid column.
struct Segment {
  std::int64_t pos;
  double value;
};

struct ExactSegment {
  std::int64_t pos;
  Rational value;
};

namespace detail {

template <class T, class S, class Eval, class Trap, class Locate>
std::vector<S> column_impl(const IndexSet& D, Eval eval, Trap trap, Locate locate) {
  std::vector<S> segs;
  auto emit = [&](std::int64_t pos, const T& v) {
    if (segs.empty() || !(segs.back().value == v)) segs.push_back(S{pos, v});
  };
  std::int64_t offset = 0;
  for (auto [lo, hi] : D.ranges) {
    std::int64_t d = lo;
    while (d <= hi) {
      auto [b, pl_lo, pl_hi, value] = trap(locate(d));
      if (d >= pl_lo && d <= pl_hi) {
        const std::int64_t e = std::min(hi, pl_hi);
        if (eval(d) == value && eval(e) == value) {
          emit(offset + (d - lo), value);
          d = e + 1;
          continue;
        }
      }
      (void)b;
      emit(offset + (d - lo), eval(d));
      ++d;
    }
    offset += hi - lo + 1;
  }
  return segs;
}

}  // namespace detail

/// Column y of the maps h(y, d/N1), d in D, as value runs over positions.
inline std::vector<Segment> profile_column(const TransportProfile& P, int y, const IndexSet& D, std::int64_t N1) {
  const double n1 = static_cast<double>(N1);
  auto eval = [&](std::int64_t d) { return P.h(y, static_cast<double>(d) / n1); };
  auto locate = [&](std::int64_t d) { return P.block_at(y, static_cast<double>(d) / n1); };
  auto trap = [&](std::size_t b) {
    auto tz = P.trapezoid(y, b);
    auto pl_lo = static_cast<std::int64_t>(std::ceil(tz.f * n1)) + 2;
    auto pl_hi = static_cast<std::int64_t>(std::floor(tz.g * n1)) - 2;
    return std::tuple<std::size_t, std::int64_t, std::int64_t, double>{b, pl_lo, pl_hi, tz.plateau};
  };
  return detail::column_impl<double, Segment>(D, eval, trap, locate);
}

/// Exact column at y = 0 (end = 0) or y = 1 (end = 1).
inline std::vector<ExactSegment> profile_column_exact(const TransportProfile& P, int end, const IndexSet& D,
                                                      std::int64_t N1) {
  const Rational RN(N1);
  auto eval = [&](std::int64_t d) { return P.h_exact(end, Rational(d, N1)); };
  auto locate = [&](std::int64_t d) { return P.exact_block_at(end, Rational(d, N1)); };
  auto trap = [&](std::size_t b) {
    auto tz = P.exact_trapezoid(end, b);
    return std::tuple<std::size_t, std::int64_t, std::int64_t, Rational>{b, (tz.f * RN).ceil(), (tz.g * RN).floor(),
                                                                          tz.plateau};
  };
  return detail::column_impl<Rational, ExactSegment>(D, eval, trap, locate);
}

struct FamilyMeta {
  Mode mode = Mode::same;
  CrossCase cross_case = CrossCase::none;
  std::int64_t N1 = 0;
  Rational delta;
  Rational delta0;
  Rational alpha;
  Rational beta;
  std::int64_t a = 1, k = 1, b = 1;
  int tau = 0;
  std::vector<int> representatives;  // grid indices x_1..x_n
  ExclusionCounts exclusions;
};

/// N eigenvalue maps y -> h(y, t_d), stored column-wise.
class EigenvalueFamily {
 public:
  EigenvalueFamily(Grid grid, IndexSet D, std::vector<std::vector<Segment>> columns,
                   std::vector<ExactSegment> exact0, std::vector<ExactSegment> exact1)
      : grid_(grid), D_(std::move(D)), columns_(std::move(columns)), exact0_(std::move(exact0)),
        exact1_(std::move(exact1)) {
    if (columns_.size() != grid_.size()) throw Error("eigenvalue family: one column per grid point required");
    N_ = D_.size();
    for (const auto* col : {&exact0_, &exact1_})
      if (col->empty() || col->front().pos != 0) throw Error("eigenvalue family: endpoint column must start at 0");
    for (const auto& col : columns_)
      if (col.empty() || col.front().pos != 0) throw Error("eigenvalue family: column must start at 0");
  }

  FamilyMeta meta;

  const Grid& grid() const noexcept { return grid_; }
  std::int64_t N() const noexcept { return N_; }
  const IndexSet& indices() const noexcept { return D_; }
  std::span<const Segment> column(int y) const noexcept { return columns_[static_cast<std::size_t>(y)]; }
  std::span<const ExactSegment> exact_column(int end) const noexcept { return end == 0 ? exact0_ : exact1_; }

  std::int64_t segment_length(std::span<const Segment> col, std::size_t i) const noexcept {
    return (i + 1 < col.size() ? col[i + 1].pos : N_) - col[i].pos;
  }
  std::int64_t segment_length(std::span<const ExactSegment> col, std::size_t i) const noexcept {
    return (i + 1 < col.size() ? col[i + 1].pos : N_) - col[i].pos;
  }

  double value(std::int64_t pos, int y) const {
    auto col = column(y);
    auto it = std::upper_bound(col.begin(), col.end(), pos, [](std::int64_t p, const Segment& s) { return p < s.pos; });
    return std::prev(it)->value;
  }

  Rational exact_value(std::int64_t pos, int end) const {
    auto col = exact_column(end);
    auto it = std::upper_bound(col.begin(), col.end(), pos,
                               [](std::int64_t p, const ExactSegment& s) { return p < s.pos; });
    return std::prev(it)->value;
  }

  /// The map at position pos, i.e. y -> h(y, D[pos]/N1).
  SampledFunction map(std::int64_t pos) const {
    if (pos < 0 || pos >= N_) throw Error("eigenvalue family: position out of range");
    std::vector<double> v(grid_.size());
    for (int y = 0; y <= grid_.M(); ++y) v[static_cast<std::size_t>(y)] = value(pos, y);
    return SampledFunction(grid_, std::move(v));
  }

  /// Copy with map pos replaced; exact endpoint values given separately.
  EigenvalueFamily with_map(std::int64_t pos, const SampledFunction& f, const Rational& at0,
                            const Rational& at1) const {
    if (pos < 0 || pos >= N_) throw Error("eigenvalue family: position out of range");
    EigenvalueFamily out = *this;
    for (int y = 0; y <= grid_.M(); ++y) out.columns_[static_cast<std::size_t>(y)] = splice(columns_[static_cast<std::size_t>(y)], pos, f[y]);
    out.exact0_ = splice(exact0_, pos, at0);
    out.exact1_ = splice(exact1_, pos, at1);
    out.columns_.front() = splice(columns_.front(), pos, at0.to_double());
    out.columns_.back() = splice(columns_.back(), pos, at1.to_double());
    return out;
  }

  /// Endpoint tallies (grid value -> count).
  std::map<Rational, std::int64_t> tally(int end) const {
    std::map<Rational, std::int64_t> t;
    auto col = exact_column(end);
    for (std::size_t i = 0; i < col.size(); ++i) t[col[i].value] += segment_length(col, i);
    return t;
  }

 private:
  template <class S, class V>
  std::vector<S> splice(const std::vector<S>& col, std::int64_t pos, const V& v) const {
    std::vector<S> out;
    for (std::size_t i = 0; i < col.size(); ++i) {
      const std::int64_t b = col[i].pos;
      const std::int64_t e = (i + 1 < col.size() ? col[i + 1].pos : N_);
      if (pos < b || pos >= e) {
        out.push_back(col[i]);
        continue;
      }
      if (pos > b) out.push_back(S{b, col[i].value});
      out.push_back(S{pos, v});
      if (pos + 1 < e) out.push_back(S{pos + 1, col[i].value});
    }
    return out;
  }

  Grid grid_;
  IndexSet D_;
  std::int64_t N_ = 0;
  std::vector<std::vector<Segment>> columns_;
  std::vector<ExactSegment> exact0_;
  std::vector<ExactSegment> exact1_;
};

inline EigenvalueFamily assemble_family(const TransportProfile& profile, const IndexSet& D, std::int64_t N1,
                                        unsigned threads = 1) {
  trace::note("assemble_family");
  if (D.size() == 0) throw Error("assemble_family: empty index set");
  if (D.ranges.front().first < 1 || D.ranges.back().second > N1)
    throw Error("assemble_family: indices must lie in [1, N1]");
  const Grid& grid = profile.grid();
  const int M = grid.M();
  std::vector<std::vector<Segment>> cols(grid.size());
  parallel_for(grid.size() - 2, threads, [&](std::size_t i) {
    const int y = static_cast<int>(i) + 1;
    cols[static_cast<std::size_t>(y)] = profile_column(profile, y, D, N1);
  });
  auto e0 = profile_column_exact(profile, 0, D, N1);
  auto e1 = profile_column_exact(profile, 1, D, N1);
  auto to_double = [](const std::vector<ExactSegment>& ex) {
    std::vector<Segment> out;
    for (const auto& s : ex) out.push_back(Segment{s.pos, s.value.to_double()});
    return out;
  };
  cols.front() = to_double(e0);
  cols[static_cast<std::size_t>(M)] = to_double(e1);
  EigenvalueFamily fam(grid, D, std::move(cols), std::move(e0), std::move(e1));
  fam.meta.N1 = N1;
  fam.meta.delta = profile.delta();
  return fam;
}

}  // namespace markov_mimic
