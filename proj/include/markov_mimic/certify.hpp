#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "markov_mimic/construct.hpp"
#include "markov_mimic/error.hpp"
#include "markov_mimic/interval_core.hpp"
#include "markov_mimic/markov.hpp"
#include "markov_mimic/rational.hpp"
#include "markov_mimic/relations.hpp"
#include "markov_mimic/trace.hpp"

namespace markov_mimic {

struct SupErrorReport {
  double value = 0;                  // max over F
  std::vector<double> per_function;  // max over y, one per f
  std::vector<int> worst_y;
};

/// max over f, y of |phi(f)(y) - (1/N) Sum_d f(h_d(y))|.
inline SupErrorReport sup_error_report(const MarkovKernel& kernel, const EigenvalueFamily& family,
                                       std::span<const SampledFunction> F, unsigned threads = 1) {
  trace::note("sup_error");
  if (!(kernel.grid() == family.grid())) throw Error("sup_error: grid mismatch");
  const int M = family.grid().M();
  const double N = static_cast<double>(family.N());
  SupErrorReport rep;
  for (const auto& f : F) {
    if (!(f.grid() == family.grid())) throw Error("sup_error: grid mismatch");
    const SampledFunction pf = apply(kernel, f);
    std::vector<double> err(family.grid().size(), 0.0);
    parallel_for(family.grid().size(), threads, [&](std::size_t yy) {
      const int y = static_cast<int>(yy);
      auto col = family.column(y);
      double s = 0;
      for (std::size_t i = 0; i < col.size(); ++i)
        s += static_cast<double>(family.segment_length(col, i)) * f(col[i].value);
      err[yy] = std::fabs(pf[y] - s / N);
    });
    auto it = std::max_element(err.begin(), err.end());
    rep.per_function.push_back(*it);
    rep.worst_y.push_back(static_cast<int>(std::distance(err.begin(), it)));
    rep.value = std::max(rep.value, *it);
    (void)M;
  }
  return rep;
}

inline double sup_error(const MarkovKernel& kernel, const EigenvalueFamily& family, std::span<const SampledFunction> F,
                        unsigned threads = 1) {
  return sup_error_report(kernel, family, F, threads).value;
}

/// Counts of h_d(0) and h_d(1) per representative.
struct BoundaryTally {
  std::vector<int> representatives;  // grid indices
  std::vector<std::int64_t> c0;      // #{d : h_d(0) = x_i}
  std::vector<std::int64_t> c1;      // #{d : h_d(1) = x_i}
};

inline BoundaryTally boundary_tally(const EigenvalueFamily& family) {
  trace::note("boundary_tally");
  const auto& reps = family.meta.representatives;
  if (reps.empty()) throw Error("boundary_tally: family has no representatives");
  BoundaryTally t{reps, std::vector<std::int64_t>(reps.size(), 0), std::vector<std::int64_t>(reps.size(), 0)};
  const Grid& grid = family.grid();
  for (int end = 0; end < 2; ++end) {
    auto col = family.exact_column(end);
    auto& c = end == 0 ? t.c0 : t.c1;
    for (std::size_t i = 0; i < col.size(); ++i) {
      const Rational v = col[i].value * Rational(grid.M());
      std::optional<std::size_t> cell;
      if (v.is_integer())
        for (std::size_t j = 0; j < reps.size(); ++j)
          if (reps[j] == v.num()) cell = j;
      if (!cell)
        throw Error("boundary_tally: h(" + std::to_string(end) + ") = " + col[i].value.str() +
                    " is not a representative at index " + std::to_string(family.indices().at(col[i].pos)));
      c[*cell] += family.segment_length(col, i);
    }
  }
  return t;
}

struct BoundaryVerdict {
  bool holds = false;
  std::string detail;
};

/// Interior c0 = beta c1 and alpha c0(0) + c0(1) = beta (alpha c1(0) + c1(1)).
inline BoundaryVerdict certify_boundary(const BoundaryTally& t, const Rational& alpha, const Rational& beta) {
  trace::note("certify_boundary");
  const std::size_t n = t.representatives.size();
  if (n < 2) throw Error("certify_boundary: need at least two representatives");
  std::vector<std::int64_t> i0(t.c0.begin() + 1, t.c0.end() - 1), i1(t.c1.begin() + 1, t.c1.end() - 1);
  BoundaryVerdict v;
  v.holds = boundary_count_identity(i0, t.c0.front(), t.c0.back(), i1, t.c1.front(), t.c1.back(), alpha, beta);
  if (!v.holds) {
    for (std::size_t i = 1; i + 1 < n; ++i)
      if (Rational(t.c0[i]) != beta * Rational(t.c1[i])) {
        v.detail = "interior count mismatch at cell " + std::to_string(i + 1) + ": " + std::to_string(t.c0[i]) +
                   " != beta * " + std::to_string(t.c1[i]);
        return v;
      }
    const Rational lhs = alpha * Rational(t.c0.front()) + Rational(t.c0.back());
    const Rational rhs = beta * (alpha * Rational(t.c1.front()) + Rational(t.c1.back()));
    v.detail = "boundary identity fails: " + lhs.str() + " != " + rhs.str();
  } else {
    v.detail = "boundary identity holds exactly";
  }
  return v;
}

struct Certificate {
  double eps = 0;
  double sup_error = 0;
  std::vector<double> per_function;
  bool error_ok = false;
  BoundaryTally tally;
  BoundaryVerdict boundary;
  std::int64_t N = 0;
  std::int64_t N1 = 0;

  bool passed() const noexcept { return error_ok && boundary.holds; }
};

inline Certificate certify(const MarkovKernel& kernel, const EigenvalueFamily& family,
                           std::span<const SampledFunction> F, double eps, const Rational& alpha, const Rational& beta,
                           unsigned threads = 1) {
  Certificate c;
  c.eps = eps;
  auto rep = sup_error_report(kernel, family, F, threads);
  c.sup_error = rep.value;
  c.per_function = rep.per_function;
  c.error_ok = rep.value < eps;
  c.tally = boundary_tally(family);
  c.boundary = certify_boundary(c.tally, alpha, beta);
  c.N = family.N();
  c.N1 = family.meta.N1;
  return c;
}

/// Every (r, s) with denominators <= max_den, 0 <= s_i - mu1_i <= eta (i >= 2) and the snapshot relations exact.
inline std::vector<RationalSnapshot> snapshot_oracle(const CellMasses& masses, const Rational& alpha,
                                                     const Rational& beta, const Rational& eta,
                                                     std::int64_t max_den = 50) {
  const std::size_t n = masses.n();
  if (n < 2 || n > 4) throw Error("snapshot_oracle: supports 2 <= n <= 4");
  if (max_den < 1 || max_den > 50) throw Error("snapshot_oracle: max_den must lie in [1, 50]");
  const Rational one(1);
  const Rational c = alpha * (one - beta) / (one - alpha);
  const double etad = eta.to_double();
  std::vector<std::vector<Rational>> cand(n);
  double total = 1;
  for (std::size_t i = 1; i < n; ++i) {
    for (std::int64_t q = 1; q <= max_den; ++q)
      for (std::int64_t p = 0; p <= q; ++p) {
        Rational v(p, q);
        if (v.den() != q) continue;
        const double gap = v.to_double() - masses.mu1[i];
        if (gap >= -1e-12 && gap <= etad + 1e-12) cand[i].push_back(v);
      }
    total *= static_cast<double>(cand[i].size());
  }
  if (total > 1e8) throw Error("snapshot_oracle: search space exceeds 1e8 tuples");
  std::vector<RationalSnapshot> found;
  for (std::size_t i = 1; i < n; ++i)
    if (cand[i].empty()) return found;
  std::vector<std::size_t> idx(n, 0);
  while (true) {
    RationalSnapshot s;
    s.eta = eta;
    s.r.assign(n, Rational(0));
    s.s.assign(n, Rational(0));
    Rational tail(0), rtail(0);
    for (std::size_t i = 1; i < n; ++i) {
      s.s[i] = cand[i][idx[i]];
      tail += s.s[i];
      s.r[i] = beta * s.s[i] - (i + 1 == n ? c : Rational(0));
      rtail += s.r[i];
    }
    s.s[0] = one - tail;
    s.r[0] = one - rtail;
    bool ok = true;
    for (std::size_t i = 0; ok && i < n; ++i)
      ok = s.r[i] >= Rational(0) && s.r[i] <= one && s.s[i] >= Rational(0) && s.s[i] <= one;
    if (ok) found.push_back(std::move(s));
    std::size_t i = 1;
    while (i < n && ++idx[i] == cand[i].size()) idx[i++] = 0;
    if (i == n) break;
  }
  return found;
}

}  // namespace markov_mimic
