#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "markov_mimic/error.hpp"
#include "markov_mimic/interval_core.hpp"
#include "markov_mimic/markov.hpp"
#include "markov_mimic/rational.hpp"
#include "markov_mimic/trace.hpp"

namespace markov_mimic {

/// mu_0(X_i) and mu_1(X_i) per cell.
struct CellMasses {
  std::vector<double> mu0;
  std::vector<double> mu1;

  std::size_t n() const noexcept { return mu0.size(); }

  void validate(double tol = 1e-12) const {
    if (mu0.size() != mu1.size() || mu0.size() < 2) throw Error("cell masses: need two vectors of equal length >= 2");
    for (const auto* v : {&mu0, &mu1}) {
      double s = 0;
      for (double m : *v) {
        if (m < -tol) throw Error("cell masses: negative entry");
        s += m;
      }
      if (std::fabs(s - 1.0) > tol) throw Error("cell masses: entries do not sum to 1");
    }
  }
};

inline CellMasses cell_masses(const DiscreteMeasure& mu0, const DiscreteMeasure& mu1, const CellPartition& part) {
  CellMasses m;
  for (const Cell& c : part.cells()) {
    m.mu0.push_back(mu0.mass(c.first, c.last));
    m.mu1.push_back(mu1.mass(c.first, c.last));
  }
  return m;
}

struct RelationResiduals {
  std::vector<double> interior;  // |mu0_i - beta mu1_i|, i = 2..n-1
  double boundary_pair = 0;      // |alpha mu0_1 + mu0_n - beta (alpha mu1_1 + mu1_n)|
  double first_cell = 0;         // |mu0_1 - beta mu1_1 - (1-beta)/(1-alpha)|
  double last_cell = 0;          // |mu0_n - beta mu1_n + alpha (1-beta)/(1-alpha)|

  double max() const noexcept {
    double m = std::max({boundary_pair, first_cell, last_cell});
    for (double r : interior) m = std::max(m, r);
    return m;
  }
};

inline RelationResiduals check_relations(const CellMasses& masses, const Rational& alpha, const Rational& beta) {
  trace::note("check_relations");
  const std::size_t n = masses.n();
  if (n < 2 || masses.mu1.size() != n) throw Error("check_relations: malformed masses");
  const double a = alpha.to_double();
  const double b = beta.to_double();
  const double c = ((Rational(1) - beta) / (Rational(1) - alpha)).to_double();
  RelationResiduals r;
  for (std::size_t i = 1; i + 1 < n; ++i) r.interior.push_back(std::fabs(masses.mu0[i] - b * masses.mu1[i]));
  const double m01 = masses.mu0.front(), m0n = masses.mu0.back();
  const double m11 = masses.mu1.front(), m1n = masses.mu1.back();
  r.boundary_pair = std::fabs(a * m01 + m0n - b * (a * m11 + m1n));
  r.first_cell = std::fabs(m01 - b * m11 - c);
  r.last_cell = std::fabs(m0n - b * m1n + a * c);
  return r;
}

struct FeasibilityVerdict {
  bool feasible = true;
  Rational forced_first_cell_mass;  // lower bound (1-beta)/(1-alpha) on mu0(X_1)
  std::string reason;
};

inline FeasibilityVerdict feasibility(const Rational& alpha, const Rational& beta) {
  trace::note("feasibility");
  for (const auto& r : {alpha, beta})
    if (!(r > Rational(0)) || !(r < Rational(1))) throw Error("feasibility: ratios must lie in (0,1)");
  FeasibilityVerdict v;
  v.forced_first_cell_mass = (Rational(1) - beta) / (Rational(1) - alpha);
  v.feasible = !(beta < alpha);
  if (!v.feasible)
    v.reason = "infeasible: beta < alpha; the first-cell relation forces mu0(X_1) >= (1-beta)/(1-alpha) = " +
               v.forced_first_cell_mass.str() + " > 1";
  else
    v.reason = "feasible: beta >= alpha";
  return v;
}

/// Exact r, s with Sum r = Sum s = 1 and the boundary relations holding exactly.
struct RationalSnapshot {
  std::vector<Rational> r;
  std::vector<Rational> s;
  Rational eta;
  std::int64_t lattice = 1;             // ceil(n / eta)
  std::vector<double> r_deviation;      // r_i - mu0_i
  std::vector<double> s_deviation;      // s_i - mu1_i
  bool first_cell_deviation_flag = false;  // |r_1 - mu0_1| > n eta

  std::size_t n() const noexcept { return r.size(); }

  std::int64_t common_denominator() const {
    std::int64_t L = 1;
    for (const auto& v : r) L = lcm_checked(L, v.den());
    for (const auto& v : s) L = lcm_checked(L, v.den());
    return L;
  }

  std::vector<Rational> scaled_r(std::int64_t N1) const { return scale(r, N1); }
  std::vector<Rational> scaled_s(std::int64_t N1) const { return scale(s, N1); }

 private:
  static std::vector<Rational> scale(const std::vector<Rational>& v, std::int64_t N1) {
    std::vector<Rational> out;
    for (const auto& x : v) out.push_back(x * Rational(N1));
    return out;
  }
};

inline RationalSnapshot rational_snapshot(const CellMasses& masses, const Rational& eta, const Rational& alpha,
                                          const Rational& beta) {
  trace::note("rational_snapshot");
  if (beta < alpha) throw Error("infeasible: beta < alpha");
  if (!(eta > Rational(0))) throw Error("rational_snapshot: eta must be positive");
  const std::size_t n = masses.n();
  if (n < 2 || masses.mu1.size() != n) throw Error("rational_snapshot: malformed masses");
  const Rational one(1);
  const Rational c = alpha * (one - beta) / (one - alpha);
  const std::int64_t D = (Rational(static_cast<std::int64_t>(n)) / eta).ceil();
  const std::int64_t qmax = std::min<std::int64_t>(D, 1000);
  const double etad = eta.to_double();

  RationalSnapshot snap;
  snap.eta = eta;
  snap.lattice = D;
  snap.s.assign(n, Rational(0));
  snap.r.assign(n, Rational(0));
  Rational tail(0);
  for (std::size_t i = 1; i < n; ++i) {
    const double mu = masses.mu1[i];
    auto exact = exact_rational(mu, qmax);
    Rational lo = exact ? *exact : ceil_to_lattice(mu, D);
    if (lo < Rational(0)) lo = Rational(0);
    if (i + 1 == n) {
      const Rational floor_n = c / beta;
      if (lo < floor_n) lo = floor_n;
      if (lo.to_double() > mu + etad + 1e-12)
        throw Error("rational_snapshot: r_n would be negative (mu1(X_n) + eta < " + floor_n.str() + ")");
    }
    snap.s[i] = lo;
    tail += lo;
  }
  snap.s[0] = one - tail;
  if (snap.s[0] < Rational(0)) throw Error("rational_snapshot: eta too large (s_1 would leave [0,1])");
  Rational rtail(0);
  for (std::size_t i = 1; i < n; ++i) {
    snap.r[i] = beta * snap.s[i];
    if (i + 1 == n) snap.r[i] -= c;
    rtail += snap.r[i];
  }
  snap.r[0] = one - rtail;
  if (snap.r[0] < Rational(0) || snap.r[0] > one)
    throw Error("rational_snapshot: eta too large (r_1 would leave [0,1])");
  for (std::size_t i = 0; i < n; ++i) {
    snap.r_deviation.push_back(snap.r[i].to_double() - masses.mu0[i]);
    snap.s_deviation.push_back(snap.s[i].to_double() - masses.mu1[i]);
  }
  snap.first_cell_deviation_flag = std::fabs(snap.r_deviation[0]) > static_cast<double>(n) * etad + 1e-9;
  return snap;
}

/// Interior counts c0_i = beta c1_i, and alpha c0_0 + c0_1 = beta (alpha c1_0 + c1_1), exactly.
inline bool boundary_count_identity(std::span<const std::int64_t> c0_interior, std::int64_t c0_0, std::int64_t c0_1,
                                    std::span<const std::int64_t> c1_interior, std::int64_t c1_0, std::int64_t c1_1,
                                    const Rational& alpha, const Rational& beta) {
  trace::note("boundary_count_identity");
  if (c0_interior.size() != c1_interior.size()) return false;
  for (std::size_t i = 0; i < c0_interior.size(); ++i)
    if (Rational(c0_interior[i]) != beta * Rational(c1_interior[i])) return false;
  return alpha * Rational(c0_0) + Rational(c0_1) == beta * (alpha * Rational(c1_0) + Rational(c1_1));
}

inline constexpr std::int64_t kDefaultN1Cap = 10'000'000;

/// Smallest multiple of lcm(den(delta), denominators) exceeding 1/(delta delta0).
inline std::int64_t select_modulus_N1(const Rational& delta, const Rational& delta0,
                                      std::span<const std::int64_t> denominators,
                                      std::int64_t cap = kDefaultN1Cap) {
  trace::note("select_modulus_N1");
  if (!(delta > Rational(0)) || !(delta0 > Rational(0)))
    throw Error("select_modulus_N1: delta and delta0 must be positive");
  std::int64_t L = delta.den();
  for (std::int64_t d : denominators) {
    if (d <= 0) throw Error("select_modulus_N1: denominators must be positive");
    if (d > cap) throw Error("select_modulus_N1: denominator " + std::to_string(d) + " exceeds cap " + std::to_string(cap));
    L = lcm_checked(L, d);
    if (L > cap) throw Error("select_modulus_N1: lcm " + std::to_string(L) + " exceeds cap " + std::to_string(cap));
  }
  const Rational T = Rational(1) / (delta * delta0);
  const std::int64_t q = (T / Rational(L)).floor() + 1;
  const std::int64_t N1 = detail::narrow(detail::i128(L) * q);
  if (N1 > cap)
    throw Error("select_modulus_N1: N1 = " + std::to_string(N1) + " exceeds cap " + std::to_string(cap) +
                " (delta or eta too aggressive)");
  return N1;
}

inline std::int64_t select_modulus_N1(const Rational& delta, double delta0, std::span<const std::int64_t> denominators,
                                      std::int64_t cap = kDefaultN1Cap) {
  auto exact = exact_rational(delta0, 1'000'000, 1e-15);
  if (!exact) throw Error("select_modulus_N1: delta0 is not a grid fraction");
  return select_modulus_N1(delta, *exact, denominators, cap);
}

}  // namespace markov_mimic
