#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "markov_mimic/error.hpp"
#include "markov_mimic/interval_core.hpp"
#include "markov_mimic/rational.hpp"
#include "markov_mimic/trace.hpp"

namespace markov_mimic {

/// {f : f(0) = alpha f(1)} with alpha = a/(a+k).
struct SubspaceSpec {
  Rational alpha;
  std::int64_t a = 1;
  std::int64_t k = 1;

  static SubspaceSpec from_alpha(const Rational& alpha) {
    if (!(alpha > Rational(0)) || !(alpha < Rational(1)))
      throw Error("subspace: alpha must lie in (0,1), got " + alpha.str());
    return SubspaceSpec{alpha, alpha.num(), alpha.den() - alpha.num()};
  }

  static SubspaceSpec from_integers(std::int64_t a, std::int64_t k) {
    if (a <= 0 || k <= 0) throw Error("subspace: a and k must be positive");
    return SubspaceSpec{Rational(a, a + k), a, k};
  }

  double alpha_value() const noexcept { return alpha.to_double(); }
};

struct IntegerRealization {
  std::int64_t a;
  std::int64_t k;
  std::int64_t b;
};

/// Common k with alpha = a/(a+k), beta = b/(b+k).
inline IntegerRealization realize_integers(const Rational& alpha, const Rational& beta) {
  trace::note("realize_integers");
  for (const auto& r : {alpha, beta})
    if (!(r > Rational(0)) || !(r < Rational(1)))
      throw Error("realize_integers: ratios must lie in (0,1), got " + r.str());
  if (beta < alpha) throw Error("infeasible: beta < alpha");
  Rational ra = alpha / (Rational(1) - alpha);
  Rational rb = beta / (Rational(1) - beta);
  std::int64_t k = lcm_checked(ra.den(), rb.den());
  Rational a = ra * Rational(k);
  Rational b = rb * Rational(k);
  return IntegerRealization{a.num(), k, b.num()};
}

inline bool is_member(const SampledFunction& f, double alpha) {
  return std::fabs(f.front() - alpha * f.back()) <= 1e-12 * (1.0 + std::fabs(f.back()));
}

struct Decomposition {
  double lambda;
  SampledFunction member;
};

/// f = lambda + g with g in the subspace.
inline Decomposition decompose(const SampledFunction& f, const SubspaceSpec& spec) {
  trace::note("decompose");
  const double alpha = spec.alpha_value();
  const double lambda = (f.front() - alpha * f.back()) / (1.0 - alpha);
  SampledFunction g = f - lambda;
  g = g.with_value(0, alpha * g.back());
  return Decomposition{lambda, std::move(g)};
}

enum class TestKind { lower, upper };

inline const char* to_string(TestKind k) { return k == TestKind::lower ? "lower" : "upper"; }

/// Grid index a test-function parameter snaps to.
inline int snap_test_param(TestKind kind, double param, const Grid& grid) {
  const int M = grid.M();
  if (kind == TestKind::lower) {
    if (!(param > 0) || param > 1) throw Error("test_function: lower parameter must lie in (0,1]");
    return std::clamp(grid.nearest_index(param), 1, M);
  }
  if (param < 0 || !(param < 1)) throw Error("test_function: upper parameter must lie in [0,1)");
  return std::clamp(grid.nearest_index(param), 0, M - 1);
}

/// Lower: alpha at 0 rising to 1 at delta. Upper: 1 up to 1-sigma rising to 1/alpha at 1.
inline SampledFunction test_function(TestKind kind, double param, const SubspaceSpec& spec, const Grid& grid) {
  trace::note("test_function");
  const int M = grid.M();
  const double alpha = spec.alpha_value();
  const int j = snap_test_param(kind, param, grid);
  std::vector<double> v(grid.size());
  if (kind == TestKind::lower) {
    for (int i = 0; i <= M; ++i)
      v[i] = i >= j ? 1.0 : alpha + (1.0 - alpha) * static_cast<double>(i) / j;
    v[0] = alpha * v[M];
  } else {
    const double top = 1.0 / alpha;
    const int knee = M - j;
    for (int i = 0; i <= M; ++i)
      v[i] = i <= knee ? 1.0 : 1.0 + (top - 1.0) * static_cast<double>(i - knee) / j;
    v[M] = top;
  }
  return SampledFunction(grid, std::move(v));
}

using LinearMap = std::function<SampledFunction(const SampledFunction&)>;

namespace detail {

inline SampledFunction hat(const Grid& grid, int i) {
  std::vector<double> v(grid.size(), 0.0);
  v[static_cast<std::size_t>(i)] = 1.0;
  return SampledFunction(grid, std::move(v));
}

inline SampledFunction subspace_ramp(const SubspaceSpec& spec, const Grid& grid) {
  const double alpha = spec.alpha_value();
  return SampledFunction::from(grid, [alpha](double x) { return alpha + (1.0 - alpha) * x; });
}

}  // namespace detail

/// phi~(f) = lambda + phi(g). Linearity is probed on hats and the ramp alpha + (1-alpha)x.
inline LinearMap extend_map(LinearMap phi_sub, const SubspaceSpec& spec, const Grid& grid,
                            std::uint64_t seed = 0) {
  trace::note("extend_map");
  std::mt19937_64 rng(seed);
  const int M = grid.M();
  std::uniform_int_distribution<int> pick(0, M - 1);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  auto element = [&](int idx) {
    return idx == 0 ? detail::subspace_ramp(spec, grid) : detail::hat(grid, idx);
  };
  SampledFunction zero = phi_sub(SampledFunction::constant(grid, 0.0));
  if (zero.sup_norm() > 1e-12) throw Error("extend_map: nonlinearity detected (phi(0) != 0)");
  for (int probe = 0; probe < 8; ++probe) {
    SampledFunction u = element(pick(rng));
    SampledFunction v = element(pick(rng));
    double c1 = coef(rng), c2 = coef(rng);
    SampledFunction lhs = phi_sub(u * c1 + v * c2);
    SampledFunction rhs = phi_sub(u) * c1 + phi_sub(v) * c2;
    double scale = 1.0 + lhs.sup_norm() + rhs.sup_norm();
    if (sup_distance(lhs, rhs) > 1e-9 * scale)
      throw Error("extend_map: nonlinearity detected on spanning set");
  }
  return [phi = std::move(phi_sub), spec](const SampledFunction& f) {
    Decomposition d = decompose(f, spec);
    return phi(d.member) + d.lambda;
  };
}

struct ExtendibilityReport {
  bool extendible = true;
  double sup_lower = 0;  // max over lower tests and y of phi(e)(y)
  double inf_upper = 0;  // min over upper tests and y of phi(gamma)(y)
  double slack = 0;      // one grid step
  std::optional<SampledFunction> witness;
  std::optional<TestKind> witness_kind;
  double witness_param = 0;
};

/// Sweeps every grid-snapped lower and upper test function.
inline ExtendibilityReport check_extendibility(const LinearMap& phi_sub, const SubspaceSpec& spec,
                                               const Grid& grid) {
  trace::note("check_extendibility");
  const int M = grid.M();
  const double tol = 1e-12;
  ExtendibilityReport rep;
  rep.slack = 1.0 / M;
  rep.sup_lower = -std::numeric_limits<double>::infinity();
  rep.inf_upper = std::numeric_limits<double>::infinity();
  double worst = 0;
  for (int j = 1; j <= M; ++j) {
    double p = grid.point(j);
    SampledFunction e = test_function(TestKind::lower, p, spec, grid);
    double hi = phi_sub(e).max();
    rep.sup_lower = std::max(rep.sup_lower, hi);
    if (hi - 1.0 > tol && hi - 1.0 > worst) {
      worst = hi - 1.0;
      rep.witness = e;
      rep.witness_kind = TestKind::lower;
      rep.witness_param = p;
    }
  }
  for (int j = 0; j < M; ++j) {
    double p = grid.point(j);
    SampledFunction g = test_function(TestKind::upper, p, spec, grid);
    double lo = phi_sub(g).min();
    rep.inf_upper = std::min(rep.inf_upper, lo);
    if (1.0 - lo > tol && 1.0 - lo > worst) {
      worst = 1.0 - lo;
      rep.witness = g;
      rep.witness_kind = TestKind::upper;
      rep.witness_param = p;
    }
  }
  rep.extendible = !rep.witness.has_value();
  return rep;
}

/// g -> g(x0) (alpha + (1-alpha) y): positive and norm one on the subspace.
inline LinearMap point_evaluation_map(const SubspaceSpec& spec, double x0) {
  const double alpha = spec.alpha_value();
  return [alpha, x0](const SampledFunction& g) {
    const double c = g(x0);
    return SampledFunction::from(g.grid(), [&](double y) { return c * (alpha + (1.0 - alpha) * y); });
  };
}

/// 0 on [0,x0], linear up to k at 1.
inline SampledFunction evaluation_counterexample(const SubspaceSpec& spec, double x0, const Grid& grid) {
  const int knee = grid.nearest_index(x0);
  if (knee <= 0 || knee >= grid.M()) throw Error("evaluation_counterexample: x0 must lie inside (0,1)");
  const double k = static_cast<double>(spec.k);
  std::vector<double> v(grid.size(), 0.0);
  for (int i = knee + 1; i <= grid.M(); ++i)
    v[i] = k * static_cast<double>(i - knee) / (grid.M() - knee);
  return SampledFunction(grid, std::move(v));
}

}  // namespace markov_mimic
