#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "markov_mimic/certify.hpp"
#include "markov_mimic/construct.hpp"
#include "markov_mimic/error.hpp"
#include "markov_mimic/interval_core.hpp"
#include "markov_mimic/markov.hpp"
#include "markov_mimic/rational.hpp"
#include "markov_mimic/relations.hpp"
#include "markov_mimic/subspace.hpp"
#include "markov_mimic/trace.hpp"

namespace markov_mimic {

/// Errors of the four approximation steps, each a max over F and y.
struct StepBudgets {
  double coefficients = 0;  // |phi(f) - Sum lambda_i f(x_i)|
  double transport = 0;     // |Sum lambda_i f(x_i) - int f(h(y,t)) dt|
  double riemann = 0;       // |int f(h) dt - (1/N1) Sum_{j<=N1} f(h(y,t_j))|
  double trimming = 0;      // |(1/N1) Sum_all - (1/N) Sum_D|

  double total() const noexcept { return coefficients + transport + riemann + trimming; }
  std::array<double, 4> values() const noexcept { return {coefficients, transport, riemann, trimming}; }
};

namespace detail {

/// Prefix integrals of a piecewise-linear f.
class Antiderivative {
 public:
  explicit Antiderivative(const SampledFunction& f) : f_(f), I_(f.grid().size(), 0.0) {
    const double h = 1.0 / f.grid().M();
    for (int i = 1; i <= f.grid().M(); ++i)
      I_[static_cast<std::size_t>(i)] = I_[static_cast<std::size_t>(i) - 1] + 0.5 * h * (f[i - 1] + f[i]);
  }

  /// int_0^u f.
  double operator()(double u) const {
    const int M = f_.grid().M();
    u = std::clamp(u, 0.0, 1.0);
    auto i = std::min(static_cast<int>(std::floor(u * M)), M - 1);
    const double x0 = static_cast<double>(i) / M;
    return I_[static_cast<std::size_t>(i)] + 0.5 * (u - x0) * (f_[i] + f_(u));
  }

  /// Mean of f over [0, u].
  double mean(double u) const { return u > 0 ? (*this)(u) / u : f_(0.0); }

  const SampledFunction& f() const noexcept { return f_; }

 private:
  const SampledFunction& f_;
  std::vector<double> I_;
};

/// int_0^1 f(h(y,t)) dt.
inline double transported_integral(const TransportProfile& P, int y, const Antiderivative& A) {
  const double delta = P.delta_value();
  auto G = P.breakpoints(y);
  double total = 0;
  for (std::size_t b = 0; b < P.blocks(); ++b) {
    if (!(G[b + 1] > G[b])) continue;
    auto tz = P.trapezoid(y, b);
    const double up = tz.f - tz.G0;
    const double down = tz.G1 - tz.g;
    total += up * A.mean(tz.x * up / delta);
    total += (tz.g - tz.f) * A.f()(tz.plateau);
    total += down * A.mean(tz.x * down / delta);
  }
  return total;
}

inline double column_sum(std::span<const Segment> col, std::int64_t N, const SampledFunction& f) {
  double s = 0;
  for (std::size_t i = 0; i < col.size(); ++i) {
    const std::int64_t end = i + 1 < col.size() ? col[i + 1].pos : N;
    s += static_cast<double>(end - col[i].pos) * f(col[i].value);
  }
  return s;
}

}  // namespace detail

inline StepBudgets measure_budgets(const MarkovKernel& kernel, const CoefficientField& field,
                                   const TransportProfile& profile, const IndexSet& D, std::int64_t N1,
                                   std::span<const SampledFunction> F, unsigned threads = 1) {
  trace::note("measure_budgets");
  StepBudgets out;
  out.coefficients = coefficient_error(kernel, field, F);
  const Grid& grid = profile.grid();
  IndexSet all;
  all.add(1, N1);
  const std::int64_t N = D.size();
  std::vector<detail::Antiderivative> anti;
  anti.reserve(F.size());
  for (const auto& f : F) anti.emplace_back(f);
  std::vector<std::array<double, 3>> per_y(grid.size(), {0.0, 0.0, 0.0});
  parallel_for(grid.size(), threads, [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    auto col_all = profile_column(profile, y, all, N1);
    auto col_D = profile_column(profile, y, D, N1);
    std::array<double, 3> worst{0, 0, 0};
    for (std::size_t j = 0; j < F.size(); ++j) {
      const SampledFunction& f = F[j];
      const double lam = field.combine(f, y);
      const double w = detail::transported_integral(profile, y, anti[j]);
      const double avg_all = detail::column_sum(col_all, N1, f) / static_cast<double>(N1);
      const double avg_D = detail::column_sum(col_D, N, f) / static_cast<double>(N);
      worst[0] = std::max(worst[0], std::fabs(lam - w));
      worst[1] = std::max(worst[1], std::fabs(w - avg_all));
      worst[2] = std::max(worst[2], std::fabs(avg_all - avg_D));
    }
    per_y[yy] = worst;
  });
  for (const auto& w : per_y) {
    out.transport = std::max(out.transport, w[0]);
    out.riemann = std::max(out.riemann, w[1]);
    out.trimming = std::max(out.trimming, w[2]);
  }
  return out;
}

struct ApproximateOptions {
  std::uint64_t seed = 0;
  std::int64_t n1_cap = kDefaultN1Cap;
  std::int64_t n1_multiplier = 1;
  unsigned threads = 1;
  double ratio_tolerance = 1e-6;
  double relation_tolerance = 1e-9;
};

struct PipelineDiagnostics {
  Mode mode = Mode::same;
  CrossCase cross_case = CrossCase::none;
  Rational delta0;
  std::size_t n = 0;
  Rational delta;
  std::int64_t N1 = 0;
  std::int64_t N = 0;
  int tau = 0;
  std::int64_t a = 1, k = 1, b = 1;
  std::int64_t lattice = 1;
  double step_one_raw = 0;     // coefficient error before snapping
  double measured_ratio = 0;   // phi(f)(0)/phi(f)(1) over random members
  RationalSnapshot snapshot;
  RelationResiduals residuals;
};

struct Approximation {
  EigenvalueFamily family;
  StepBudgets budgets;
  Certificate certificate;
  PipelineDiagnostics diagnostics;
};

class PipelineError : public Error {
 public:
  PipelineError(const std::string& msg, Certificate cert) : Error(msg), certificate_(std::move(cert)) {}
  const Certificate& certificate() const noexcept { return certificate_; }

 private:
  Certificate certificate_;
};

namespace detail {

template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace detail

/// Builds N maps h_d with phi(f) ~ (1/N) Sum_d f o h_d for f in F and certifies the result.
inline Approximation approximate(const MarkovKernel& kernel, std::span<const SampledFunction> F, double eps,
                                 const SubspaceSpec& in, const SubspaceSpec& out,
                                 const ApproximateOptions& opt = {}) {
  trace::note("approximate");
  using detail::stage;
  if (F.empty()) throw StageError("validate", "F is empty");
  if (!(eps > 0)) throw StageError("validate", "eps must be positive");
  if (opt.n1_multiplier < 1) throw StageError("validate", "n1_multiplier must be at least 1");
  const Grid& grid = kernel.grid();
  const int M = grid.M();
  stage("validate", [&] {
    auto rep = validate_kernel(kernel);
    if (!rep.pass)
      throw Error("kernel rows are not probability measures (row-sum deviation " +
                  std::to_string(rep.max_row_sum_deviation) + ")");
    for (const auto& f : F) {
      if (!(f.grid() == grid)) throw Error("function grid does not match kernel grid");
      if (!is_member(f, in.alpha_value())) throw Error("function outside the source subspace");
    }
    return 0;
  });

  PipelineDiagnostics diag;
  const Rational alpha = in.alpha, beta = out.alpha;
  diag.mode = alpha == beta ? Mode::same : Mode::cross;
  stage("feasibility", [&] {
    auto v = feasibility(alpha, beta);
    if (!v.feasible) throw Error("infeasible: beta < alpha");
    return 0;
  });
  const IntegerRealization ints = stage("feasibility", [&] { return realize_integers(alpha, beta); });
  diag.a = ints.a;
  diag.k = ints.k;
  diag.b = ints.b;
  stage("ratio", [&] {
    auto r = induced_ratio(kernel, in, 8, opt.seed);
    diag.measured_ratio = r.beta;
    if (std::fabs(r.beta - beta.to_double()) > opt.ratio_tolerance || r.defect > opt.ratio_tolerance)
      throw Error("kernel does not map the source subspace into the target one (measured ratio " +
                  std::to_string(r.beta) + ", expected " + beta.str() + ")");
    return 0;
  });

  double sup = 0;
  for (const auto& f : F) sup = std::max(sup, f.sup_norm());

  const int j = modulus_delta_steps(F, eps / 4);
  diag.delta0 = Rational(j, M);
  const CellPartition partition = stage("partition", [&] {
    auto pts = dense_points(diag.delta0.to_double(), grid);
    return make_partition(pts, grid, diag.delta0.to_double());
  });
  diag.n = partition.size();
  const std::size_t n = diag.n;
  CoefficientField raw = stage("coefficients", [&] { return build_coefficients(kernel, partition, F, eps); });
  diag.step_one_raw = coefficient_error(kernel, raw, F);
  const double slack = eps / 4 - diag.step_one_raw - 1e-12;

  CoefficientField field = raw;
  if (diag.mode == Mode::same) {
    stage("concentration", [&] {
      auto c = concentration_check(kernel, in);
      if (c.mass0 < 1.0 - 1e-9 || c.mass1 < 1.0 - 1e-9)
        throw Error("endpoint measures are not point masses at 0 and 1 (mass " + std::to_string(c.mass0) + ", " +
                    std::to_string(c.mass1) + ")");
      return 0;
    });
    diag.snapshot = point_mass_snapshot(n);
    field = stage("snap", [&] { return snap_endpoints(raw, diag.snapshot, slack, sup); });
  } else {
    auto [mu0, mu1] = endpoint_measures(kernel);
    const CellMasses masses = cell_masses(mu0, mu1, partition);
    diag.residuals = check_relations(masses, alpha, beta);
    if (diag.residuals.max() > opt.relation_tolerance)
      throw StageError("relations", "endpoint masses violate the cell relations (residual " +
                                        std::to_string(diag.residuals.max()) + ")");
    bool done = false;
    std::string last_error = "no lattice tried";
    for (std::int64_t D : unit_ladder(opt.n1_cap)) {
      if (D < static_cast<std::int64_t>(n)) continue;
      try {
        const Rational eta(static_cast<std::int64_t>(n), D);
        RationalSnapshot snap = rational_snapshot(masses, eta, alpha, beta);
        field = snap_endpoints(raw, snap, slack, sup);
        diag.snapshot = std::move(snap);
        done = true;
        break;
      } catch (const Error& e) {
        last_error = e.what();
      }
    }
    if (!done) throw StageError("snapshot", last_error);
    diag.lattice = diag.snapshot.lattice;
  }

  const BlockSchedule schedule = stage("interleave", [&] {
    return diag.mode == Mode::same ? same_schedule(field) : interleave_coefficients(field);
  });
  if (diag.mode == Mode::cross) {
    diag.tau = interior_support(diag.snapshot);
    diag.cross_case = cross_case(diag.snapshot);
  }

  DeltaRequest q;
  q.mode = diag.mode;
  q.eps = eps;
  q.sup_norm = sup;
  q.n = n;
  q.tau = diag.tau;
  q.a = diag.a;
  q.k = diag.k;
  q.b = diag.b;
  q.snapshot = &diag.snapshot;
  q.cap = opt.n1_cap;
  diag.delta = stage("delta", [&] { return choose_delta(q); });

  diag.N1 = stage("modulus", [&] {
    std::vector<std::int64_t> dens;
    if (diag.mode == Mode::cross) dens.push_back(diag.snapshot.common_denominator());
    std::int64_t N1 = select_modulus_N1(diag.delta, diag.delta0, dens, opt.n1_cap);
    if (N1 > opt.n1_cap / opt.n1_multiplier) throw Error("N1 multiplier exceeds cap " + std::to_string(opt.n1_cap));
    return N1 * opt.n1_multiplier;
  });

  const TransportProfile profile = stage("profile", [&] { return build_profile(schedule, diag.delta); });
  ExclusionCounts exclusions;
  const IndexSet D = stage("indices", [&] {
    if (diag.mode == Mode::same) return select_indices_same(diag.N1, diag.delta);
    auto sel = select_indices_cross(profile, diag.snapshot, diag.N1, diag.delta, diag.tau, diag.a, diag.k, diag.b);
    exclusions = sel.counts;
    return sel.D;
  });
  diag.N = D.size();

  EigenvalueFamily family = stage("assemble", [&] { return assemble_family(profile, D, diag.N1, opt.threads); });
  family.meta.mode = diag.mode;
  family.meta.cross_case = diag.cross_case;
  family.meta.delta0 = diag.delta0;
  family.meta.alpha = alpha;
  family.meta.beta = beta;
  family.meta.a = diag.a;
  family.meta.k = diag.k;
  family.meta.b = diag.b;
  family.meta.tau = diag.tau;
  family.meta.representatives.assign(partition.representatives().begin(), partition.representatives().end());
  family.meta.exclusions = exclusions;

  StepBudgets budgets = measure_budgets(kernel, field, profile, D, diag.N1, F, opt.threads);
  Certificate cert = stage("verify", [&] { return certify(kernel, family, F, eps, alpha, beta, opt.threads); });
  if (!cert.passed()) {
    std::string why = !cert.error_ok ? "sup error " + std::to_string(cert.sup_error) + " >= eps"
                                     : cert.boundary.detail;
    throw PipelineError("verify: certificate failed (" + why + ")", std::move(cert));
  }
  return Approximation{std::move(family), budgets, std::move(cert), std::move(diag)};
}

}  // namespace markov_mimic
