#include <gtest/gtest.h>

#include <functional>

#include "markov_mimic/certify.hpp"
#include "markov_mimic/construct.hpp"
#include "markov_mimic/pipeline.hpp"
#include "test_support.hpp"

using namespace markov_mimic;
using mm_test::kIterations;
using mm_test::kSeed;

namespace {

CellPartition three_cells(const Grid& g) {
  std::vector<int> pts{0, g.M() / 2, g.M()};
  return make_partition(pts, g);
}

CoefficientField constant_field(const CellPartition& p, const std::vector<double>& lam) {
  CoefficientField f{p, {}, {}, {}};
  for (double v : lam) f.lambdas.push_back(SampledFunction::constant(p.grid(), v));
  return f;
}

/// Linear-in-y field between exact endpoint vectors r and s.
CoefficientField linear_field(const CellPartition& p, const std::vector<Rational>& r, const std::vector<Rational>& s) {
  CoefficientField f{p, {}, r, s};
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double a = r[i].to_double(), b = s[i].to_double();
    auto v = SampledFunction::from(p.grid(), [&](double y) { return a * (1 - y) + b * y; });
    f.lambdas.push_back(v.with_value(0, a).with_value(p.grid().M(), b));
  }
  return f;
}

RationalSnapshot snapshot_of(std::vector<Rational> r, std::vector<Rational> s) {
  RationalSnapshot sn;
  sn.r = std::move(r);
  sn.s = std::move(s);
  sn.eta = Rational(0);
  sn.lattice = 1;
  return sn;
}

/// Random endpoint vectors with r_i <= s_i for i >= 2 and r_1 >= s_1, denominator 100.
std::pair<std::vector<Rational>, std::vector<Rational>> random_monotone_ends(std::mt19937_64& rng, std::size_t n) {
  std::vector<Rational> r(n), s(n);
  std::int64_t budget = 100, rs = 0, ss = 0;
  for (std::size_t i = 1; i < n; ++i) {
    const std::int64_t si = std::uniform_int_distribution<std::int64_t>(0, budget / 2)(rng);
    const std::int64_t ri = std::uniform_int_distribution<std::int64_t>(0, si)(rng);
    budget -= si;
    s[i] = Rational(si, 100);
    r[i] = Rational(ri, 100);
    ss += si;
    rs += ri;
  }
  s[0] = Rational(100 - ss, 100);
  r[0] = Rational(100 - rs, 100);
  return {r, s};
}

Block constant_block(const Grid& g, int point, std::size_t cell, const Rational& w) {
  return Block{SampledFunction::constant(g, w.to_double()), point, cell, w, w};
}

MarkovKernel case_one_tau_one(const Grid& g) {
  std::vector<SampledFunction> maps{SampledFunction::constant(g, 0.0), SampledFunction::constant(g, 0.5),
                                    SampledFunction::from(g, [](double y) { return y; })};
  std::vector<SampledFunction> w{SampledFunction::from(g, [](double y) { return (1 - y) * 5 / 6 + y / 4; }),
                                 SampledFunction::from(g, [](double y) { return (1 - y) / 6 + y / 4; }),
                                 SampledFunction::from(g, [](double y) { return y / 2; })};
  return from_weighted_compositions(maps, w);
}

MarkovKernel case_one_tau_zero(const Grid& g) {
  std::vector<SampledFunction> maps{SampledFunction::constant(g, 0.0), SampledFunction::from(g, [](double y) { return y; })};
  std::vector<SampledFunction> w{SampledFunction::from(g, [](double y) { return 1 - y / 2; }),
                                 SampledFunction::from(g, [](double y) { return y / 2; })};
  return from_weighted_compositions(maps, w);
}

/// Expected endpoint tallies: N1 r_i - m_i at y = 0 and N1 s_i - z_i at y = 1.
void expect_tally_oracle(const Approximation& r) {
  const auto& d = r.diagnostics;
  const auto& ex = r.family.meta.exclusions;
  const auto& t = r.certificate.tally;
  for (std::size_t i = 0; i < d.n; ++i) {
    const Rational c0 = Rational(d.N1) * d.snapshot.r[i] - Rational(ex.m[i]);
    const Rational c1 = Rational(d.N1) * d.snapshot.s[i] - Rational(ex.z[i]);
    EXPECT_EQ(Rational(t.c0[i]), c0) << "cell " << i + 1;
    EXPECT_EQ(Rational(t.c1[i]), c1) << "cell " << i + 1;
  }
}

std::string stage_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const StageError& e) {
    return e.stage();
  }
  return "";
}

}  // namespace

TEST(BuildCoefficients, IdentityGivesCellIndicators) {
  Grid g(400);
  auto p = three_cells(g);
  auto f = build_coefficients(identity_kernel(g), p);
  for (int y = 0; y <= g.M(); ++y)
    for (std::size_t i = 0; i < 3; ++i) ASSERT_EQ(f.lambdas[i][y], p.cell_of(y) == i ? 1.0 : 0.0);
}

TEST(BuildCoefficients, SquareMapAtSixTenths) {
  Grid g(400);
  auto f = build_coefficients(from_composition(SampledFunction::from(g, [](double x) { return x * x; })), three_cells(g));
  EXPECT_EQ(f.lambdas[0][240], 0.0);
  EXPECT_EQ(f.lambdas[1][240], 1.0);
  EXPECT_EQ(f.lambdas[2][240], 0.0);
}

TEST(BuildCoefficients, ReflectionMixtureAtZero) {
  Grid g(400);
  auto f = build_coefficients(example2_kernel(g, 3, 1), three_cells(g));
  EXPECT_DOUBLE_EQ(f.lambdas[0][0], 0.75);
  EXPECT_DOUBLE_EQ(f.lambdas[1][0], 0.0);
  EXPECT_DOUBLE_EQ(f.lambdas[2][0], 0.25);
}

TEST(BuildCoefficients, BoundViolationThrows) {
  Grid g(400);
  auto F = mm_test::member_functions(g);
  EXPECT_THROW(build_coefficients(example2_kernel(g, 3, 1), three_cells(g), F, 0.01), Error);
  auto pts = dense_points(0.01, g);
  EXPECT_NO_THROW(build_coefficients(identity_kernel(g), make_partition(pts, g), F, 0.1));
}

TEST(BuildCoefficients, PropertyNonnegativeAndSumToOne) {
  Grid g(200);
  std::mt19937_64 rng(kSeed);
  for (int it = 0; it < kIterations / 4; ++it) {
    std::vector<SampledFunction> maps{mm_test::random_endpoint_fixing_map(g, rng), mm_test::random_endpoint_fixing_map(g, rng)};
    std::vector<SampledFunction> w{mm_test::random_pl(g, rng, 0.1, 1.0), mm_test::random_pl(g, rng, 0.1, 1.0)};
    auto K = from_weighted_compositions(maps, w);
    auto pts = dense_points(1.0 / (3 + it % 10), g);
    auto f = build_coefficients(K, make_partition(pts, g));
    for (int y = 0; y <= g.M(); ++y) {
      double s = 0;
      for (const auto& l : f.lambdas) {
        ASSERT_GE(l[y], 0.0);
        s += l[y];
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(SnapEndpoints, EqualSnapshotLeavesFieldUnchanged) {
  Grid g(400);
  auto raw = build_coefficients(example2_kernel(g, 3, 1), three_cells(g));
  auto sn = snapshot_of({Rational(3, 4), Rational(0), Rational(1, 4)}, {Rational(1, 4), Rational(0), Rational(3, 4)});
  auto f = snap_endpoints(raw, sn);
  ASSERT_TRUE(f.snapped());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(sup_distance(f.lambdas[i], raw.lambdas[i]), 1e-15);
}

TEST(SnapEndpoints, DifferenceFadesOverOneCell) {
  Grid g(400);
  auto raw = constant_field(three_cells(g), {0.749, 0.001, 0.25});
  auto sn = snapshot_of({Rational(3, 4), Rational(0), Rational(1, 4)}, {Rational(3, 4), Rational(0), Rational(1, 4)});
  auto f = snap_endpoints(raw, sn);
  EXPECT_EQ(f.lambdas[0][0], 0.75);
  EXPECT_EQ(f.lambdas[1][0], 0.0);
  EXPECT_NEAR(f.lambdas[0][1], 0.7495, 1e-15);
  EXPECT_NEAR(f.lambdas[1][1], 0.0005, 1e-15);
  EXPECT_NEAR(f.lambdas[0][399], 0.7495, 1e-15);
  EXPECT_EQ(f.lambdas[0][2], 0.749);
  EXPECT_EQ(f.lambdas[2][200], 0.25);
}

TEST(SnapEndpoints, TightSlackThrows) {
  Grid g(400);
  auto raw = constant_field(three_cells(g), {0.749, 0.001, 0.25});
  auto sn = snapshot_of({Rational(3, 4), Rational(0), Rational(1, 4)}, {Rational(3, 4), Rational(0), Rational(1, 4)});
  EXPECT_THROW(snap_endpoints(raw, sn, 1e-4), Error);
  EXPECT_NO_THROW(snap_endpoints(raw, sn, 1e-2));
  auto short_sn = snapshot_of({Rational(1)}, {Rational(1)});
  EXPECT_THROW(snap_endpoints(raw, short_sn), Error);
}

TEST(Interleave, ReflectionMixtureWidths) {
  Grid g(400);
  auto raw = build_coefficients(example2_kernel(g, 3, 1), three_cells(g));
  auto f = snap_endpoints(raw, snapshot_of({Rational(3, 4), Rational(0), Rational(1, 4)},
                                           {Rational(1, 4), Rational(0), Rational(3, 4)}));
  auto s = interleave_coefficients(f);
  ASSERT_EQ(s.blocks.size(), 6u);
  const std::vector<Rational> want{Rational(0), Rational(0), Rational(1, 4), Rational(1, 2), Rational(1, 4), Rational(0)};
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(s.blocks[j].width0, want[j]) << j;
  auto F = mm_test::member_functions(g);
  for (const auto& fn : F) EXPECT_NEAR(s.combine(fn, 0), 0.25 * fn[g.M()] + 0.75 * fn[0], 1e-15);
}

TEST(Interleave, PointMassFieldPutsAllMassInLastSlack) {
  Grid g(400);
  auto f = linear_field(three_cells(g), {Rational(1), Rational(0), Rational(0)}, {Rational(0), Rational(0), Rational(1)});
  auto s = interleave_coefficients(f);
  // slack block before the remainder absorbs lambda_1(0) - lambda_1(1)
  for (std::size_t j = 0; j < s.blocks.size(); ++j) EXPECT_EQ(s.blocks[j].width0, j == 3 ? Rational(1) : Rational(0)) << j;
  EXPECT_EQ(s.blocks[2].width1, Rational(1));
}

TEST(Interleave, ConstantFieldHasEmptySlackBlocks) {
  Grid g(400);
  const std::vector<Rational> r{Rational(1, 2), Rational(1, 4), Rational(1, 4)};
  auto s = interleave_coefficients(linear_field(three_cells(g), r, r));
  for (std::size_t j = 1; j < s.blocks.size(); j += 2) {
    EXPECT_EQ(s.blocks[j].width0, Rational(0));
    EXPECT_EQ(s.blocks[j].width1, Rational(0));
  }
}

TEST(Interleave, MonotonicityViolationThrows) {
  Grid g(400);
  auto f = linear_field(three_cells(g), {Rational(1, 2), Rational(1, 2), Rational(0)}, {Rational(1, 2), Rational(1, 4), Rational(1, 4)});
  EXPECT_THROW(interleave_coefficients(f), Error);
  auto unsnapped = build_coefficients(identity_kernel(g), three_cells(g));
  EXPECT_THROW(interleave_coefficients(unsnapped), Error);
}

TEST(Interleave, PropertyRepresentationAndPairedBreakpoints) {
  Grid g(100);
  std::mt19937_64 rng(kSeed + 1);
  for (int it = 0; it < kIterations; ++it) {
    const std::size_t n = 2 + static_cast<std::size_t>(it % 5);
    std::vector<int> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back(static_cast<int>(i * 100 / (n - 1)));
    auto p = make_partition(pts, g);
    auto [r, s] = random_monotone_ends(rng, n);
    auto field = linear_field(p, r, s);
    auto sch = interleave_coefficients(field);
    ASSERT_EQ(sch.blocks.size(), 2 * n);
    auto f = mm_test::random_pl(g, rng);
    for (int y = 0; y <= g.M(); y += 7) ASSERT_NEAR(sch.combine(f, y), field.combine(f, y), 1e-12);
    auto prof = build_profile(sch, Rational(1, 1000));
    auto G0 = prof.exact_breakpoints(0), G1 = prof.exact_breakpoints(1);
    for (std::size_t k = 0; 2 * k <= 2 * n - 2; ++k) ASSERT_EQ(G0[2 * k], G1[2 * k]) << "k=" << k;
  }
}

TEST(ChooseDelta, SameModeExamples) {
  DeltaRequest q;
  q.eps = 0.2;
  q.sup_norm = 1;
  q.n = 5;
  EXPECT_EQ(choose_delta(q), Rational(1, 500));
  q.sup_norm = 10;
  EXPECT_EQ(choose_delta(q), Rational(1, 5000));
}

TEST(ChooseDelta, TinyInteriorMassThrows) {
  auto sn = snapshot_of({Rational(1, 2), Rational(1, 1000), Rational(499, 1000)},
                        {Rational(0), Rational(1, 100), Rational(99, 100)});
  DeltaRequest q;
  q.mode = Mode::cross;
  q.eps = 0.1;
  q.sup_norm = 1;
  q.n = 3;
  q.tau = 1;
  q.a = 1;
  q.k = 1;
  q.b = 100;
  q.snapshot = &sn;
  q.cap = 1'000'000;
  EXPECT_THROW(choose_delta(q), Error);
  q.snapshot = nullptr;
  EXPECT_THROW(choose_delta(q), Error);
}

TEST(ChooseDelta, PropertyLargestAdmissibleLadderValue) {
  std::mt19937_64 rng(kSeed + 2);
  std::uniform_real_distribution<double> eps(0.01, 1.0), sup(0.1, 5.0);
  const auto ladder = unit_ladder(kDefaultN1Cap);
  for (int it = 0; it < kIterations; ++it) {
    DeltaRequest q;
    q.eps = eps(rng);
    q.sup_norm = sup(rng);
    q.n = 2 + static_cast<std::size_t>(it % 40);
    const std::int64_t m = choose_delta(q).den();
    const double d = 1.0 / static_cast<double>(m), quarter = q.eps / 4;
    ASSERT_GE(m, 4);
    ASSERT_LT(4 * static_cast<double>(q.n) * d * q.sup_norm, quarter);
    ASSERT_LE(5 * d * q.sup_norm, quarter);
    auto pos = std::find(ladder.begin(), ladder.end(), m);
    ASSERT_NE(pos, ladder.end());
    if (pos != ladder.begin()) {
      const std::int64_t prev = *(pos - 1);
      const double pd = 1.0 / static_cast<double>(prev);
      ASSERT_FALSE(prev >= 4 && 4 * static_cast<double>(q.n) * pd * q.sup_norm < quarter && 5 * pd * q.sup_norm <= quarter);
    }
  }
}

TEST(BuildProfile, TwoHalfBlocks) {
  Grid g(4);
  BlockSchedule s{g, {constant_block(g, 0, 0, Rational(1, 2)), constant_block(g, 4, 1, Rational(1, 2))}, false};
  auto P = build_profile(s, Rational(1, 8));
  EXPECT_DOUBLE_EQ(P.h(2, 0.75), 1.0);
  EXPECT_DOUBLE_EQ(P.h(2, 9.0 / 16), 0.5);
  EXPECT_EQ(P.h_exact(0, Rational(3, 4)), Rational(1));
  EXPECT_EQ(P.h_exact(1, Rational(9, 16)), Rational(1, 2));
  EXPECT_EQ(P.h(2, 0.25), 0.0);
  EXPECT_EQ(P.h_exact(0, Rational(1, 4)), Rational(0));
}

TEST(BuildProfile, WidthTwoDeltaHasFullPlateau) {
  Grid g(4);
  BlockSchedule s{g, {constant_block(g, 2, 0, Rational(1, 4)), constant_block(g, 0, 1, Rational(3, 4))}, false};
  auto P = build_profile(s, Rational(1, 8));
  EXPECT_EQ(P.h_exact(0, Rational(1, 8)), Rational(1, 2));
  EXPECT_EQ(P.h_exact(0, Rational(1, 16)), Rational(1, 4));
}

TEST(BuildProfile, RejectsBadWidthsAndDelta) {
  Grid g(4);
  BlockSchedule s{g, {constant_block(g, 0, 0, Rational(1, 2)), constant_block(g, 4, 1, Rational(1, 4))}, false};
  EXPECT_THROW(build_profile(s, Rational(1, 8)), Error);
  BlockSchedule ok{g, {constant_block(g, 0, 0, Rational(1))}, false};
  EXPECT_THROW(build_profile(ok, Rational(0)), Error);
}

TEST(BuildProfile, PropertyLipschitzBoundedMonotone) {
  Grid g(100);
  std::mt19937_64 rng(kSeed + 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int it = 0; it < kIterations / 2; ++it) {
    const std::size_t n = 2 + static_cast<std::size_t>(it % 4);
    std::vector<int> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back(static_cast<int>(i * 100 / (n - 1)));
    auto [r, s] = random_monotone_ends(rng, n);
    const Rational delta(1, 20 + it % 30);
    auto P = build_profile(interleave_coefficients(linear_field(make_partition(pts, g), r, s)), delta);
    const double dd = delta.to_double();
    for (int y = 0; y <= g.M(); y += 9) {
      auto G = P.breakpoints(y);
      for (std::size_t j = 1; j < G.size(); ++j) ASSERT_LE(G[j - 1], G[j]);
      for (int k = 0; k < 20; ++k) {
        const double t = u(rng), t2 = std::clamp(t + (u(rng) - 0.5) * 0.1, 0.0, 1.0);
        const double h = P.h(y, t);
        ASSERT_GE(h, 0.0);
        ASSERT_LE(h, 1.0);
        ASSERT_LE(std::fabs(h - P.h(y, t2)), std::fabs(t - t2) / dd + 1e-9);
      }
    }
  }
}

TEST(SelectIndicesSame, Examples) {
  auto D = select_indices_same(100, Rational(1, 10));
  EXPECT_EQ(D.size(), 81);
  EXPECT_EQ(D.at(0), 10);
  EXPECT_EQ(D.at(80), 90);
  auto E = select_indices_same(20, Rational(1, 4));
  EXPECT_EQ(E.size(), 11);
  EXPECT_EQ(E.at(0), 5);
  EXPECT_THROW(select_indices_same(100, Rational(1, 2)), Error);
  EXPECT_THROW(select_indices_same(5, Rational(1, 10)), Error);
}

TEST(IndexSet, AddMergesAndRejectsOverlap) {
  IndexSet D;
  D.add(1, 3);
  D.add(4, 6);
  D.add(9, 9);
  EXPECT_EQ(D.ranges.size(), 2u);
  EXPECT_EQ(D.size(), 7);
  EXPECT_TRUE(D.contains(5));
  EXPECT_FALSE(D.contains(7));
  EXPECT_EQ(D.at(6), 9);
  EXPECT_THROW(D.at(7), Error);
  EXPECT_THROW(D.add(8, 10), Error);
}

TEST(ExclusionCounts, CaseOneWithInteriorMass) {
  auto e = exclusion_counts(CrossCase::I, {false, true, false}, 1, 1, 1, 3, 100);
  EXPECT_EQ(e.m[1], 1200);
  EXPECT_EQ(e.z[1], 1600);
  EXPECT_EQ(e.m[0], 1200);
  EXPECT_EQ(e.z[2], 800);
  EXPECT_EQ(e.z[0], 0);
  EXPECT_EQ(e.m[2], 0);
}

TEST(ExclusionCounts, CaseTwoWithoutInteriorMass) {
  auto e = exclusion_counts(CrossCase::II, {false, false}, 0, 1, 1, 3, 1);
  EXPECT_EQ(e.m[0], 12);
  EXPECT_EQ(e.m[1], 12);
  EXPECT_EQ(e.z[1], 24);
}

TEST(ExclusionCounts, PropertyCountsObeyTheRelations) {
  std::mt19937_64 rng(kSeed + 4);
  std::uniform_int_distribution<std::int64_t> small(1, 9), width(1, 1000);
  for (int it = 0; it < kIterations; ++it) {
    const std::int64_t a = small(rng), k = small(rng), b = a + small(rng), w = width(rng);
    const std::size_t n = 2 + static_cast<std::size_t>(it % 5);
    std::vector<bool> active(n, false);
    std::int64_t tau = 0;
    for (std::size_t i = 1; i + 1 < n; ++i)
      if ((active[i] = rng() % 2 == 1)) ++tau;
    const CrossCase cc = it % 2 == 0 ? CrossCase::I : CrossCase::II;
    auto e = exclusion_counts(cc, active, tau, a, k, b, w);
    const Rational alpha(a, a + k), beta(b, b + k);
    for (std::size_t i = 1; i + 1 < n; ++i) ASSERT_EQ(Rational(e.m[i]), beta * Rational(e.z[i]));
    ASSERT_EQ(alpha * Rational(e.m[0]) + Rational(e.m[n - 1]),
              beta * (alpha * Rational(e.z[0]) + Rational(e.z[n - 1])));
  }
}

TEST(SelectIndicesCross, EqualIntegersThrow) {
  Grid g(400);
  auto f = linear_field(three_cells(g), {Rational(3, 4), Rational(0), Rational(1, 4)}, {Rational(1, 4), Rational(0), Rational(3, 4)});
  auto P = build_profile(interleave_coefficients(f), Rational(1, 100));
  auto sn = snapshot_of(f.at0, f.at1);
  EXPECT_THROW(select_indices_cross(P, sn, 1000, Rational(1, 100), 0, 2, 2, 2), Error);
  auto same = build_profile(same_schedule(f), Rational(1, 100));
  EXPECT_THROW(select_indices_cross(same, sn, 1000, Rational(1, 100), 0, 2, 2, 5), Error);
}

TEST(AssembleFamily, SingletonIndexSet) {
  Grid g(4);
  BlockSchedule s{g, {constant_block(g, 0, 0, Rational(1, 2)), constant_block(g, 4, 1, Rational(1, 2))}, false};
  auto P = build_profile(s, Rational(1, 8));
  IndexSet D;
  D.add(6, 6);
  auto fam = assemble_family(P, D, 8);
  EXPECT_EQ(fam.N(), 1);
  EXPECT_EQ(fam.value(0, 2), 1.0);
  EXPECT_EQ(fam.exact_value(0, 0), Rational(1));
  IndexSet bad;
  bad.add(0, 2);
  EXPECT_THROW(assemble_family(P, bad, 8), Error);
}

TEST(Approximate, SquareMapEndpointTallies) {
  Grid g(400);
  auto F = mm_test::member_functions(g);
  const auto spec = SubspaceSpec::from_integers(1, 1);
  auto r = approximate(from_composition(SampledFunction::from(g, [](double x) { return x * x; })), F, 0.05, spec, spec);
  EXPECT_TRUE(r.certificate.passed());
  const auto& fam = r.family;
  auto t0 = fam.tally(0), t1 = fam.tally(1);
  ASSERT_EQ(t0.size(), 1u);
  ASSERT_EQ(t1.size(), 1u);
  EXPECT_EQ(t0.begin()->first, Rational(0));
  EXPECT_EQ(t0.begin()->second, fam.N());
  EXPECT_EQ(t1.begin()->first, Rational(1));
  EXPECT_EQ(t1.begin()->second, fam.N());
  EXPECT_LE(r.certificate.sup_error, r.budgets.total() + 1e-12);
}

TEST(Approximate, IdentityKernelPasses) {
  Grid g(400);
  auto F = mm_test::member_functions(g);
  const auto spec = SubspaceSpec::from_integers(1, 1);
  auto r = approximate(identity_kernel(g), F, 0.1, spec, spec);
  EXPECT_TRUE(r.certificate.passed());
  EXPECT_LT(r.certificate.sup_error, 0.1);
}

TEST(Approximate, NDependsOnlyOnGridFunctionsAndEps) {
  Grid g(400);
  auto F = mm_test::member_functions(g);
  const auto spec = SubspaceSpec::from_integers(1, 1);
  auto a = approximate(identity_kernel(g), F, 0.05, spec, spec);
  auto b = approximate(from_composition(SampledFunction::from(g, [](double x) { return x * x; })), F, 0.05, spec, spec);
  EXPECT_EQ(a.family.N(), b.family.N());
  EXPECT_EQ(a.diagnostics.N1, b.diagnostics.N1);
}

TEST(Approximate, ReflectionMixtureCaseTwo) {
  Grid g(400);
  auto F = mm_test::member_functions(g);
  auto r = approximate(example2_kernel(g, 3, 1), F, 0.1, SubspaceSpec::from_integers(1, 1),
                       SubspaceSpec::from_alpha(Rational(5, 7)));
  EXPECT_TRUE(r.certificate.passed());
  EXPECT_EQ(r.diagnostics.cross_case, CrossCase::II);
  expect_tally_oracle(r);
}

TEST(Approximate, CaseOneWithInteriorMass) {
  Grid g(400);
  auto F = mm_test::member_functions(g);
  auto r = approximate(case_one_tau_one(g), F, 0.1, SubspaceSpec::from_integers(1, 1),
                       SubspaceSpec::from_alpha(Rational(2, 3)));
  EXPECT_TRUE(r.certificate.passed());
  EXPECT_EQ(r.diagnostics.cross_case, CrossCase::I);
  EXPECT_EQ(r.diagnostics.tau, 1);
  expect_tally_oracle(r);
}

TEST(Approximate, CaseOneWithoutInteriorMass) {
  Grid g(400);
  auto F = mm_test::member_functions(g);
  auto r = approximate(case_one_tau_zero(g), F, 0.1, SubspaceSpec::from_integers(1, 1),
                       SubspaceSpec::from_alpha(Rational(2, 3)));
  EXPECT_TRUE(r.certificate.passed());
  EXPECT_EQ(r.diagnostics.cross_case, CrossCase::I);
  EXPECT_EQ(r.diagnostics.tau, 0);
  expect_tally_oracle(r);
}

TEST(Approximate, MidpointMixture) {
  Grid g(400);
  const auto spec = SubspaceSpec::from_integers(1, 1);
  EXPECT_DOUBLE_EQ(example3_beta(spec, 2, 0), 2.0 / 3);
  auto F = mm_test::member_functions(g);
  auto r = approximate(example3_kernel(g, spec, 2, 0), F, 0.1, spec, SubspaceSpec::from_alpha(Rational(2, 3)));
  EXPECT_TRUE(r.certificate.passed());
  expect_tally_oracle(r);
}

TEST(Approximate, StageErrors) {
  Grid g(400);
  auto F = mm_test::member_functions(g);
  const auto half = SubspaceSpec::from_integers(1, 1);
  const auto quarter = SubspaceSpec::from_alpha(Rational(1, 4));
  auto K = identity_kernel(g);
  EXPECT_EQ(stage_of([&] { approximate(K, F, 0.1, half, quarter); }), "feasibility");
  EXPECT_EQ(stage_of([&] { approximate(K, F, 0.1, half, SubspaceSpec::from_alpha(Rational(5, 7))); }), "ratio");
  std::vector<SampledFunction> outsider{SampledFunction::from(g, [](double x) { return x; })};
  outsider[0] = outsider[0].with_value(0, 0.3);
  EXPECT_EQ(stage_of([&] { approximate(K, outsider, 0.1, half, half); }), "validate");
  ApproximateOptions o;
  o.n1_cap = 1000;
  EXPECT_EQ(stage_of([&] { approximate(K, F, 0.1, half, half, o); }), "delta");
  ApproximateOptions big;
  big.n1_multiplier = 1'000'000;
  EXPECT_EQ(stage_of([&] { approximate(K, F, 0.1, half, half, big); }), "modulus");
  EXPECT_EQ(stage_of([&] { approximate(K, F, -1.0, half, half); }), "validate");
}

TEST(Approximate, MultiplierScalesN1) {
  Grid g(400);
  auto F = mm_test::member_functions(g);
  const auto spec = SubspaceSpec::from_integers(1, 1);
  ApproximateOptions o;
  o.n1_multiplier = 2;
  auto base = approximate(identity_kernel(g), F, 0.1, spec, spec);
  auto twice = approximate(identity_kernel(g), F, 0.1, spec, spec, o);
  EXPECT_EQ(twice.diagnostics.N1, 2 * base.diagnostics.N1);
  EXPECT_TRUE(twice.certificate.passed());
}
