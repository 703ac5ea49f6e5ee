#include <gtest/gtest.h>

#include "markov_mimic/certify.hpp"
#include "markov_mimic/pipeline.hpp"
#include "test_support.hpp"

using namespace markov_mimic;
using mm_test::kIterations;
using mm_test::kSeed;

namespace {

/// One map y -> y at t-index `index`.
EigenvalueFamily single_map_family(const Grid& g, std::int64_t index = 1) {
  std::vector<std::vector<Segment>> cols;
  for (int y = 0; y <= g.M(); ++y) cols.push_back({Segment{0, g.point(y)}});
  IndexSet D;
  D.add(index, index);
  EigenvalueFamily fam(g, D, std::move(cols), {ExactSegment{0, Rational(0)}}, {ExactSegment{0, Rational(1)}});
  fam.meta.representatives = {0, g.M()};
  fam.meta.N1 = index + 1;
  return fam;
}

const Approximation& square_map_run() {
  static const Approximation r = [] {
    Grid g(400);
    const auto spec = SubspaceSpec::from_integers(1, 1);
    auto F = mm_test::member_functions(g);
    return approximate(from_composition(SampledFunction::from(g, [](double x) { return x * x; })), F, 0.05, spec,
                       spec);
  }();
  return r;
}

bool contains(const std::vector<RationalSnapshot>& set, const RationalSnapshot& s) {
  for (const auto& t : set)
    if (t.r == s.r && t.s == s.s) return true;
  return false;
}

}  // namespace

TEST(SupError, IdentityFamilyReproducesIdentityKernel) {
  Grid g(100);
  auto F = mm_test::member_functions(g);
  EXPECT_LT(sup_error(identity_kernel(g), single_map_family(g), F), 1e-15);
}

TEST(SupError, CorruptedMapIsDetected) {
  Grid g(100);
  auto F = mm_test::member_functions(g);
  auto bad = single_map_family(g).with_map(0, SampledFunction::constant(g, 0.0), Rational(0), Rational(0));
  auto rep = sup_error_report(identity_kernel(g), bad, F);
  EXPECT_GT(rep.value, 0.05);
  // (1 + x^2)/2 - 1/2 peaks at y = 1
  EXPECT_NEAR(rep.value, 0.5, 1e-12);
  ASSERT_EQ(rep.per_function.size(), 2u);
}

TEST(SupError, GridMismatchThrows) {
  Grid g(100), h(50);
  auto F = mm_test::member_functions(h);
  EXPECT_THROW(sup_error(identity_kernel(h), single_map_family(g), F), Error);
}

TEST(SupError, SquareMapWithinEpsAndBudgets) {
  const auto& r = square_map_run();
  Grid g(400);
  auto F = mm_test::member_functions(g);
  auto K = from_composition(SampledFunction::from(g, [](double x) { return x * x; }));
  const double e1 = sup_error(K, r.family, F, 1);
  const double e2 = sup_error(K, r.family, F, 2);
  EXPECT_EQ(e1, e2);
  EXPECT_EQ(e1, r.certificate.sup_error);
  EXPECT_LT(e1, 0.05);
  EXPECT_LE(e1, r.budgets.total() + 1e-12);
}

TEST(SupError, PropertyMatchesDirectAverageOnSmallFamilies) {
  Grid g(40);
  std::mt19937_64 rng(kSeed);
  for (int it = 0; it < kIterations / 4; ++it) {
    auto fam = single_map_family(g);
    auto map = mm_test::random_endpoint_fixing_map(g, rng);
    fam = fam.with_map(0, map, Rational(0), Rational(1));
    auto K = mm_test::random_pl(g, rng, 0.0, 1.0);
    const MarkovKernel kernel = from_composition(K);
    std::vector<SampledFunction> F{mm_test::random_pl(g, rng)};
    double direct = 0;
    SampledFunction pf = apply(kernel, F[0]);
    for (int y = 0; y <= g.M(); ++y) {
      const double h = fam.value(0, y);
      const double fx = F[0](h);
      direct = std::max(direct, std::fabs(pf[y] - fx));
    }
    ASSERT_NEAR(sup_error(kernel, fam, F), direct, 1e-12);
  }
}

TEST(BoundaryTally, SquareMapCountsAllAtEndpoints) {
  const auto& r = square_map_run();
  auto t = boundary_tally(r.family);
  const std::int64_t N = r.family.N();
  EXPECT_EQ(t.c0.front(), N);
  EXPECT_EQ(t.c1.back(), N);
  std::int64_t rest = 0;
  for (std::size_t i = 1; i < t.c0.size(); ++i) rest += t.c0[i];
  for (std::size_t i = 0; i + 1 < t.c1.size(); ++i) rest += t.c1[i];
  EXPECT_EQ(rest, 0);
}

TEST(BoundaryTally, NonRepresentativeEndpointNamesIndex) {
  Grid g(100);
  auto fam = single_map_family(g, 5).with_map(0, SampledFunction::constant(g, 0.5), Rational(1, 2), Rational(1));
  try {
    boundary_tally(fam);
    FAIL() << "expected a throw";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("is not a representative at index 5"), std::string::npos) << e.what();
  }
  fam.meta.representatives = {0, 50, 100};
  auto t = boundary_tally(fam);
  EXPECT_EQ(t.c0, (std::vector<std::int64_t>{0, 1, 0}));
  EXPECT_EQ(t.c1, (std::vector<std::int64_t>{0, 0, 1}));
}

TEST(CertifyBoundary, SquareMapHolds) {
  auto v = certify_boundary(boundary_tally(square_map_run().family), Rational(1, 2), Rational(1, 2));
  EXPECT_TRUE(v.holds);
}

TEST(CertifyBoundary, PerturbationFailsWithDetail) {
  auto t = boundary_tally(square_map_run().family);
  t.c0.front() -= 1;
  auto v = certify_boundary(t, Rational(1, 2), Rational(1, 2));
  EXPECT_FALSE(v.holds);
  EXPECT_NE(v.detail.find("boundary identity fails"), std::string::npos);
  BoundaryTally u{{0, 10, 20}, {29, 3, 11}, {12, 5, 28}};
  auto w = certify_boundary(u, Rational(1, 2), Rational(3, 4));
  EXPECT_FALSE(w.holds);
  EXPECT_NE(w.detail.find("interior count mismatch at cell 2"), std::string::npos);
  u.c1[1] = 4;
  EXPECT_TRUE(certify_boundary(u, Rational(1, 2), Rational(3, 4)).holds);
}

TEST(Certify, BundlesErrorAndBoundary) {
  Grid g(100);
  auto F = mm_test::member_functions(g);
  auto c = certify(identity_kernel(g), single_map_family(g), F, 0.05, Rational(1, 2), Rational(1, 2));
  EXPECT_TRUE(c.passed());
  EXPECT_EQ(c.N, 1);
  auto bad = single_map_family(g).with_map(0, SampledFunction::constant(g, 0.0), Rational(0), Rational(0));
  auto d = certify(identity_kernel(g), bad, F, 0.05, Rational(1, 2), Rational(1, 2));
  EXPECT_FALSE(d.error_ok);
  EXPECT_FALSE(d.boundary.holds);
  EXPECT_FALSE(d.passed());
}

TEST(SnapshotOracle, SelfSnapshotIsFound) {
  CellMasses m{{0.75, 0.0, 0.25}, {0.25, 0.0, 0.75}};
  auto set = snapshot_oracle(m, Rational(1, 2), Rational(5, 7), Rational(1, 20));
  auto snap = rational_snapshot(m, Rational(1, 20), Rational(1, 2), Rational(5, 7));
  EXPECT_TRUE(contains(set, snap));
}

TEST(SnapshotOracle, ThreeTenthsInstance) {
  CellMasses m{{29.0 / 40, 0.0, 11.0 / 40}, {0.3, 0.0, 0.7}};
  auto set = snapshot_oracle(m, Rational(1, 2), Rational(3, 4), Rational(1, 20));
  RationalSnapshot want;
  want.r = {Rational(29, 40), Rational(0), Rational(11, 40)};
  want.s = {Rational(3, 10), Rational(0), Rational(7, 10)};
  EXPECT_TRUE(contains(set, want));
  for (const auto& s : set) EXPECT_LE(s.s[1], Rational(1, 20));
}

TEST(SnapshotOracle, RejectsUnsupportedSizes) {
  CellMasses big{std::vector<double>(5, 0.2), std::vector<double>(5, 0.2)};
  EXPECT_THROW(snapshot_oracle(big, Rational(1, 2), Rational(1, 2), Rational(1, 10)), Error);
  CellMasses m{{0.5, 0.5}, {0.5, 0.5}};
  EXPECT_THROW(snapshot_oracle(m, Rational(1, 2), Rational(1, 2), Rational(1, 10), 51), Error);
}

TEST(SnapshotOracle, PropertyAgreesWithRationalSnapshot) {
  std::mt19937_64 rng(kSeed + 1);
  std::uniform_int_distribution<std::int64_t> num(0, 20);
  const Rational alpha(1, 2), beta(3, 4), eta(3, 50);
  for (int it = 0; it < kIterations / 2; ++it) {
    std::int64_t s1 = num(rng), s2 = num(rng), s3 = 20 + num(rng);
    const std::int64_t total = s1 + s2 + s3;
    CellMasses m{{1.0, 0.0, 0.0}, {double(s1) / total, double(s2) / total, double(s3) / total}};
    auto set = snapshot_oracle(m, alpha, beta, eta);
    bool threw = false;
    RationalSnapshot snap;
    try {
      snap = rational_snapshot(m, eta, alpha, beta);
    } catch (const Error&) {
      threw = true;
    }
    ASSERT_EQ(threw, set.empty()) << "iteration " << it;
    if (!threw && snap.common_denominator() <= 50) ASSERT_TRUE(contains(set, snap)) << "iteration " << it;
  }
}
