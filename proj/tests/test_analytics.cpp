#include "biopsym/analytics.hpp"
#include "biopsym/biopsy.hpp"
#include "biopsym/serialization.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace biopsym;
using biopsym::testing::random_point;

namespace {

ProstateModel gland() {
  ProstateModel m;
  m.center = Vec3(40, 40, 40);
  return m;
}

std::vector<BiopsyCore> perfect_cores() {
  const ProbeRig rig;
  const GunParams gun;
  std::vector<BiopsyCore> cores;
  for (int i = 0; i < kSectorCount; ++i) {
    const AimSolution aim = aim_core_midpoint(rig, gun, sector_midpoint_target(gland(), {}, SectorId::from_index(i)));
    cores.push_back(fire(rig, aim.pose, aim.needle_depth, gun, gland(), {}));
  }
  return cores;
}

BiopsyCore core_between(const Vec3& p0, const Vec3& p1) {
  BiopsyCore c;
  c.p0 = p0;
  c.p1 = p1;
  return c;
}

}  // namespace

TEST(Stats, EmptySession) {
  const SessionStats st = session_stats({}, gland(), {});
  EXPECT_EQ(st.n_cores, 0);
  EXPECT_EQ(st.n_in_gland, 0);
  EXPECT_EQ(st.sector_coverage, 0.0);
  EXPECT_EQ(st.apex_coverage, 0.0);
  EXPECT_FALSE(st.mean_in_gland_length);
  EXPECT_FALSE(st.min_pair_distance);
  EXPECT_FALSE(st.spread_cv);
  EXPECT_EQ(st.boundary_miss_count, 0);
}

TEST(Stats, PerfectSessionCoversEverything) {
  const SessionStats st = session_stats(perfect_cores(), gland(), {});
  EXPECT_EQ(st.n_cores, 12);
  EXPECT_EQ(st.n_in_gland, 12);
  EXPECT_EQ(st.sector_coverage, 1.0);
  EXPECT_EQ(st.apex_coverage, 1.0);
  EXPECT_EQ(st.boundary_miss_count, 0);
  ASSERT_TRUE(st.spread_cv);
  for (int h : st.sector_hits) EXPECT_EQ(h, 1);
}

TEST(Stats, DuplicateCoresHaveZeroPairDistance) {
  const auto c = core_between(Vec3(35, 40, 40), Vec3(45, 40, 40));
  const SessionStats st = session_stats({c, c}, gland(), {});
  ASSERT_TRUE(st.min_pair_distance);
  EXPECT_EQ(*st.min_pair_distance, 0.0);
  EXPECT_FALSE(st.spread_cv);
  EXPECT_NEAR(*st.mean_in_gland_length, 10.0, 1e-12);
}

TEST(Stats, MissesCountAsBoundaryMisses) {
  const auto in = core_between(Vec3(35, 40, 40), Vec3(45, 40, 40));
  const auto out = core_between(Vec3(0, 0, 0), Vec3(1, 0, 0));
  const SessionStats st = session_stats({in, out, out}, gland(), {});
  EXPECT_EQ(st.n_cores, 3);
  EXPECT_EQ(st.n_in_gland, 1);
  EXPECT_EQ(st.boundary_miss_count, 2);
}

TEST(Stats, SpreadIsNearestNeighbourCv) {
  // Three in-gland midpoints on a line at 0, 2 and 6 mm: nearest-neighbour distances 2, 2, 4.
  const Vec3 c = gland().center;
  std::vector<BiopsyCore> cores;
  for (double x : {0.0, 2.0, 6.0}) cores.push_back(core_between(c + Vec3(x, -1, 0), c + Vec3(x, 1, 0)));
  const SessionStats st = session_stats(cores, gland(), {});
  const double mean = 8.0 / 3.0;
  const double sd = std::sqrt(((2 - mean) * (2 - mean) * 2 + (4 - mean) * (4 - mean)) / 3.0);
  EXPECT_NEAR(*st.spread_cv, sd / mean, 1e-12);
  EXPECT_NEAR(*st.min_pair_distance, 2.0, 1e-12);
}

TEST(Stats, PermutationInvariantAndMonotone) {
  auto cores = perfect_cores();
  std::mt19937_64 rng(3);
  const SessionStats ref = session_stats(cores, gland(), {});
  for (int i = 0; i < 10; ++i) {
    std::shuffle(cores.begin(), cores.end(), rng);
    const SessionStats st = session_stats(cores, gland(), {});
    EXPECT_EQ(st.sector_coverage, ref.sector_coverage);
    EXPECT_EQ(st.sector_hits, ref.sector_hits);
    EXPECT_NEAR(*st.spread_cv, *ref.spread_cv, 1e-12);
    EXPECT_EQ(*st.min_pair_distance, *ref.min_pair_distance);
  }
  std::vector<BiopsyCore> growing;
  double prev_cov = 0.0, prev_apex = 0.0;
  for (const auto& c : cores) {
    growing.push_back(c);
    const SessionStats st = session_stats(growing, gland(), {});
    EXPECT_GE(st.sector_coverage, prev_cov);
    EXPECT_GE(st.apex_coverage, prev_apex);
    prev_cov = st.sector_coverage;
    prev_apex = st.apex_coverage;
  }
}

TEST(Exercise, PlaneLocalizationExactAndFalloff) {
  ImagePlane target;
  target.origin = Vec3(40, 20, 60);
  target.u_axis = Vec3::UnitY();
  target.v_axis = -Vec3::UnitZ();
  target.width = 60;
  target.depth = 70;
  Exercise ex{PlaneTarget{target}, 0};
  auto r = evaluate_exercise(ex, PlaneEvidence{target});
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.score, 1.0);

  ImagePlane off = target;
  off.origin += Vec3(3, 0, 0);
  r = evaluate_exercise(ex, PlaneEvidence{off});
  EXPECT_TRUE(r.passed);
  EXPECT_NEAR(r.score, 1.0 - 3.0 / 10.0, 1e-12);
  EXPECT_GE(r.score, pass_threshold(ExerciseKind::PlaneLocalization, ex));

  ImagePlane tilted = target;
  const Mat3 rot = rot_y(0.3);  // ~17 degrees about the in-plane u axis
  tilted.v_axis = rot * target.v_axis;
  r = evaluate_exercise(ex, PlaneEvidence{tilted});
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(std::get<PlaneDetail>(r.detail).angle, 0.3, 1e-9);

  // Flipped normal is the same plane.
  ImagePlane flipped = target;
  flipped.u_axis = -target.u_axis;
  EXPECT_TRUE(evaluate_exercise(ex, PlaneEvidence{flipped}).passed);
}

TEST(Exercise, TargetHitThroughCenter) {
  const Exercise ex{SphereTarget{Vec3(40, 40, 40), 5.0}, 0};
  const auto r = evaluate_exercise(ex, CoreEvidence{{core_between(Vec3(30, 40, 40), Vec3(50, 40, 40))}});
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.score, 1.0);
  EXPECT_NEAR(*std::get<HitDetail>(r.detail).miss_distance, 0.0, 1e-12);
}

TEST(Exercise, TargetHitNearMiss) {
  const Exercise ex{SphereTarget{Vec3(40, 40, 40), 5.0}, 0};
  const auto r = evaluate_exercise(ex, CoreEvidence{{core_between(Vec3(30, 46, 40), Vec3(50, 46, 40))}});
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(*std::get<HitDetail>(r.detail).miss_distance, 6.0, 1e-12);
  EXPECT_NEAR(r.score, 5.0 / 6.0, 1e-12);
}

TEST(Exercise, TargetHitWithoutCoresFails) {
  const Exercise ex{SphereTarget{Vec3(40, 40, 40), 5.0}, 0};
  const auto r = evaluate_exercise(ex, CoreEvidence{});
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_FALSE(std::get<HitDetail>(r.detail).miss_distance);
}

TEST(Exercise, TargetHitAgreesWithSamplingOracle) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 100; ++i) {
    const Vec3 center = random_point(rng, 30, 50);
    const BiopsyCore c = core_between(random_point(rng, 20, 60), random_point(rng, 20, 60));
    const Exercise ex{SphereTarget{center, 5.0}, 0};
    const double got = *std::get<HitDetail>(evaluate_exercise(ex, CoreEvidence{{c}}).detail).miss_distance;
    const double len = (c.p1 - c.p0).norm();
    const int n = static_cast<int>(len / 0.01) + 1;
    double best = 1e9;
    for (int k = 0; k <= n; ++k) best = std::min(best, (center - (c.p0 + (double(k) / n) * (c.p1 - c.p0))).norm());
    EXPECT_NEAR(got, best, 0.01);
  }
}

TEST(Exercise, SchemeCompletion) {
  SchemeTarget tgt;
  const Exercise ex{tgt, 0};
  auto cores = perfect_cores();
  auto r = evaluate_exercise(ex, SessionEvidence{cores, gland()});
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.score, 1.0);

  cores.resize(9);
  r = evaluate_exercise(ex, SessionEvidence{cores, gland()});
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.score, 0.75);

  cores = perfect_cores();
  cores.push_back(core_between(Vec3(0, 0, 0), Vec3(1, 0, 0)));
  r = evaluate_exercise(ex, SessionEvidence{cores, gland()});
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.score, 1.0);
}

TEST(Exercise, EvidenceMismatch) {
  const Exercise ex{SphereTarget{Vec3(40, 40, 40), 5.0}, 0};
  EXPECT_THROW(evaluate_exercise(ex, PlaneEvidence{}), EvidenceMismatch);
  const Exercise scheme{SchemeTarget{}, 0};
  EXPECT_THROW(evaluate_exercise(scheme, CoreEvidence{}), EvidenceMismatch);
}

TEST(Exercise, PassImpliesThreshold) {
  std::mt19937_64 rng(2);
  ImagePlane target;
  target.origin = Vec3(40, 20, 60);
  target.u_axis = Vec3::UnitY();
  target.v_axis = -Vec3::UnitZ();
  target.width = 60;
  target.depth = 70;
  const Exercise ex{PlaneTarget{target}, 0};
  std::uniform_real_distribution<double> ang(-0.3, 0.3);
  for (int i = 0; i < 500; ++i) {
    ImagePlane p = target;
    p.origin += random_point(rng, -6, 6);
    const Mat3 r = rot_x(ang(rng)) * rot_z(ang(rng));
    p.u_axis = r * target.u_axis;
    p.v_axis = r * target.v_axis;
    const auto res = evaluate_exercise(ex, PlaneEvidence{p});
    if (res.passed) EXPECT_GE(res.score, pass_threshold(ExerciseKind::PlaneLocalization, ex));
    EXPECT_GE(res.score, 0.0);
    EXPECT_LE(res.score, 1.0);
  }
}

TEST(Recommend, RuleTableEnumeration) {
  // Each rule independently on or off: 16 combinations, output order fixed.
  for (int mask = 0; mask < 16; ++mask) {
    RecommendationInputs in;
    in.apex_coverage = (mask & 1) ? 0.25 : 1.0;
    in.boundary_miss_count = (mask & 2) ? 3 : 0;
    in.mean_in_gland_length = (mask & 4) ? 5.0 : 16.0;
    in.spread_cv = (mask & 8) ? 0.9 : 0.1;
    std::vector<std::string> expect;
    if (mask & 1) expect.push_back("apex");
    if (mask & 2) expect.push_back("boundary");
    if (mask & 4) expect.push_back("depth");
    if (mask & 8) expect.push_back("spread");
    if (expect.empty()) expect.push_back("maintenance");
    std::vector<std::string> got;
    for (const auto& r : recommend_exercises(in)) got.push_back(r.rationale);
    EXPECT_EQ(got, expect) << "mask " << mask;
  }
  RecommendationInputs all{0.0, 5, 1.0, 2.0};
  const auto recs = recommend_exercises(all);
  ASSERT_EQ(recs.size(), 4u);
  EXPECT_EQ(recs[0].kind, ExerciseKind::TargetHit);
  EXPECT_EQ(recs[1].kind, ExerciseKind::PlaneLocalization);
  EXPECT_EQ(recs[2].kind, ExerciseKind::TargetHit);
  EXPECT_EQ(recs[3].kind, ExerciseKind::SchemeCompletion);
}

TEST(Recommend, PerfectStatsGiveMaintenance) {
  const auto recs = recommend_exercises(session_stats(perfect_cores(), gland(), {}));
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].kind, ExerciseKind::SchemeCompletion);
  EXPECT_EQ(recs[0].rationale, "maintenance");
}

TEST(Recommend, PoorApexComesFirst) {
  SessionStats st = session_stats(perfect_cores(), gland(), {});
  st.apex_coverage = 0.25;
  const auto recs = recommend_exercises(st);
  ASSERT_FALSE(recs.empty());
  EXPECT_EQ(recs[0].kind, ExerciseKind::TargetHit);
  EXPECT_EQ(recs[0].rationale, "apex");
}

class Compare : public ::testing::Test {
 protected:
  CompareConfig base(int trials) {
    CompareConfig cfg;
    cfg.glands.nominal = gland();
    cfg.schemes = {twelve_core_scheme(), sextant_scheme()};
    cfg.trials = trials;
    cfg.noise.seed = 42;
    return cfg;
  }
};

TEST_F(Compare, ZeroNoiseTwelveCoreCoversAll) {
  const auto report = compare_protocols(base(300));
  EXPECT_EQ(report.schemes[0].mean_sector_coverage, 1.0);
  EXPECT_EQ(report.schemes[0].mean_apex_coverage, 1.0);
  EXPECT_EQ(report.schemes[1].mean_sector_coverage, 0.5);
}

TEST_F(Compare, OversizedTumorAlwaysDetected) {
  auto cfg = base(200);
  cfg.tumor_radius = 30.0;
  cfg.noise.angular_sigma = 0.05;
  for (const auto& s : compare_protocols(cfg).schemes) {
    EXPECT_EQ(s.detection_probability, 1.0);
    EXPECT_EQ(s.ci_half_width, 0.0);
  }
}

TEST_F(Compare, DeterministicAcrossThreadCounts) {
  auto cfg = base(400);
  cfg.noise.angular_sigma = 0.05;
  cfg.noise.depth_sigma = 2.0;
  cfg.threads = 1;
  const auto a = compare_protocols(cfg);
  cfg.threads = 4;
  const auto b = compare_protocols(cfg);
  for (std::size_t i = 0; i < a.schemes.size(); ++i) EXPECT_EQ(json(a.schemes[i]).dump(), json(b.schemes[i]).dump());
}

TEST_F(Compare, DoublingTrialsStaysWithinCi) {
  auto cfg = base(1000);
  const auto a = compare_protocols(cfg);
  cfg.trials = 2000;
  const auto b = compare_protocols(cfg);
  for (std::size_t i = 0; i < a.schemes.size(); ++i)
    EXPECT_LE(std::abs(a.schemes[i].detection_probability - b.schemes[i].detection_probability),
              3.0 * std::max(a.schemes[i].ci_half_width, 1e-9));
}

TEST_F(Compare, InfeasibleSchemeIsReportedAndSkipped) {
  auto cfg = base(10);
  cfg.schemes.push_back({"unreachable", {Vec3(0, 0, -50)}});
  const auto report = compare_protocols(cfg);
  ASSERT_EQ(report.schemes.size(), 3u);
  EXPECT_FALSE(report.schemes[2].feasible);
  EXPECT_FALSE(report.schemes[2].infeasible_reason.empty());
  EXPECT_TRUE(report.schemes[0].feasible);
}

TEST_F(Compare, CiMatchesTrialCount) {
  const auto report = compare_protocols(base(500));
  for (const auto& s : report.schemes) {
    const double p = s.detection_probability;
    EXPECT_NEAR(s.ci_half_width, 1.96 * std::sqrt(p * (1 - p) / 500), 1e-15);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(Tumor, PlacementKeepsBallInsideGland) {
  std::mt19937_64 rng(1);
  const ProstateModel m = gland();
  for (int i = 0; i < 200; ++i) EXPECT_GE(distance_to_surface(m, detail::place_tumor(m, 5.0, rng)), 5.0);
  EXPECT_EQ(detail::place_tumor(m, 20.0, rng), m.center);
}
