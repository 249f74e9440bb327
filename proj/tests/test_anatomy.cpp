#include "biopsym/anatomy.hpp"
#include "biopsym/geometry.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace biopsym;
using biopsym::testing::random_point;
using biopsym::testing::random_unit;

namespace {

ProstateModel centered_gland() {
  ProstateModel m;
  m.center = Vec3(40, 40, 40);
  return m;
}

ProstateModel tilted_gland() {
  ProstateModel m = centered_gland();
  m.orientation = (Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized())).toRotationMatrix();
  return m;
}

// Counts 10 µm steps whose midpoints lie inside the gland.
double dense_length(const ProstateModel& m, const Vec3& p0, const Vec3& p1) {
  const double len = (p1 - p0).norm();
  const auto n = static_cast<long>(std::ceil(len / 0.01));
  const double step = len / n;
  long inside = 0;
  for (long i = 0; i < n; ++i)
    if (contains(m, p0 + ((i + 0.5) / n) * (p1 - p0))) ++inside;
  return inside * step;
}

}  // namespace

TEST(Geometry, PointSegmentDistanceMatchesSampling) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Segment s{random_point(rng, 0, 20), random_point(rng, 0, 20)};
    const Vec3 p = random_point(rng, -5, 25);
    double best = 1e9;
    const int n = static_cast<int>(s.length() / 0.01) + 1;
    for (int i = 0; i <= n; ++i) best = std::min(best, (p - (s.p0 + (double(i) / n) * (s.p1 - s.p0))).norm());
    EXPECT_NEAR(point_segment_distance(p, s), best, 0.01);
  }
}

TEST(Geometry, DegenerateSegmentDistanceIsPointDistance) {
  const Segment s{Vec3(1, 2, 3), Vec3(1, 2, 3)};
  EXPECT_DOUBLE_EQ(point_segment_distance(Vec3(1, 2, 7), s), 4.0);
}

TEST(Contains, CenterSurfaceAndOutside) {
  const ProstateModel m = centered_gland();
  EXPECT_TRUE(contains(m, m.center));
  EXPECT_FALSE(contains(m, m.center + Vec3(44, 0, 0)));
  EXPECT_TRUE(contains(m, m.center + Vec3(22, 0, 0)));
}

TEST(Contains, InvariantUnderOwnOrientation) {
  const ProstateModel m = tilted_gland();
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 g = random_point(rng, -30, 30);
    const Vec3 q = g.cwiseQuotient(m.semi_axes);
    const double r = q.squaredNorm();
    if (std::abs(r - 1.0) < 1e-9) continue;
    EXPECT_EQ(contains(m, m.to_world(g)), r <= 1.0);
  }
}

TEST(Contains, VolumeIsClosedForm) {
  EXPECT_NEAR(centered_gland().volume_cc(), 4.0 * kPi * 22 * 18 * 25 / 3000.0, 1e-12);
  EXPECT_NEAR(centered_gland().volume_cc(), 41.469, 1e-3);
}

TEST(Intersection, ChordThroughCenterIsDiameter) {
  const ProstateModel m = centered_gland();
  const auto hit = segment_gland_intersection(m, m.center - Vec3(30, 0, 0), m.center + Vec3(30, 0, 0));
  EXPECT_NEAR(hit.length, 44.0, 1e-12);
  ASSERT_TRUE(hit.clipped);
  EXPECT_NEAR((hit.clipped->p0 - (m.center - Vec3(22, 0, 0))).norm(), 0.0, 1e-12);
}

TEST(Intersection, DisjointSegment) {
  const ProstateModel m = centered_gland();
  const auto hit = segment_gland_intersection(m, Vec3(100, 100, 100), Vec3(110, 100, 100));
  EXPECT_EQ(hit.length, 0.0);
  EXPECT_FALSE(hit.clipped);
}

TEST(Intersection, TangentContactIsDegeneratePoint) {
  const ProstateModel m = centered_gland();
  const auto hit = segment_gland_intersection(m, m.center + Vec3(22, 0, -10), m.center + Vec3(22, 0, 10));
  EXPECT_NEAR(hit.length, 0.0, 1e-9);
  ASSERT_TRUE(hit.clipped);
  EXPECT_NEAR((hit.clipped->p0 - (m.center + Vec3(22, 0, 0))).norm(), 0.0, 1e-6);
}

TEST(Intersection, DegenerateSegmentThrows) {
  EXPECT_THROW(segment_gland_intersection(centered_gland(), Vec3(1, 1, 1), Vec3(1, 1, 1)), DegenerateSegment);
}

TEST(Intersection, FullyInsideSegmentKeepsLength) {
  const ProstateModel m = centered_gland();
  const auto hit = segment_gland_intersection(m, m.center, m.center + Vec3(3, 4, 0));
  EXPECT_NEAR(hit.length, 5.0, 1e-12);
}

TEST(Intersection, MatchesDenseSamplingOracle) {
  const ProstateModel m = tilted_gland();
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const Vec3 p0 = m.center + random_point(rng, -35, 35);
    const Vec3 p1 = m.center + random_point(rng, -35, 35);
    EXPECT_NEAR(segment_gland_intersection(m, p0, p1).length, dense_length(m, p0, p1), 0.05);
  }
}

TEST(Intersection, SymmetricAndBounded) {
  const ProstateModel m = tilted_gland();
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p0 = m.center + random_point(rng, -60, 60);
    const Vec3 p1 = m.center + random_point(rng, -60, 60);
    const double a = segment_gland_intersection(m, p0, p1).length;
    const double b = segment_gland_intersection(m, p1, p0).length;
    EXPECT_NEAR(a, b, 1e-9);
    EXPECT_LE(a, (p1 - p0).norm() + 1e-9);
    EXPECT_LE(a, 2.0 * m.semi_axes.maxCoeff() + 1e-9);
  }
}

TEST(Sectors, NamesRoundTripAndAreDistinct) {
  std::set<std::string> names;
  for (int i = 0; i < kSectorCount; ++i) {
    const SectorId id = SectorId::from_index(i);
    EXPECT_EQ(id.index(), i);
    names.insert(id.name());
    ASSERT_TRUE(SectorId::parse(id.name()));
    EXPECT_EQ(*SectorId::parse(id.name()), id);
  }
  EXPECT_EQ(names.size(), 12u);
  EXPECT_FALSE(SectorId::parse("Right-Middle-Medial"));
}

TEST(Sectors, CenterIsRightMidMedial) {
  const ProstateModel m = centered_gland();
  EXPECT_EQ(classify_sector(m, {}, m.center).name(), "Right-Mid-Medial");
}

TEST(Sectors, TieBreaks) {
  const ProstateModel m;
  const SectorScheme12 s;
  EXPECT_EQ(classify_normalized(m, s, Vec3(0.5, 0, 0)).track, Track::Lateral);
  EXPECT_EQ(classify_normalized(m, s, Vec3(-0.5, 0, 0)).track, Track::Lateral);
  EXPECT_EQ(classify_normalized(m, s, Vec3(0, 0, 1.0 / 3.0)).zone, Zone::Apex);
  EXPECT_EQ(classify_normalized(m, s, Vec3(0, 0, -1.0 / 3.0)).zone, Zone::Mid);
  EXPECT_EQ(classify_normalized(m, s, Vec3(-1e-12, 0, -0.5)).name(), "Left-Base-Medial");
}

TEST(Sectors, ApexFollowsApexDirection) {
  ProstateModel m;
  m.apex_direction = -Vec3::UnitZ();
  EXPECT_EQ(classify_normalized(m, {}, Vec3(0, 0, -0.8)).zone, Zone::Apex);
  EXPECT_EQ(classify_normalized(m, {}, Vec3(0, 0, 0.8)).zone, Zone::Base);
}

TEST(Sectors, OutsideGlandThrows) {
  const ProstateModel m = centered_gland();
  EXPECT_THROW(classify_sector(m, {}, m.center + Vec3(30, 0, 0)), OutsideGland);
}

TEST(Sectors, MirrorFlipsSideOnly) {
  const ProstateModel m = centered_gland();
  std::mt19937_64 rng(8);
  int checked = 0;
  while (checked < 2000) {
    const Vec3 g = random_point(rng, -1, 1).cwiseProduct(m.semi_axes);
    if (g.cwiseQuotient(m.semi_axes).squaredNorm() > 1.0 || g.x() == 0.0) continue;
    const SectorId a = classify_sector(m, {}, m.to_world(g));
    const SectorId b = classify_sector(m, {}, m.to_world(Vec3(-g.x(), g.y(), g.z())));
    EXPECT_NE(a.side, b.side);
    EXPECT_EQ(a.zone, b.zone);
    EXPECT_EQ(a.track, b.track);
    ++checked;
  }
}

TEST(Sectors, SchemeValidation) {
  SectorScheme12 s;
  s.lateral_threshold = 1.0;
  EXPECT_THROW(s.validate(), InvalidParams);
  s = {};
  s.axial_cuts = {0.2, 0.1};
  EXPECT_THROW(s.validate(), InvalidParams);
}

TEST(Surface, DistanceMatchesSphereAndSampling) {
  ProstateModel sphere;
  sphere.semi_axes = Vec3(10, 10, 10);
  EXPECT_NEAR(distance_to_surface(sphere, Vec3(3, 0, 0)), 7.0, 1e-9);
  EXPECT_EQ(distance_to_surface(sphere, Vec3(11, 0, 0)), 0.0);

  const ProstateModel m = tilted_gland();
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    Vec3 p;
    do p = m.center + random_point(rng, -20, 20);
    while (!contains(m, p));
    // Oracle: shortest distance to the boundary along many directions (an upper bound that
    // converges to the true distance).
    double best = 1e9;
    for (int k = 0; k < 20000; ++k) {
      const Vec3 d = random_unit(rng);
      const auto hit = segment_gland_intersection(m, p, p + 100.0 * d);
      best = std::min(best, hit.length);
    }
    const double got = distance_to_surface(m, p);
    EXPECT_LE(got, best + 1e-9);
    EXPECT_NEAR(got, best, 0.1);
  }
}
