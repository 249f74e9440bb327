#include "biopsym/biopsy.hpp"
#include "biopsym/probe.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace biopsym;

namespace {

ProstateModel default_gland() {
  ProstateModel m;
  m.center = Vec3(40, 40, 40);
  return m;
}

ProbePose random_valid_pose(const ProbeRig& rig, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return {u(rng) * rig.limits.pitch_max, u(rng) * rig.limits.yaw_max, u(rng) * 4.0 * kPi,
          0.5 * (u(rng) + 1.0) * rig.limits.insertion_max};
}

// Frame built from elementary rotations written out by hand, not via Eigen::AngleAxis.
Mat3 hand_rot(int axis, double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  if (axis == 0) r << 1, 0, 0, 0, c, -s, 0, s, c;
  if (axis == 1) r << c, 0, s, 0, 1, 0, -s, 0, c;
  if (axis == 2) r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

}  // namespace

TEST(Kinematics, ZeroPoseAlignsWithRestAxis) {
  const ProbeRig rig;
  const Rigid f = pose_to_frame(rig, {});
  EXPECT_NEAR((f.linear().col(2) - rig.rest_axis).norm(), 0.0, 1e-15);
  EXPECT_NEAR((f.linear().col(0) - rig.rest_up).norm(), 0.0, 1e-15);
  EXPECT_EQ(f.translation(), rig.pivot);
}

TEST(Kinematics, MatrixCompositionOracle) {
  const ProbeRig rig;
  const ProbePose pose{0.2, -0.1, 0.3, 40.0};
  Mat3 base;
  base.col(0) = Vec3(0, 1, 0);
  base.col(1) = Vec3(0, 0, -1).cross(Vec3(0, 1, 0));
  base.col(2) = Vec3(0, 0, -1);
  const Mat3 r = base * hand_rot(0, -0.1) * hand_rot(1, 0.2) * hand_rot(2, 0.3);
  const Vec3 tip = rig.pivot + r * Vec3(0, 0, 40.0);
  const Rigid f = pose_to_frame(rig, pose);
  EXPECT_NEAR((f.linear() - r).norm(), 0.0, 1e-12);
  EXPECT_NEAR((f * Vec3::Zero() - tip).norm(), 0.0, 1e-12);
}

TEST(Kinematics, RollByPiFlipsImageX) {
  const ProbeRig rig;
  const ImagePlane a = image_plane(rig, {0, 0, 0.4, 20});
  const ImagePlane b = image_plane(rig, {0, 0, 0.4 + kPi, 20});
  EXPECT_NEAR((a.u_axis + b.u_axis).norm(), 0.0, 1e-12);
  EXPECT_NEAR((a.v_axis - b.v_axis).norm(), 0.0, 1e-12);
}

TEST(Kinematics, RotationsAreProperForRandomPoses) {
  const ProbeRig rig;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Rigid f = pose_to_frame(rig, random_valid_pose(rig, rng));
    EXPECT_LT(orthonormality_error(f.linear()), 1e-9);
    EXPECT_NEAR(f.linear().determinant(), 1.0, 1e-9);
  }
}

TEST(Kinematics, PivotIsFixedAtZeroInsertion) {
  const ProbeRig rig;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    ProbePose p = random_valid_pose(rig, rng);
    p.insertion = 0.0;
    EXPECT_EQ(pose_to_frame(rig, p).translation(), rig.pivot);
  }
}

TEST(Kinematics, LimitsAreErrorsNamingTheLimit) {
  const ProbeRig rig;
  try {
    pose_to_frame(rig, {0.7, 0, 0, 10});
    FAIL();
  } catch (const PoseOutOfRange& e) {
    EXPECT_NE(std::string(e.what()).find("pitch"), std::string::npos);
  }
  EXPECT_THROW(pose_to_frame(rig, {0, -0.61, 0, 10}), PoseOutOfRange);
  EXPECT_THROW(pose_to_frame(rig, {0, 0, 0, -1}), PoseOutOfRange);
  EXPECT_THROW(pose_to_frame(rig, {0, 0, 0, 61}), PoseOutOfRange);
  EXPECT_NO_THROW(pose_to_frame(rig, {0.6, -0.6, 100.0, 60}));
}

TEST(Kinematics, ClampPinsToLimits) {
  const ProbeRig rig;
  bool clamped = false;
  const ProbePose p = clamp_pose(rig, {2.0, -3.0, 0.5, 99}, &clamped);
  EXPECT_TRUE(clamped);
  EXPECT_EQ(p.pitch, rig.limits.pitch_max);
  EXPECT_EQ(p.yaw, -rig.limits.yaw_max);
  EXPECT_EQ(p.roll, 0.5);
  EXPECT_EQ(p.insertion, rig.limits.insertion_max);
  clamp_pose(rig, {0.1, 0.1, 0.1, 1}, &clamped);
  EXPECT_FALSE(clamped);
}

TEST(ImagePlaneFromPose, NormalTipAndInsertion) {
  const ProbeRig rig;
  const ImagePlane zero = image_plane(rig, {});
  const Rigid f0 = pose_to_frame(rig, {});
  EXPECT_NEAR((zero.normal() - f0.linear().col(1)).norm(), 0.0, 1e-12);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const ProbePose p = random_valid_pose(rig, rng);
    const ImagePlane plane = image_plane(rig, p);
    const Vec3 tip = pose_to_frame(rig, p).translation();
    EXPECT_LT(std::abs((tip - plane.origin).dot(plane.normal())), 1e-9);
    ProbePose q = p;
    q.insertion = p.insertion * 0.5;
    const ImagePlane other = image_plane(rig, q);
    EXPECT_NEAR((plane.normal() - other.normal()).norm(), 0.0, 1e-12);
    EXPECT_NEAR((plane.origin - other.origin).norm(), p.insertion - q.insertion, 1e-9);
    if (p.insertion > 1e-3) EXPECT_NEAR(((plane.origin - other.origin).normalized() - plane.v_axis).norm(), 0.0, 1e-9);
  }
}

TEST(Needle, InPlaneAtGuideAngle) {
  const ProbeRig rig;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 500; ++i) {
    const ProbePose p = random_valid_pose(rig, rng);
    const Ray ray = needle_ray(rig, p);
    const ImagePlane plane = image_plane(rig, p);
    EXPECT_LT(std::abs(ray.direction.dot(plane.normal())), 1e-9);
    EXPECT_LT(std::abs((ray.origin - plane.origin).dot(plane.normal())), 1e-9);
    EXPECT_NEAR(angle_between(ray.direction, plane.v_axis), rig.guide_angle, 1e-9);
  }
}

TEST(Needle, ZeroPoseHandBuilt) {
  const ProbeRig rig;
  const double a = 0.6109;
  ProbeRig r2 = rig;
  r2.guide_angle = a;
  const Ray ray = needle_ray(r2, {});
  // Probe z = world -z, probe x = world +y at rest.
  EXPECT_NEAR((ray.origin - (rig.pivot - 8.0 * Vec3(0, 0, -1))).norm(), 0.0, 1e-12);
  EXPECT_NEAR((ray.direction - Vec3(0, std::sin(a), -std::cos(a))).norm(), 0.0, 1e-12);
}

TEST(Needle, RollEquivariance) {
  const ProbeRig rig;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    ProbePose p = random_valid_pose(rig, rng);
    const double delta = 0.37;
    ProbePose q = p;
    q.roll += delta;
    const Rigid f = pose_to_frame(rig, p);
    const Mat3 about_axis = Eigen::AngleAxisd(delta, f.linear().col(2)).toRotationMatrix();
    const Ray a = needle_ray(rig, p);
    const Ray b = needle_ray(rig, q);
    EXPECT_NEAR((about_axis * a.direction - b.direction).norm(), 0.0, 1e-9);
    EXPECT_NEAR((a.origin - b.origin).norm(), 0.0, 1e-9);
  }
}

TEST(Fire, CoreGeometry) {
  const ProbeRig rig;
  const GunParams gun;
  const ProstateModel m = default_gland();
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> depth(0.0, gun.max_needle_depth());
  for (int i = 0; i < 200; ++i) {
    const ProbePose p = random_valid_pose(rig, rng);
    const double d = depth(rng);
    const BiopsyCore c = fire(rig, p, d, gun, m, {});
    EXPECT_NEAR((c.p1 - c.p0).norm(), gun.core_length, 1e-12);
    const Ray ray = needle_ray(rig, p);
    EXPECT_NEAR((c.p0 - ray.at(d + gun.throw_start)).norm(), 0.0, 1e-12);
    EXPECT_GE(c.in_gland_length, 0.0);
    EXPECT_LE(c.in_gland_length, gun.core_length + 1e-12);
    EXPECT_EQ(c.sector.has_value(), c.in_gland_length > 0.0);
  }
}

TEST(Fire, DepthOutOfRange) {
  const GunParams gun;
  EXPECT_THROW(fire({}, {}, -0.1, gun, default_gland(), {}), DepthOutOfRange);
  EXPECT_THROW(fire({}, {}, gun.max_needle_depth() + 0.1, gun, default_gland(), {}), DepthOutOfRange);
  EXPECT_THROW(fire({}, {0.9, 0, 0, 0}, 10, gun, default_gland(), {}), PoseOutOfRange);
}

TEST(Fire, AimedAwayMisses) {
  const ProbeRig rig;
  const BiopsyCore c = fire(rig, {0, 0, kPi, 0}, 0.0, {}, default_gland(), {});
  EXPECT_EQ(c.in_gland_length, 0.0);
  EXPECT_FALSE(c.sector);
  EXPECT_FALSE(c.gland_segment);
}

TEST(Fire, CentralCoreFullyContained) {
  const ProbeRig rig;
  const GunParams gun;
  const ProstateModel m = default_gland();
  const AimSolution aim = aim_core_midpoint(rig, gun, m.center);
  const BiopsyCore c = fire(rig, aim.pose, aim.needle_depth, gun, m, {});
  EXPECT_NEAR(c.in_gland_length, 17.0, 1e-9);
  EXPECT_NEAR((0.5 * (c.p0 + c.p1) - m.center).norm(), 0.0, 1e-9);
}

TEST(Fire, InGlandLengthMatchesDenseOracle) {
  const ProbeRig rig;
  const GunParams gun;
  ProstateModel m = default_gland();
  m.orientation = Eigen::AngleAxisd(0.2, Vec3(0, 1, 1).normalized()).toRotationMatrix();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> depth(0.0, gun.max_needle_depth());
  int fired = 0, nonzero = 0;
  while (fired < 50) {
    const BiopsyCore c = fire(rig, random_valid_pose(rig, rng), depth(rng), gun, m, {});
    long inside = 0;
    const int n = 1700;
    for (int i = 0; i < n; ++i)
      if (contains(m, c.p0 + ((i + 0.5) / n) * (c.p1 - c.p0))) ++inside;
    EXPECT_NEAR(c.in_gland_length, inside * gun.core_length / n, 0.05);
    nonzero += c.in_gland_length > 0;
    ++fired;
  }
  EXPECT_GT(nonzero, 0);
}

TEST(Targets, ClassifyRoundTripAndSymmetry) {
  const ProstateModel m = default_gland();
  const SectorScheme12 scheme;
  std::set<std::pair<long, long>> seen;
  for (int i = 0; i < kSectorCount; ++i) {
    const SectorId id = SectorId::from_index(i);
    const Vec3 t = sector_midpoint_target(m, scheme, id);
    EXPECT_TRUE(contains(m, t));
    EXPECT_EQ(classify_sector(m, scheme, t), id);
    SectorId mirror = id;
    mirror.side = id.side == Side::Left ? Side::Right : Side::Left;
    const Vec3 tm = sector_midpoint_target(m, scheme, mirror);
    EXPECT_NEAR(tm.x() - m.center.x(), -(t.x() - m.center.x()), 1e-9);
    EXPECT_NEAR(tm.y(), t.y(), 1e-9);
    EXPECT_NEAR(tm.z(), t.z(), 1e-9);
    seen.insert({std::lround(t.x() * 1000), std::lround(t.z() * 1000)});
  }
  EXPECT_EQ(seen.size(), 12u);
  const Vec3 rmm = m.normalized(sector_midpoint_target(m, scheme, *SectorId::parse("Right-Mid-Medial")));
  EXPECT_GT(rmm.x(), 0.0);
  EXPECT_LT(rmm.x(), scheme.lateral_threshold);
  EXPECT_GT(rmm.z(), scheme.axial_cuts[0]);
  EXPECT_LT(rmm.z(), scheme.axial_cuts[1]);
}

TEST(Aim, PerfectSessionHitsTwelveSectors) {
  const ProbeRig rig;
  const GunParams gun;
  const ProstateModel m = default_gland();
  std::set<int> sectors;
  for (int i = 0; i < kSectorCount; ++i) {
    const Vec3 t = sector_midpoint_target(m, {}, SectorId::from_index(i));
    const AimSolution aim = aim_core_midpoint(rig, gun, t);
    EXPECT_NO_THROW(check_pose(rig, aim.pose));
    const BiopsyCore c = fire(rig, aim.pose, aim.needle_depth, gun, m, {});
    EXPECT_NEAR((0.5 * (c.p0 + c.p1) - t).norm(), 0.0, 1e-9);
    ASSERT_TRUE(c.sector);
    sectors.insert(c.sector->index());
    EXPECT_EQ(c.sector->index(), i);
  }
  EXPECT_EQ(sectors.size(), 12u);
}

TEST(Aim, PrefersUntiltedShaft) {
  const ProbeRig rig;
  const AimSolution aim = aim_core_midpoint(rig, {}, Vec3(40, 40, 40));
  EXPECT_EQ(aim.pose.pitch, 0.0);
  EXPECT_EQ(aim.pose.yaw, 0.0);
}

TEST(Aim, TiltedSolutionsWhenInsertionAloneCannotReach) {
  const ProbeRig rig;
  const GunParams gun;
  std::mt19937_64 rng(9);
  int tilted = 0;
  for (int i = 0; i < 200; ++i) {
    const Vec3 target = Vec3(40, 40, 40) + biopsym::testing::random_point(rng, -25, 25);
    AimSolution aim;
    try {
      aim = aim_core_midpoint(rig, gun, target);
    } catch (const InfeasibleTarget&) {
      continue;
    }
    tilted += aim.pose.pitch != 0.0 || aim.pose.yaw != 0.0;
    const BiopsyCore c = fire(rig, aim.pose, aim.needle_depth, gun, default_gland(), {});
    EXPECT_NEAR((0.5 * (c.p0 + c.p1) - target).norm(), 0.0, 1e-6);
  }
  EXPECT_GT(tilted, 0);
}

TEST(Aim, UnreachableTargetThrows) {
  EXPECT_THROW(aim_core_midpoint({}, {}, Vec3(40, 12, 300)), InfeasibleTarget);
}
