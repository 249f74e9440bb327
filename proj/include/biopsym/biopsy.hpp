#pragma once

#include "biopsym/anatomy.hpp"
#include "biopsym/error.hpp"
#include "biopsym/geometry.hpp"
#include "biopsym/probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace biopsym {

struct GunParams {
  double throw_start = 5.0;
  double core_length = 17.0;  // 18-gauge core
  double max_reach = 100.0;

  void validate() const {
    if (!(core_length > 0.0)) throw InvalidParams("core_length must be positive");
    if (!(throw_start >= 0.0)) throw InvalidParams("throw_start must be >= 0");
    if (!(max_reach >= throw_start + core_length)) throw InvalidParams("max_reach shorter than throw + core");
  }

  double max_needle_depth() const { return max_reach - core_length - throw_start; }

  /// Distance along the guide ray from the needle tip to the core midpoint.
  double midpoint_offset() const { return throw_start + 0.5 * core_length; }
};

/// One fired biopsy. `id` and `fired_at` are assigned when the core is stored.
struct BiopsyCore {
  std::uint64_t id = 0;
  std::int64_t fired_at = 0;  // ms since epoch
  ProbePose pose;
  double needle_depth = 0.0;
  Vec3 p0 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  double in_gland_length = 0.0;
  std::optional<Segment> gland_segment;
  std::optional<SectorId> sector;

  friend bool operator==(const BiopsyCore& a, const BiopsyCore& b) {
    auto seg_eq = [](const std::optional<Segment>& x, const std::optional<Segment>& y) {
      if (x.has_value() != y.has_value()) return false;
      return !x || (x->p0 == y->p0 && x->p1 == y->p1);
    };
    return a.id == b.id && a.fired_at == b.fired_at && a.pose == b.pose && a.needle_depth == b.needle_depth &&
           a.p0 == b.p0 && a.p1 == b.p1 && a.in_gland_length == b.in_gland_length &&
           seg_eq(a.gland_segment, b.gland_segment) && a.sector == b.sector;
  }

  Segment segment() const { return {p0, p1}; }

  /// Midpoint of the in-gland part, or of the whole core when it missed the gland.
  Vec3 sample_midpoint() const { return gland_segment ? gland_segment->midpoint() : 0.5 * (p0 + p1); }
};

/// Fires the gun along the guide ray with the needle tip `needle_depth` mm down the ray.
inline BiopsyCore fire(const ProbeRig& rig, const ProbePose& pose, double needle_depth, const GunParams& gun,
                       const ProstateModel& model, const SectorScheme12& scheme) {
  const Ray ray = needle_ray(rig, pose);
  if (!(needle_depth >= 0.0 && needle_depth <= gun.max_needle_depth()))
    throw DepthOutOfRange("needle depth outside [0, max_reach - core_length - throw_start]");

  BiopsyCore core;
  core.pose = pose;
  core.needle_depth = needle_depth;
  const Vec3 tip = ray.at(needle_depth);
  core.p0 = tip + gun.throw_start * ray.direction;
  core.p1 = core.p0 + gun.core_length * ray.direction;
  const GlandIntersection hit = segment_gland_intersection(model, core.p0, core.p1);
  core.in_gland_length = hit.length;
  if (hit.length > 0.0) {
    core.gland_segment = hit.clipped;
    core.sector = classify_normalized(model, scheme, model.normalized(hit.clipped->midpoint()));
  }
  return core;
}

/// Centroids of the 12 sector regions in normalized gland coordinates (unit ball), by midpoint
/// quadrature on a regular grid. Each centroid lies strictly inside its (convex) sector.
inline std::array<Vec3, kSectorCount> sector_centroids_normalized(const ProstateModel& model, const SectorScheme12& scheme,
                                                                  int grid = 64) {
  std::array<Vec3, kSectorCount> sum;
  sum.fill(Vec3::Zero());
  std::array<long, kSectorCount> count{};
  const double h = 2.0 / grid;
  for (int k = 0; k < grid; ++k) {
    const double w = -1.0 + (k + 0.5) * h;
    for (int j = 0; j < grid; ++j) {
      const double v = -1.0 + (j + 0.5) * h;
      for (int i = 0; i < grid; ++i) {
        const double u = -1.0 + (i + 0.5) * h;
        const Vec3 q(u, v, w);
        if (q.squaredNorm() > 1.0) continue;
        const int s = classify_normalized(model, scheme, q).index();
        sum[s] += q;
        ++count[s];
      }
    }
  }
  std::array<Vec3, kSectorCount> out;
  for (int s = 0; s < kSectorCount; ++s) {
    if (count[s] == 0) throw InvalidParams("sector scheme leaves sector " + SectorId::from_index(s).name() + " empty");
    out[s] = sum[s] / static_cast<double>(count[s]);
  }
  return out;
}

/// Representative interior point of a sector, in world coordinates.
inline Vec3 sector_midpoint_target(const ProstateModel& model, const SectorScheme12& scheme, SectorId sector) {
  return model.from_normalized(sector_centroids_normalized(model, scheme)[sector.index()]);
}

struct AimSolution {
  ProbePose pose;
  double needle_depth = 0.0;
};

/// Pose and needle depth putting the core midpoint on `target`.
///
/// Tries zero pitch/yaw first (reach by insertion, roll and depth alone). Otherwise, candidate
/// needle depths are tried in order of distance from the preferred one and the probe axis is
/// tilted, within the plane spanned by the rest axis and the target direction, the least amount
/// that puts the target at the right distance from the shaft.
inline AimSolution aim_core_midpoint(const ProbeRig& rig, const GunParams& gun, const Vec3& target) {
  const Mat3 rest = rig.rest_rotation();
  const Vec3 d = rest.transpose() * (target - rig.pivot);  // rest probe frame
  const double dist = d.norm();
  if (dist < 1e-9) throw InfeasibleTarget("target coincides with the pivot");
  const Vec3 dhat = d / dist;
  const double sin_a = std::sin(rig.guide_angle);
  const double cos_a = std::cos(rig.guide_angle);
  const double depth_max = gun.max_needle_depth();
  const double mid_off = gun.midpoint_offset();

  auto solve_for_depth = [&](double depth) -> std::optional<AimSolution> {
    const double reach = depth + mid_off;
    const double sin_theta = reach * sin_a / dist;
    if (sin_theta > 1.0) return std::nullopt;
    const double theta = std::asin(sin_theta);
    // Unit vector perpendicular to dhat, pointing towards the rest axis.
    Vec3 toward = Vec3::UnitZ() - dhat.z() * dhat;
    if (toward.norm() < 1e-12) toward = -Vec3::UnitX() - (-dhat.x()) * dhat;
    toward.normalize();
    const Vec3 axis = std::cos(theta) * dhat + std::sin(theta) * toward;

    ProbePose pose;
    pose.pitch = std::asin(std::clamp(axis.x(), -1.0, 1.0));
    pose.yaw = std::atan2(-axis.y(), axis.z());
    pose.insertion = dist * std::cos(theta) - reach * cos_a + rig.guide_offset;
    if (std::abs(pose.pitch) > rig.limits.pitch_max || std::abs(pose.yaw) > rig.limits.yaw_max) return std::nullopt;
    if (pose.insertion < 0.0 || pose.insertion > rig.limits.insertion_max) return std::nullopt;

    const Vec3 perp = d - d.dot(axis) * axis;
    const Mat3 tilt = rot_x(pose.yaw) * rot_y(pose.pitch);
    const Vec3 e = tilt.transpose() * perp;
    pose.roll = std::atan2(e.y(), e.x());
    return AimSolution{pose, depth};
  };

  // Preferred: untilted shaft.
  {
    const double rho = std::hypot(d.x(), d.y());
    const double depth = rho / sin_a - mid_off;
    const double insertion = d.z() - (rho / sin_a) * cos_a + rig.guide_offset;
    if (depth >= 0.0 && depth <= depth_max && insertion >= 0.0 && insertion <= rig.limits.insertion_max) {
      ProbePose pose;
      pose.insertion = insertion;
      pose.roll = std::atan2(d.y(), d.x());
      return AimSolution{pose, depth};
    }
  }

  const double preferred = std::clamp(std::hypot(d.x(), d.y()) / sin_a - mid_off, 0.0, depth_max);
  constexpr int kSteps = 400;
  std::vector<double> candidates;
  candidates.reserve(kSteps + 2);
  candidates.push_back(preferred);
  for (int i = 0; i <= kSteps; ++i) candidates.push_back(depth_max * i / kSteps);
  std::stable_sort(candidates.begin() + 1, candidates.end(),
                   [&](double a, double b) { return std::abs(a - preferred) < std::abs(b - preferred); });
  for (double depth : candidates)
    if (auto sol = solve_for_depth(depth)) return *sol;
  throw InfeasibleTarget("target not reachable within probe limits");
}

}  // namespace biopsym
