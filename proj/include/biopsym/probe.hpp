#pragma once

#include "biopsym/error.hpp"
#include "biopsym/geometry.hpp"
#include "biopsym/image.hpp"

#include <cmath>
#include <string>

namespace biopsym {

/// Transrectal probe pose about the anal pivot.
struct ProbePose {
  double pitch = 0.0;
  double yaw = 0.0;
  double roll = 0.0;
  double insertion = 0.0;

  friend bool operator==(const ProbePose&, const ProbePose&) = default;
};

/// Sector-shaped ultrasound footprint in image millimetres (x along u centred on the origin, y along v).
struct FanGeometry {
  double apex_x = 0.0;
  double apex_y = 0.0;
  double angular_span = 100.0 * kPi / 180.0;  // centred on +v
  double min_depth = 0.0;
  double max_depth = 70.0;

  void validate() const {
    if (!(angular_span > 0.0 && angular_span <= kPi)) throw InvalidParams("fan angular_span must lie in (0, pi]");
    if (!(min_depth >= 0.0 && min_depth < max_depth)) throw InvalidParams("fan depths must satisfy 0 <= min < max");
  }
};

struct ProbeLimits {
  double pitch_max = 0.6;
  double yaw_max = 0.6;
  double insertion_max = 60.0;
};

/// Fixed probe hardware and its mounting relative to the patient.
///
/// Probe frame: z along the probe shaft (forward), x towards the needle guide, y = z x x.
/// At zero pose z is `rest_axis` and x is `rest_up` made orthogonal to it.
struct ProbeRig {
  Vec3 pivot = Vec3(40.0, 12.0, 110.0);
  Vec3 rest_axis = Vec3(0.0, 0.0, -1.0);
  Vec3 rest_up = Vec3(0.0, 1.0, 0.0);
  ProbeLimits limits;
  double guide_angle = 35.0 * kPi / 180.0;
  double guide_offset = 8.0;
  double image_width = 60.0;
  double image_depth = 70.0;
  FanGeometry fan;

  void validate() const {
    if (std::abs(rest_axis.norm() - 1.0) > 1e-9) throw InvalidParams("rest_axis must be a unit vector");
    if (rest_up.cross(rest_axis).norm() < 1e-6) throw InvalidParams("rest_up must not be parallel to rest_axis");
    if (!(limits.pitch_max > 0.0 && limits.yaw_max > 0.0 && limits.insertion_max > 0.0))
      throw InvalidParams("probe limits must be positive");
    if (!(guide_angle > 0.0 && guide_angle < kPi / 2)) throw InvalidParams("guide angle must lie in (0, pi/2)");
    if (!(image_width > 0.0 && image_depth > 0.0)) throw InvalidParams("image extents must be positive");
    fan.validate();
  }

  /// Probe frame -> world rotation at zero pose.
  Mat3 rest_rotation() const {
    const Vec3 z = rest_axis.normalized();
    const Vec3 x = (rest_up - rest_up.dot(z) * z).normalized();
    Mat3 b;
    b.col(0) = x;
    b.col(1) = z.cross(x);
    b.col(2) = z;
    return b;
  }
};

inline void check_pose(const ProbeRig& rig, const ProbePose& pose) {
  if (!std::isfinite(pose.pitch) || !std::isfinite(pose.yaw) || !std::isfinite(pose.roll) || !std::isfinite(pose.insertion))
    throw PoseOutOfRange("pose has non-finite components");
  if (std::abs(pose.pitch) > rig.limits.pitch_max)
    throw PoseOutOfRange("pitch " + std::to_string(pose.pitch) + " exceeds pitch_max");
  if (std::abs(pose.yaw) > rig.limits.yaw_max) throw PoseOutOfRange("yaw " + std::to_string(pose.yaw) + " exceeds yaw_max");
  if (pose.insertion < 0.0) throw PoseOutOfRange("insertion below 0");
  if (pose.insertion > rig.limits.insertion_max) throw PoseOutOfRange("insertion exceeds insertion_max");
}

/// Pins every limited degree of freedom to the rig limits; `clamped` reports whether anything moved.
inline ProbePose clamp_pose(const ProbeRig& rig, ProbePose pose, bool* clamped = nullptr) {
  const ProbePose in = pose;
  auto finite_or_zero = [](double v) { return std::isfinite(v) ? v : 0.0; };
  pose.pitch = std::clamp(finite_or_zero(pose.pitch), -rig.limits.pitch_max, rig.limits.pitch_max);
  pose.yaw = std::clamp(finite_or_zero(pose.yaw), -rig.limits.yaw_max, rig.limits.yaw_max);
  pose.roll = finite_or_zero(pose.roll);
  pose.insertion = std::clamp(finite_or_zero(pose.insertion), 0.0, rig.limits.insertion_max);
  if (clamped) *clamped = !(pose == in);
  return pose;
}

/// Probe orientation without limit checks: rest · Rx(yaw) · Ry(pitch) · Rz(roll).
inline Mat3 probe_rotation(const ProbeRig& rig, const ProbePose& pose) {
  return rig.rest_rotation() * rot_x(pose.yaw) * rot_y(pose.pitch) * rot_z(pose.roll);
}

/// Probe frame -> world: Translate(pivot) · R(yaw, pitch, roll) · Translate(insertion z).
/// The frame origin is the probe tip.
inline Rigid pose_to_frame(const ProbeRig& rig, const ProbePose& pose) {
  check_pose(rig, pose);
  const Mat3 r = probe_rotation(rig, pose);
  Rigid frame = Rigid::Identity();
  frame.linear() = r;
  frame.translation() = rig.pivot + pose.insertion * r.col(2);
  return frame;
}

/// Probe-oriented image plane: origin at the tip, u = probe x, v = probe z.
inline ImagePlane image_plane(const ProbeRig& rig, const ProbePose& pose) {
  const Rigid frame = pose_to_frame(rig, pose);
  ImagePlane plane;
  plane.origin = frame.translation();
  plane.u_axis = frame.linear().col(0);
  plane.v_axis = frame.linear().col(2);
  plane.width = rig.image_width;
  plane.depth = rig.image_depth;
  return plane;
}

/// Needle guide ray; lies in the image plane at guide_angle from the probe axis.
inline Ray needle_ray(const ProbeRig& rig, const ProbePose& pose) {
  const Rigid frame = pose_to_frame(rig, pose);
  const Vec3 x = frame.linear().col(0);
  const Vec3 z = frame.linear().col(2);
  Ray ray;
  ray.origin = frame.translation() - rig.guide_offset * z;
  ray.direction = (std::cos(rig.guide_angle) * z + std::sin(rig.guide_angle) * x).normalized();
  return ray;
}

}  // namespace biopsym
