#pragma once

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

namespace biopsym {

// All lengths are millimetres, all angles radians, world frame unless noted.
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rigid = Eigen::Isometry3d;

inline constexpr double kPi = std::numbers::pi;

struct Segment {
  Vec3 p0;
  Vec3 p1;

  double length() const { return (p1 - p0).norm(); }
  Vec3 midpoint() const { return 0.5 * (p0 + p1); }
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit

  Vec3 at(double distance) const { return origin + distance * direction; }
};

inline Mat3 rot_x(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix(); }

/// Max-norm of RᵀR − I.
inline double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

inline bool is_proper_rotation(const Mat3& r, double tol = 1e-9) {
  return orthonormality_error(r) < tol && std::abs(r.determinant() - 1.0) < tol;
}

/// Closest distance from a point to a closed segment.
inline double point_segment_distance(const Vec3& p, const Segment& s) {
  const Vec3 d = s.p1 - s.p0;
  const double len2 = d.squaredNorm();
  if (len2 == 0.0) return (p - s.p0).norm();
  const double t = std::clamp((p - s.p0).dot(d) / len2, 0.0, 1.0);
  return (p - (s.p0 + t * d)).norm();
}

/// Angle in [0, π] between two non-zero vectors, robust near 0 and π.
inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace biopsym
