#pragma once

#include "biopsym/error.hpp"
#include "biopsym/geometry.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace biopsym {

/// Prostate gland as an oriented ellipsoid.
///
/// Gland frame axes: x lateral (semi-axis a), y antero-posterior (b), z cranio-caudal (c).
/// `orientation` maps gland-frame directions to world directions.
struct ProstateModel {
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes = Vec3(22.0, 18.0, 25.0);
  Mat3 orientation = Mat3::Identity();
  Vec3 apex_direction = Vec3::UnitZ();  // gland frame, base -> apex

  void validate() const {
    if (!(semi_axes.minCoeff() > 0.0)) throw InvalidParams("gland semi-axes must be positive");
    if (!is_proper_rotation(orientation)) throw InvalidParams("gland orientation is not a proper rotation");
    if (std::abs(apex_direction.norm() - 1.0) > 1e-9) throw InvalidParams("apex_direction must be a unit vector");
  }

  Vec3 to_gland(const Vec3& world) const { return orientation.transpose() * (world - center); }
  Vec3 to_world(const Vec3& gland) const { return center + orientation * gland; }

  /// Gland-frame point divided by the semi-axes; the gland is the closed unit ball in these coordinates.
  Vec3 normalized(const Vec3& world) const { return to_gland(world).cwiseQuotient(semi_axes); }
  Vec3 from_normalized(const Vec3& uvw) const { return to_world(uvw.cwiseProduct(semi_axes)); }

  double volume_cc() const { return 4.0 * kPi * semi_axes.prod() / 3000.0; }
};

struct SectorScheme12 {
  double lateral_threshold = 0.5;
  std::array<double, 2> axial_cuts = {-1.0 / 3.0, 1.0 / 3.0};

  void validate() const {
    if (!(lateral_threshold > 0.0 && lateral_threshold < 1.0))
      throw InvalidParams("lateral_threshold must lie in (0, 1)");
    if (!(-1.0 < axial_cuts[0] && axial_cuts[0] < axial_cuts[1] && axial_cuts[1] < 1.0))
      throw InvalidParams("axial cuts must be strictly increasing inside (-1, 1)");
  }
};

enum class Side : std::uint8_t { Left, Right };
enum class Zone : std::uint8_t { Base, Mid, Apex };
enum class Track : std::uint8_t { Medial, Lateral };

struct SectorId {
  Side side = Side::Right;
  Zone zone = Zone::Mid;
  Track track = Track::Medial;

  friend bool operator==(const SectorId&, const SectorId&) = default;

  /// Dense index in [0, 12).
  int index() const { return static_cast<int>(side) * 6 + static_cast<int>(zone) * 2 + static_cast<int>(track); }

  static SectorId from_index(int i) {
    return {static_cast<Side>(i / 6), static_cast<Zone>((i / 2) % 3), static_cast<Track>(i % 2)};
  }

  bool is_apex() const { return zone == Zone::Apex; }

  std::string name() const {
    static constexpr std::array<std::string_view, 2> sides = {"Left", "Right"};
    static constexpr std::array<std::string_view, 3> zones = {"Base", "Mid", "Apex"};
    static constexpr std::array<std::string_view, 2> tracks = {"Medial", "Lateral"};
    std::string out;
    out += sides[static_cast<int>(side)];
    out += '-';
    out += zones[static_cast<int>(zone)];
    out += '-';
    out += tracks[static_cast<int>(track)];
    return out;
  }

  /// Inverse of name(); returns nullopt for anything else.
  static std::optional<SectorId> parse(std::string_view text) {
    for (int i = 0; i < 12; ++i) {
      const SectorId id = from_index(i);
      if (id.name() == text) return id;
    }
    return std::nullopt;
  }
};

inline constexpr int kSectorCount = 12;
inline constexpr int kApexSectorCount = 4;

inline bool contains(const ProstateModel& model, const Vec3& p) { return model.normalized(p).squaredNorm() <= 1.0; }

struct GlandIntersection {
  double length = 0.0;
  std::optional<Segment> clipped;
};

/// Clips the segment [p0, p1] against the gland ellipsoid.
/// A tangent contact yields length 0 with a degenerate clipped segment.
inline GlandIntersection segment_gland_intersection(const ProstateModel& model, const Vec3& p0, const Vec3& p1) {
  const Vec3 d_world = p1 - p0;
  const double seg_len = d_world.norm();
  if (seg_len <= 1e-9) throw DegenerateSegment("segment endpoints coincide");

  // |q0 + t dq|^2 = 1 in normalized coordinates.
  const Vec3 q0 = model.normalized(p0);
  const Vec3 dq = (model.orientation.transpose() * d_world).cwiseQuotient(model.semi_axes);
  const double a = dq.squaredNorm();
  const double b = 2.0 * q0.dot(dq);
  const double c = q0.squaredNorm() - 1.0;
  double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) {
    if (disc < -1e-12 * (b * b + 4.0 * a * std::abs(c))) return {};
    disc = 0.0;
  }

  const double sq = std::sqrt(disc);
  // Numerically stable root pair.
  const double qv = -0.5 * (b + std::copysign(sq, b));
  double t_lo;
  double t_hi;
  if (qv == 0.0) {
    t_lo = t_hi = 0.0;
  } else {
    t_lo = qv / a;
    t_hi = c / qv;
  }
  if (t_lo > t_hi) std::swap(t_lo, t_hi);

  const double lo = std::max(t_lo, 0.0);
  const double hi = std::min(t_hi, 1.0);
  if (lo > hi) return {};

  GlandIntersection out;
  out.length = (hi - lo) * seg_len;
  out.clipped = Segment{p0 + lo * d_world, p0 + hi * d_world};
  return out;
}

/// Signed coordinate along the apex direction in normalized gland space.
inline double apical_coordinate(const ProstateModel& model, const Vec3& uvw) { return uvw.dot(model.apex_direction); }

inline SectorId classify_normalized(const ProstateModel& model, const SectorScheme12& scheme, const Vec3& uvw) {
  SectorId id;
  id.side = uvw.x() >= 0.0 ? Side::Right : Side::Left;
  id.track = std::abs(uvw.x()) >= scheme.lateral_threshold ? Track::Lateral : Track::Medial;
  const double w = apical_coordinate(model, uvw);
  if (w >= scheme.axial_cuts[1]) {
    id.zone = Zone::Apex;
  } else if (w >= scheme.axial_cuts[0]) {  // cut values attach to the more apical zone
    id.zone = Zone::Mid;
  } else {
    id.zone = Zone::Base;
  }
  return id;
}

/// Sector of an interior point. Ties: u = 0 -> Right, |u| = threshold -> Lateral, zone cut -> apical side.
inline SectorId classify_sector(const ProstateModel& model, const SectorScheme12& scheme, const Vec3& p) {
  const Vec3 uvw = model.normalized(p);
  if (uvw.squaredNorm() > 1.0) throw OutsideGland("point is outside the gland");
  return classify_normalized(model, scheme, uvw);
}

/// Distance from an interior point to the gland surface (0 on or outside the surface).
inline double distance_to_surface(const ProstateModel& model, const Vec3& p) {
  const Vec3 g = model.to_gland(p);
  const Vec3& e = model.semi_axes;
  if ((g.cwiseQuotient(e)).squaredNorm() >= 1.0) return 0.0;

  const Vec3 y = g.cwiseAbs();
  int kmin = 0;
  for (int i = 1; i < 3; ++i)
    if (e[i] < e[kmin]) kmin = i;
  const double emin2 = e[kmin] * e[kmin];

  // Closest point x_i = e_i^2 y_i / (e_i^2 + t), with F(t) = sum (e_i y_i / (e_i^2 + t))^2 - 1 = 0, t in (-emin^2, 0].
  auto f = [&](double t) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double r = e[i] * y[i] / (e[i] * e[i] + t);
      s += r * r;
    }
    return s - 1.0;
  };

  double lo = -emin2;
  double hi = 0.0;
  const double probe_t = lo + emin2 * 1e-15;
  if (f(probe_t) <= 0.0) {
    // No root: the closest point leaves the smallest axis' coordinate plane(s).
    Vec3 x = Vec3::Zero();
    double used = 0.0;
    for (int i = 0; i < 3; ++i) {
      if (e[i] * e[i] == emin2) continue;
      x[i] = e[i] * e[i] * y[i] / (e[i] * e[i] - emin2);
      used += (x[i] / e[i]) * (x[i] / e[i]);
    }
    x[kmin] = e[kmin] * std::sqrt(std::max(0.0, 1.0 - used));
    return (x - y).norm();
  }
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (f(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  const double t = 0.5 * (lo + hi);
  Vec3 x;
  for (int i = 0; i < 3; ++i) x[i] = e[i] * e[i] * y[i] / (e[i] * e[i] + t);
  return (x - y).norm();
}

}  // namespace biopsym
