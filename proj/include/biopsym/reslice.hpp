#pragma once

#include "biopsym/anatomy.hpp"
#include "biopsym/error.hpp"
#include "biopsym/image.hpp"
#include "biopsym/probe.hpp"
#include "biopsym/volume.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string_view>
#include <utility>

namespace biopsym {

/// Samples `vol` on `plane` at a w x h raster; pixel (i, j) is taken at ((i + 0.5)/w, (j + 0.5)/h).
inline Image2D extract_slice(const Volume3D& vol, const ImagePlane& plane, int w, int h) {
  if (w < 2 || h < 2) throw BadResolution("slice resolution must be at least 2x2");
  plane.validate();
  Image2D img;
  img.width = w;
  img.height = h;
  img.plane = plane;
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  float* out = img.pixels.data();
  for (int j = 0; j < h; ++j) {
    const Vec3 row = plane.row_start((j + 0.5) / h);
    for (int i = 0; i < w; ++i) {
      const double s = (i + 0.5) / w;
      const Vec3 p = row + ((s - 0.5) * plane.width) * plane.u_axis;
      *out++ = static_cast<float>(sample_trilinear(vol, p));
    }
  }
  return img;
}

enum class CanonicalView { Axial, Sagittal, Coronal };

inline std::string_view to_string(CanonicalView v) {
  switch (v) {
    case CanonicalView::Axial: return "axial";
    case CanonicalView::Sagittal: return "sagittal";
    case CanonicalView::Coronal: return "coronal";
  }
  return "?";
}

/// Plane through the gland centre with world normal z (axial), x (sagittal) or y (coronal).
/// In-plane axes (u, v): axial (x, -y), sagittal (-z, -y), coronal (x, z); the gland centre
/// lands on the image centre (s, t) = (0.5, 0.5).
inline ImagePlane canonical_plane(CanonicalView view, const ProstateModel& model, double width, double depth) {
  ImagePlane plane;
  switch (view) {
    case CanonicalView::Axial:
      plane.u_axis = Vec3::UnitX();
      plane.v_axis = -Vec3::UnitY();
      break;
    case CanonicalView::Sagittal:
      plane.u_axis = -Vec3::UnitZ();
      plane.v_axis = -Vec3::UnitY();
      break;
    case CanonicalView::Coronal:
      plane.u_axis = Vec3::UnitX();
      plane.v_axis = Vec3::UnitZ();
      break;
  }
  plane.width = width;
  plane.depth = depth;
  plane.origin = model.center - (0.5 * depth) * plane.v_axis;
  return plane;
}

/// Image-millimetre coordinates of pixel (i, j): x along u from the top-edge centre, y along v.
inline std::pair<double, double> pixel_mm(const ImagePlane& plane, int i, int j, int w, int h) {
  return {((i + 0.5) / w - 0.5) * plane.width, ((j + 0.5) / h) * plane.depth};
}

inline bool inside_fan(const FanGeometry& fan, double x, double y) {
  const double dx = x - fan.apex_x;
  const double dy = y - fan.apex_y;
  const double r = std::sqrt(dx * dx + dy * dy);
  if (r < fan.min_depth || r > fan.max_depth) return false;
  return dy >= r * std::cos(0.5 * fan.angular_span);
}

/// Zeroes every pixel outside the fan footprint.
inline Image2D apply_fan_mask(Image2D img, const FanGeometry& fan) {
  for (int j = 0; j < img.height; ++j) {
    for (int i = 0; i < img.width; ++i) {
      const auto [x, y] = pixel_mm(img.plane, i, j, img.width, img.height);
      if (!inside_fan(fan, x, y)) img.at(i, j) = 0.0f;
    }
  }
  return img;
}

struct PlaneProjection {
  double s = 0.0;
  double t = 0.0;
  double distance = 0.0;  // signed, along normal()
};

inline PlaneProjection project_to_plane(const ImagePlane& plane, const Vec3& p) {
  const Vec3 d = p - plane.origin;
  return {d.dot(plane.u_axis) / plane.width + 0.5, d.dot(plane.v_axis) / plane.depth, d.dot(plane.normal())};
}

struct Point2 {
  double s = 0.0;
  double t = 0.0;
};

/// Liang-Barsky clip of a 2D segment to [0,1]^2. nullopt when fully outside.
inline std::optional<std::pair<Point2, Point2>> clip_to_unit_square(Point2 a, Point2 b) {
  double t0 = 0.0;
  double t1 = 1.0;
  const double ds = b.s - a.s;
  const double dt = b.t - a.t;
  const std::array<double, 4> p = {-ds, ds, -dt, dt};
  const std::array<double, 4> q = {a.s, 1.0 - a.s, a.t, 1.0 - a.t};
  for (int k = 0; k < 4; ++k) {
    if (p[k] == 0.0) {
      if (q[k] < 0.0) return std::nullopt;
    } else {
      const double r = q[k] / p[k];
      if (p[k] < 0.0)
        t0 = std::max(t0, r);
      else
        t1 = std::min(t1, r);
    }
  }
  if (t0 > t1) return std::nullopt;
  return std::pair{Point2{a.s + t0 * ds, a.t + t0 * dt}, Point2{a.s + t1 * ds, a.t + t1 * dt}};
}

}  // namespace biopsym
