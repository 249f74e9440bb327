#pragma once

#include "biopsym/error.hpp"
#include "biopsym/geometry.hpp"

#include <cmath>
#include <vector>

namespace biopsym {

/// Rectangular image plane in world space.
///
/// Normalized coordinate (s, t) in [0,1]^2 maps to origin + (s - 0.5) width u + t depth v,
/// so the origin sits at the middle of the top edge (the transducer face for probe views).
struct ImagePlane {
  Vec3 origin = Vec3::Zero();
  Vec3 u_axis = Vec3::UnitX();
  Vec3 v_axis = Vec3::UnitY();
  double width = 1.0;
  double depth = 1.0;

  /// Unit normal, v x u (the probe frame's y axis for probe-oriented planes).
  Vec3 normal() const { return v_axis.cross(u_axis); }

  Vec3 row_start(double t) const { return origin + (t * depth) * v_axis; }
  Vec3 point_at(double s, double t) const { return row_start(t) + ((s - 0.5) * width) * u_axis; }

  /// World point at the centre of pixel (i, j) of a w x h raster.
  Vec3 pixel_point(int i, int j, int w, int h) const { return point_at((i + 0.5) / w, (j + 0.5) / h); }

  void validate() const {
    if (std::abs(u_axis.norm() - 1.0) > 1e-9 || std::abs(v_axis.norm() - 1.0) > 1e-9 || std::abs(u_axis.dot(v_axis)) > 1e-9)
      throw InvalidParams("image plane axes must be orthonormal");
    if (!(width > 0.0 && depth > 0.0)) throw InvalidParams("image plane extents must be positive");
  }
};

/// Row-major grayscale image with intensities in [0, 1].
struct Image2D {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
  ImagePlane plane;

  float at(int i, int j) const { return pixels[static_cast<std::size_t>(j) * width + i]; }
  float& at(int i, int j) { return pixels[static_cast<std::size_t>(j) * width + i]; }

  friend bool operator==(const Image2D& a, const Image2D& b) {
    return a.width == b.width && a.height == b.height && a.pixels == b.pixels;
  }
};

}  // namespace biopsym
