#pragma once

#include "biopsym/anatomy.hpp"
#include "biopsym/error.hpp"
#include "biopsym/geometry.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace biopsym {

/// Regular voxel grid of echo intensities in [0, 1].
///
/// Voxel (i, j, k) has its centre at origin + (i sx, j sy, k sz); storage is x-fastest.
/// Immutable once built, so a `std::shared_ptr<const Volume3D>` can be shared between readers.
class Volume3D {
 public:
  Volume3D(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::vector<float> voxels)
      : dims_(dims), spacing_(std::move(spacing)), origin_(std::move(origin)), voxels_(std::move(voxels)) {
    for (int d : dims_)
      if (d < 2) throw InvalidParams("volume dims must all be >= 2");
    if (!(spacing_.minCoeff() > 0.0)) throw InvalidParams("volume spacing must be positive");
    if (voxels_.size() != voxel_count()) throw InvalidParams("voxel count does not match dims");
    for (float v : voxels_)
      if (!(v >= 0.0f && v <= 1.0f)) throw InvalidParams("voxel intensity outside [0, 1]");
  }

  /// Constant-valued volume, mostly for tests and benchmarks.
  static Volume3D filled(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, float value) {
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    return Volume3D(dims, std::move(spacing), std::move(origin), std::vector<float>(n, value));
  }

  const std::array<int, 3>& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  const std::vector<float>& voxels() const { return voxels_; }

  std::size_t voxel_count() const { return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]; }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(dims_[0]) * (j + static_cast<std::size_t>(dims_[1]) * k);
  }
  float at(int i, int j, int k) const { return voxels_[index(i, j, k)]; }

  Vec3 voxel_center(int i, int j, int k) const {
    return origin_ + Vec3(i * spacing_.x(), j * spacing_.y(), k * spacing_.z());
  }

  /// Physical size covered by the voxel-centre bounding box.
  Vec3 center_span() const {
    return Vec3((dims_[0] - 1) * spacing_.x(), (dims_[1] - 1) * spacing_.y(), (dims_[2] - 1) * spacing_.z());
  }

  friend bool operator==(const Volume3D& a, const Volume3D& b) {
    return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.origin_ == b.origin_ && a.voxels_ == b.voxels_;
  }

 private:
  std::array<int, 3> dims_;
  Vec3 spacing_;
  Vec3 origin_;
  std::vector<float> voxels_;
};

/// Trilinear interpolation between the 8 surrounding voxel centres.
/// Anything outside the voxel-centre bounding box is anechoic (0).
inline double sample_trilinear(const Volume3D& vol, const Vec3& p) {
  const auto& n = vol.dims();
  const double fx = (p.x() - vol.origin().x()) / vol.spacing().x();
  const double fy = (p.y() - vol.origin().y()) / vol.spacing().y();
  const double fz = (p.z() - vol.origin().z()) / vol.spacing().z();
  if (!(fx >= 0.0 && fy >= 0.0 && fz >= 0.0 && fx <= n[0] - 1 && fy <= n[1] - 1 && fz <= n[2] - 1)) return 0.0;

  const int i = std::min(static_cast<int>(fx), n[0] - 2);
  const int j = std::min(static_cast<int>(fy), n[1] - 2);
  const int k = std::min(static_cast<int>(fz), n[2] - 2);
  const double tx = fx - i;
  const double ty = fy - j;
  const double tz = fz - k;

  const std::size_t sy = static_cast<std::size_t>(n[0]);
  const std::size_t sz = sy * n[1];
  const float* c = vol.voxels().data() + vol.index(i, j, k);
  const double c00 = c[0] + tx * (double(c[1]) - c[0]);
  const double c10 = c[sy] + tx * (double(c[sy + 1]) - c[sy]);
  const double c01 = c[sz] + tx * (double(c[sz + 1]) - c[sz]);
  const double c11 = c[sz + sy] + tx * (double(c[sz + sy + 1]) - c[sz + sy]);
  const double c0 = c00 + ty * (c10 - c00);
  const double c1 = c01 + ty * (c11 - c01);
  return c0 + tz * (c1 - c0);
}

// ---------------------------------------------------------------------------
// Phantom synthesis

/// Parameters of a synthetic ultrasound-like prostate phantom.
/// The volume occupies [0, extent] in world mm along each axis; voxel centres sit half a voxel in.
struct PhantomParams {
  Vec3 volume_extent = Vec3(80.0, 80.0, 80.0);
  double spacing = 0.5;
  Vec3 gland_semi_axes = Vec3(22.0, 18.0, 25.0);
  Vec3 gland_center = Vec3(40.0, 40.0, 40.0);
  double gland_level = 0.30;   // hypoechoic interior
  double tissue_level = 0.55;
  double capsule_rim_width = 1.5;
  double capsule_gain = 1.5;   // rim level = tissue_level * gain
  double speckle_amplitude = 0.35;
  double speckle_correlation_length = 0.6;
  double rectal_wall_depth = 16.0;  // distance of the rectal wall surface from the posterior (-y) face; 0 disables

  static constexpr double kMargin = 2.0;
  static constexpr double kRectalWallThickness = 3.0;
  static constexpr double kRectalWallLevel = 0.9;
  static constexpr double kLumenLevel = 0.05;

  std::array<int, 3> dims() const {
    std::array<int, 3> d{};
    for (int a = 0; a < 3; ++a) d[a] = static_cast<int>(std::lround(volume_extent[a] / spacing));
    return d;
  }

  void validate() const {
    if (!(spacing > 0.0)) throw InvalidParams("spacing must be positive");
    for (int d : dims())
      if (d < 2) throw InvalidParams("volume extent must cover at least 2 voxels per axis");
    if (!(gland_semi_axes.minCoeff() > 0.0)) throw InvalidParams("gland semi-axes must be positive");
    for (int a = 0; a < 3; ++a) {
      if (gland_center[a] - gland_semi_axes[a] < kMargin || gland_center[a] + gland_semi_axes[a] > volume_extent[a] - kMargin)
        throw InvalidParams("gland ellipsoid exceeds the volume extent minus margin");
    }
    if (!(gland_level >= 0.0 && tissue_level <= 1.0 && gland_level < tissue_level))
      throw InvalidParams("levels must satisfy 0 <= gland_level < tissue_level <= 1");
    if (!(speckle_amplitude >= 0.0)) throw InvalidParams("speckle_amplitude must be >= 0");
    if (!(speckle_correlation_length > 0.0)) throw InvalidParams("speckle_correlation_length must be positive");
    if (!(capsule_rim_width >= 0.0 && capsule_gain > 0.0)) throw InvalidParams("bad capsule rim parameters");
    if (!(rectal_wall_depth >= 0.0)) throw InvalidParams("rectal_wall_depth must be >= 0");
  }

  ProstateModel gland() const {
    ProstateModel m;
    m.center = gland_center;
    m.semi_axes = gland_semi_axes;
    return m;
  }
};

enum class PhantomRegion { Gland, Capsule, Tissue, RectalWall, Lumen };

/// Region label of a world point under the phantom's piecewise-constant layout.
inline PhantomRegion phantom_region(const PhantomParams& params, const Vec3& p) {
  const Vec3 g = p - params.gland_center;
  const Vec3& e = params.gland_semi_axes;
  const double rho = g.cwiseQuotient(e).norm();
  if (rho <= 1.0) return PhantomRegion::Gland;
  if (params.capsule_rim_width > 0.0) {
    // First-order distance to the ellipsoid surface: (rho - 1) / |grad rho|.
    const double grad = g.cwiseQuotient(e.cwiseProduct(e)).norm() / rho;
    if ((rho - 1.0) / grad <= params.capsule_rim_width) return PhantomRegion::Capsule;
  }
  if (params.rectal_wall_depth > 0.0) {
    if (p.y() < params.rectal_wall_depth - PhantomParams::kRectalWallThickness) return PhantomRegion::Lumen;
    if (p.y() <= params.rectal_wall_depth) return PhantomRegion::RectalWall;
  }
  return PhantomRegion::Tissue;
}

inline double phantom_base_level(const PhantomParams& params, PhantomRegion region) {
  switch (region) {
    case PhantomRegion::Gland: return params.gland_level;
    case PhantomRegion::Capsule: return std::min(1.0, params.tissue_level * params.capsule_gain);
    case PhantomRegion::RectalWall: return PhantomParams::kRectalWallLevel;
    case PhantomRegion::Lumen: return PhantomParams::kLumenLevel;
    case PhantomRegion::Tissue: break;
  }
  return params.tissue_level;
}

namespace detail {

inline std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = static_cast<float>(w);
    sum += w;
  }
  for (auto& w : k) w = static_cast<float>(w / sum);
  return k;
}

/// In-place separable blur with clamped borders.
inline void blur_axis(std::vector<float>& field, const std::array<int, 3>& dims, int axis, const std::vector<float>& kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(dims[0])
                                                       : static_cast<std::size_t>(dims[0]) * dims[1];
  const int len = dims[axis];
  std::vector<float> line(len);
  const int o1 = (axis + 1) % 3;
  const int o2 = (axis + 2) % 3;
  const std::size_t s1 = o1 == 0 ? 1 : o1 == 1 ? static_cast<std::size_t>(dims[0]) : static_cast<std::size_t>(dims[0]) * dims[1];
  const std::size_t s2 = o2 == 0 ? 1 : o2 == 1 ? static_cast<std::size_t>(dims[0]) : static_cast<std::size_t>(dims[0]) * dims[1];
  for (int b = 0; b < dims[o2]; ++b) {
    for (int a = 0; a < dims[o1]; ++a) {
      const std::size_t base = a * s1 + b * s2;
      for (int i = 0; i < len; ++i) line[i] = field[base + i * stride];
      for (int i = 0; i < len; ++i) {
        float acc = 0.0f;
        for (int t = -radius; t <= radius; ++t) {
          const int src = std::clamp(i + t, 0, len - 1);
          acc += kernel[t + radius] * line[src];
        }
        field[base + i * stride] = acc;
      }
    }
  }
}

}  // namespace detail

/// Synthesizes an ultrasound-like phantom: piecewise-constant echo levels modulated by
/// multiplicative Rayleigh-like speckle. Deterministic in (params, seed).
inline std::pair<Volume3D, ProstateModel> generate_phantom(const PhantomParams& params, std::uint64_t seed) {
  params.validate();
  const auto dims = params.dims();
  const Vec3 spacing = Vec3::Constant(params.spacing);
  const Vec3 origin = Vec3::Constant(0.5 * params.spacing);
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];

  std::vector<float> texture(n, 1.0f);
  if (params.speckle_amplitude > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> re(n);
    std::vector<float> im(n);
    for (std::size_t i = 0; i < n; ++i) {
      re[i] = normal(rng);
      im[i] = normal(rng);
    }
    const auto kernel = detail::gaussian_kernel(params.speckle_correlation_length / params.spacing);
    for (int axis = 0; axis < 3; ++axis) {
      detail::blur_axis(re, dims, axis, kernel);
      detail::blur_axis(im, dims, axis, kernel);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      texture[i] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
      sum += texture[i];
    }
    const double inv_mean = static_cast<double>(n) / sum;
    for (auto& t : texture) t = static_cast<float>(1.0 + params.speckle_amplitude * (t * inv_mean - 1.0));
  }

  std::vector<float> voxels(n);
  std::size_t idx = 0;
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i, ++idx) {
        const Vec3 p = origin + Vec3(i * spacing.x(), j * spacing.y(), k * spacing.z());
        const float base = static_cast<float>(phantom_base_level(params, phantom_region(params, p)));
        voxels[idx] = std::clamp(base * texture[idx], 0.0f, 1.0f);
      }
    }
  }
  return {Volume3D(dims, spacing, origin, std::move(voxels)), params.gland()};
}

// ---------------------------------------------------------------------------
// BVOL v1 file format

inline std::uint8_t quantize_intensity(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
}
inline float dequantize_intensity(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

/// Volume with every voxel snapped to the 8-bit lattice the file format stores.
inline Volume3D quantized(const Volume3D& vol) {
  std::vector<float> q(vol.voxels().size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = dequantize_intensity(quantize_intensity(vol.voxels()[i]));
  return Volume3D(vol.dims(), vol.spacing(), vol.origin(), std::move(q));
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_volume(const Volume3D& vol, std::ostream& out) {
  const auto& d = vol.dims();
  out << "magic BVOL1\n";
  out << "dims " << d[0] << ' ' << d[1] << ' ' << d[2] << '\n';
  out << "spacing " << format_double(vol.spacing().x()) << ' ' << format_double(vol.spacing().y()) << ' '
      << format_double(vol.spacing().z()) << '\n';
  out << "origin " << format_double(vol.origin().x()) << ' ' << format_double(vol.origin().y()) << ' '
      << format_double(vol.origin().z()) << '\n';
  out << '\n';
  std::vector<char> payload(vol.voxel_count());
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(quantize_intensity(vol.voxels()[i]));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

inline Volume3D read_volume(std::istream& in) {
  bool have_magic = false;
  bool have_dims = false;
  bool have_spacing = false;
  bool have_origin = false;
  long long dims[3] = {0, 0, 0};
  Vec3 spacing;
  Vec3 origin;

  std::string line;
  while (true) {
    if (!std::getline(in, line)) throw FormatError("BVOL header not terminated by a blank line");
    if (line.empty()) break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "magic") {
      std::string magic;
      ls >> magic;
      if (magic != "BVOL1") throw FormatError("bad magic '" + magic + "'");
      have_magic = true;
    } else if (key == "dims") {
      ls >> dims[0] >> dims[1] >> dims[2];
      have_dims = true;
    } else if (key == "spacing") {
      ls >> spacing.x() >> spacing.y() >> spacing.z();
      have_spacing = true;
    } else if (key == "origin") {
      ls >> origin.x() >> origin.y() >> origin.z();
      have_origin = true;
    } else {
      throw FormatError("unknown BVOL header key '" + key + "'");
    }
    if (ls.fail()) throw FormatError("malformed BVOL header line '" + line + "'");
  }
  if (!have_magic) throw FormatError("missing BVOL magic");
  if (!(have_dims && have_spacing && have_origin)) throw FormatError("incomplete BVOL header");
  for (long long d : dims)
    if (d < 2 || d > (1 << 16)) throw FormatError("BVOL dims out of range");
  if (!(spacing.minCoeff() > 0.0)) throw FormatError("BVOL spacing must be positive");

  const std::size_t n = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  std::vector<char> payload(n);
  in.read(payload.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("BVOL payload truncated");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("BVOL payload longer than declared dims");

  std::vector<float> voxels(n);
  for (std::size_t i = 0; i < n; ++i) voxels[i] = dequantize_intensity(static_cast<std::uint8_t>(payload[i]));
  return Volume3D({static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])}, spacing, origin,
                  std::move(voxels));
}

inline void save_volume(const Volume3D& vol, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_volume(vol, out);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

inline Volume3D load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_volume(in);
}

}  // namespace biopsym
