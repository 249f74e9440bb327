#pragma once

// JSON encodings of the domain types. Doubles are written with round-trip precision, so
// decode(encode(x)) == x field by field.

#include "biopsym/analytics.hpp"
#include "biopsym/anatomy.hpp"
#include "biopsym/biopsy.hpp"
#include "biopsym/error.hpp"
#include "biopsym/image.hpp"
#include "biopsym/probe.hpp"
#include "biopsym/volume.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>

namespace nlohmann {

template <>
struct adl_serializer<Eigen::Vector3d> {
  static void to_json(json& j, const Eigen::Vector3d& v) { j = json::array({v.x(), v.y(), v.z()}); }
  static void from_json(const json& j, Eigen::Vector3d& v) {
    if (!j.is_array() || j.size() != 3) throw biopsym::FormatError("expected a 3-vector");
    v = Eigen::Vector3d(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
  }
};

template <>
struct adl_serializer<Eigen::Matrix3d> {
  static void to_json(json& j, const Eigen::Matrix3d& m) {
    j = json::array();
    for (int r = 0; r < 3; ++r) j.push_back(json::array({m(r, 0), m(r, 1), m(r, 2)}));
  }
  static void from_json(const json& j, Eigen::Matrix3d& m) {
    if (!j.is_array() || j.size() != 3) throw biopsym::FormatError("expected a 3x3 matrix");
    for (int r = 0; r < 3; ++r) {
      if (!j[r].is_array() || j[r].size() != 3) throw biopsym::FormatError("expected a 3x3 matrix");
      for (int c = 0; c < 3; ++c) m(r, c) = j[r][c].get<double>();
    }
  }
};

template <typename T>
struct adl_serializer<std::optional<T>> {
  static void to_json(json& j, const std::optional<T>& v) {
    if (v)
      j = *v;
    else
      j = nullptr;
  }
  static void from_json(const json& j, std::optional<T>& v) {
    if (j.is_null())
      v.reset();
    else
      v = j.get<T>();
  }
};

}  // namespace nlohmann

namespace biopsym {

using json = nlohmann::json;

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() || it->is_null() ? fallback : it->get<T>();
}

// --- geometry ---------------------------------------------------------------

inline void to_json(json& j, const Segment& s) { j = json{{"p0", s.p0}, {"p1", s.p1}}; }
inline void from_json(const json& j, Segment& s) {
  s.p0 = j.at("p0").get<Vec3>();
  s.p1 = j.at("p1").get<Vec3>();
}

inline void to_json(json& j, const Ray& r) { j = json{{"origin", r.origin}, {"direction", r.direction}}; }

inline void to_json(json& j, const SectorId& s) { j = s.name(); }
inline void from_json(const json& j, SectorId& s) {
  auto parsed = SectorId::parse(j.get<std::string>());
  if (!parsed) throw FormatError("unknown sector '" + j.get<std::string>() + "'");
  s = *parsed;
}

inline void to_json(json& j, const ProstateModel& m) {
  j = json{{"center", m.center}, {"semi_axes", m.semi_axes}, {"orientation", m.orientation}, {"apex_direction", m.apex_direction}};
}
inline void from_json(const json& j, ProstateModel& m) {
  m = ProstateModel{};
  m.center = j.at("center").get<Vec3>();
  m.semi_axes = j.at("semi_axes").get<Vec3>();
  m.orientation = get_or<Mat3>(j, "orientation", Mat3::Identity());
  m.apex_direction = get_or<Vec3>(j, "apex_direction", Vec3::UnitZ());
}

inline void to_json(json& j, const SectorScheme12& s) {
  j = json{{"lateral_threshold", s.lateral_threshold}, {"axial_cuts", {s.axial_cuts[0], s.axial_cuts[1]}}};
}
inline void from_json(const json& j, SectorScheme12& s) {
  s = SectorScheme12{};
  s.lateral_threshold = get_or(j, "lateral_threshold", s.lateral_threshold);
  if (j.contains("axial_cuts")) {
    const auto& c = j.at("axial_cuts");
    s.axial_cuts = {c.at(0).get<double>(), c.at(1).get<double>()};
  }
}

// --- probe ------------------------------------------------------------------

inline void to_json(json& j, const ProbePose& p) {
  j = json{{"pitch", p.pitch}, {"yaw", p.yaw}, {"roll", p.roll}, {"insertion", p.insertion}};
}
inline void from_json(const json& j, ProbePose& p) {
  p.pitch = get_or(j, "pitch", 0.0);
  p.yaw = get_or(j, "yaw", 0.0);
  p.roll = get_or(j, "roll", 0.0);
  p.insertion = get_or(j, "insertion", 0.0);
}

inline void to_json(json& j, const FanGeometry& f) {
  j = json{{"apex", {f.apex_x, f.apex_y}}, {"angular_span", f.angular_span}, {"min_depth", f.min_depth}, {"max_depth", f.max_depth}};
}
inline void from_json(const json& j, FanGeometry& f) {
  f = FanGeometry{};
  if (j.contains("apex")) {
    f.apex_x = j.at("apex").at(0).get<double>();
    f.apex_y = j.at("apex").at(1).get<double>();
  }
  f.angular_span = get_or(j, "angular_span", f.angular_span);
  f.min_depth = get_or(j, "min_depth", f.min_depth);
  f.max_depth = get_or(j, "max_depth", f.max_depth);
}

inline void to_json(json& j, const ProbeRig& r) {
  j = json{{"pivot", r.pivot},
           {"rest_axis", r.rest_axis},
           {"rest_up", r.rest_up},
           {"pitch_max", r.limits.pitch_max},
           {"yaw_max", r.limits.yaw_max},
           {"insertion_max", r.limits.insertion_max},
           {"guide_angle", r.guide_angle},
           {"guide_offset", r.guide_offset},
           {"image_extent", {r.image_width, r.image_depth}},
           {"fan", r.fan}};
}
inline void from_json(const json& j, ProbeRig& r) {
  r = ProbeRig{};
  r.pivot = get_or(j, "pivot", r.pivot);
  r.rest_axis = get_or(j, "rest_axis", r.rest_axis);
  r.rest_up = get_or(j, "rest_up", r.rest_up);
  r.limits.pitch_max = get_or(j, "pitch_max", r.limits.pitch_max);
  r.limits.yaw_max = get_or(j, "yaw_max", r.limits.yaw_max);
  r.limits.insertion_max = get_or(j, "insertion_max", r.limits.insertion_max);
  r.guide_angle = get_or(j, "guide_angle", r.guide_angle);
  r.guide_offset = get_or(j, "guide_offset", r.guide_offset);
  if (j.contains("image_extent")) {
    r.image_width = j.at("image_extent").at(0).get<double>();
    r.image_depth = j.at("image_extent").at(1).get<double>();
  }
  r.fan = get_or(j, "fan", r.fan);
}

inline void to_json(json& j, const ImagePlane& p) {
  j = json{{"origin", p.origin}, {"u_axis", p.u_axis}, {"v_axis", p.v_axis}, {"extent", {p.width, p.depth}}};
}
inline void from_json(const json& j, ImagePlane& p) {
  p.origin = j.at("origin").get<Vec3>();
  p.u_axis = j.at("u_axis").get<Vec3>();
  p.v_axis = j.at("v_axis").get<Vec3>();
  p.width = j.at("extent").at(0).get<double>();
  p.depth = j.at("extent").at(1).get<double>();
}

// --- biopsy -----------------------------------------------------------------

inline void to_json(json& j, const GunParams& g) {
  j = json{{"throw_start", g.throw_start}, {"core_length", g.core_length}, {"max_reach", g.max_reach}};
}
inline void from_json(const json& j, GunParams& g) {
  g = GunParams{};
  g.throw_start = get_or(j, "throw_start", g.throw_start);
  g.core_length = get_or(j, "core_length", g.core_length);
  g.max_reach = get_or(j, "max_reach", g.max_reach);
}

inline void to_json(json& j, const BiopsyCore& c) {
  j = json{{"id", c.id},
           {"fired_at", c.fired_at},
           {"pose", c.pose},
           {"needle_depth", c.needle_depth},
           {"p0", c.p0},
           {"p1", c.p1},
           {"in_gland_length", c.in_gland_length},
           {"gland_segment", c.gland_segment},
           {"sector", c.sector}};
}
inline void from_json(const json& j, BiopsyCore& c) {
  c.id = j.at("id").get<std::uint64_t>();
  c.fired_at = j.at("fired_at").get<std::int64_t>();
  c.pose = j.at("pose").get<ProbePose>();
  c.needle_depth = j.at("needle_depth").get<double>();
  c.p0 = j.at("p0").get<Vec3>();
  c.p1 = j.at("p1").get<Vec3>();
  c.in_gland_length = j.at("in_gland_length").get<double>();
  c.gland_segment = j.at("gland_segment").get<std::optional<Segment>>();
  c.sector = j.at("sector").get<std::optional<SectorId>>();
}

// --- volume -----------------------------------------------------------------

inline void to_json(json& j, const PhantomParams& p) {
  j = json{{"volume_extent", p.volume_extent},
           {"spacing", p.spacing},
           {"gland_semi_axes", p.gland_semi_axes},
           {"gland_center", p.gland_center},
           {"gland_level", p.gland_level},
           {"tissue_level", p.tissue_level},
           {"capsule_rim_width", p.capsule_rim_width},
           {"capsule_gain", p.capsule_gain},
           {"speckle_amplitude", p.speckle_amplitude},
           {"speckle_correlation_length", p.speckle_correlation_length},
           {"rectal_wall_depth", p.rectal_wall_depth}};
}
/// Missing keys keep their defaults, so partial parameter files are accepted.
inline void from_json(const json& j, PhantomParams& p) {
  p = PhantomParams{};
  p.volume_extent = get_or(j, "volume_extent", p.volume_extent);
  p.spacing = get_or(j, "spacing", p.spacing);
  p.gland_semi_axes = get_or(j, "gland_semi_axes", p.gland_semi_axes);
  p.gland_center = get_or(j, "gland_center", p.gland_center);
  p.gland_level = get_or(j, "gland_level", p.gland_level);
  p.tissue_level = get_or(j, "tissue_level", p.tissue_level);
  p.capsule_rim_width = get_or(j, "capsule_rim_width", p.capsule_rim_width);
  p.capsule_gain = get_or(j, "capsule_gain", p.capsule_gain);
  p.speckle_amplitude = get_or(j, "speckle_amplitude", p.speckle_amplitude);
  p.speckle_correlation_length = get_or(j, "speckle_correlation_length", p.speckle_correlation_length);
  p.rectal_wall_depth = get_or(j, "rectal_wall_depth", p.rectal_wall_depth);
}

// --- analytics --------------------------------------------------------------

inline void to_json(json& j, const SessionStats& s) {
  json hits = json::object();
  for (int i = 0; i < kSectorCount; ++i) hits[SectorId::from_index(i).name()] = s.sector_hits[i];
  j = json{{"n_cores", s.n_cores},
           {"n_in_gland", s.n_in_gland},
           {"sector_coverage", s.sector_coverage},
           {"apex_coverage", s.apex_coverage},
           {"mean_in_gland_length", s.mean_in_gland_length},
           {"min_pair_distance", s.min_pair_distance},
           {"spread_cv", s.spread_cv},
           {"boundary_miss_count", s.boundary_miss_count},
           {"sector_hits", hits}};
}
inline void from_json(const json& j, SessionStats& s) {
  s.n_cores = j.at("n_cores").get<int>();
  s.n_in_gland = j.at("n_in_gland").get<int>();
  s.sector_coverage = j.at("sector_coverage").get<double>();
  s.apex_coverage = j.at("apex_coverage").get<double>();
  s.mean_in_gland_length = j.at("mean_in_gland_length").get<std::optional<double>>();
  s.min_pair_distance = j.at("min_pair_distance").get<std::optional<double>>();
  s.spread_cv = j.at("spread_cv").get<std::optional<double>>();
  s.boundary_miss_count = j.at("boundary_miss_count").get<int>();
  s.sector_hits.fill(0);
  if (j.contains("sector_hits"))
    for (int i = 0; i < kSectorCount; ++i) s.sector_hits[i] = get_or(j.at("sector_hits"), SectorId::from_index(i).name().c_str(), 0);
}

inline void to_json(json& j, const Recommendation& r) { j = json{{"kind", to_string(r.kind)}, {"rationale", r.rationale}}; }

inline json exercise_to_json(const Exercise& ex) {
  json j{{"kind", to_string(ex.kind())}, {"hint_level", ex.hint_level}};
  if (auto* p = std::get_if<PlaneTarget>(&ex.target)) {
    j["plane"] = p->plane;
    j["tol_angle"] = p->tol_angle;
    j["tol_offset"] = p->tol_offset;
  } else if (auto* s = std::get_if<SphereTarget>(&ex.target)) {
    j["center"] = s->center;
    j["radius"] = s->radius;
  } else if (auto* c = std::get_if<SchemeTarget>(&ex.target)) {
    j["scheme"] = c->scheme;
    j["coverage_threshold"] = c->coverage_threshold;
    j["max_spread_cv"] = c->max_spread_cv;
  }
  return j;
}

inline json exercise_result_to_json(const ExerciseResult& r) {
  json j{{"passed", r.passed}, {"score", r.score}};
  if (auto* p = std::get_if<PlaneDetail>(&r.detail)) {
    j["detail"] = {{"angle", p->angle}, {"offset", p->offset}};
  } else if (auto* h = std::get_if<HitDetail>(&r.detail)) {
    j["detail"] = {{"hit", h->hit}, {"miss_distance", h->miss_distance}};
  } else if (auto* s = std::get_if<SessionStats>(&r.detail)) {
    j["detail"] = *s;
  }
  return j;
}

inline void to_json(json& j, const SchemeReport& s) {
  j = json{{"name", s.name},
           {"feasible", s.feasible},
           {"infeasible_reason", s.infeasible_reason},
           {"trials", s.trials},
           {"cores_per_trial", s.cores_per_trial},
           {"mean_sector_coverage", s.mean_sector_coverage},
           {"mean_apex_coverage", s.mean_apex_coverage},
           {"detection_probability", s.detection_probability},
           {"ci_half_width", s.ci_half_width}};
}

inline void to_json(json& j, const ProtocolScheme& s) { j = json{{"name", s.name}, {"targets", s.targets}}; }
inline void from_json(const json& j, ProtocolScheme& s) {
  s.name = j.at("name").get<std::string>();
  s.targets = j.at("targets").get<std::vector<Vec3>>();
}

}  // namespace biopsym
