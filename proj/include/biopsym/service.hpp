#pragma once

#include "biopsym/analytics.hpp"
#include "biopsym/biopsy.hpp"
#include "biopsym/error.hpp"
#include "biopsym/frame_codec.hpp"
#include "biopsym/probe.hpp"
#include "biopsym/reslice.hpp"
#include "biopsym/serialization.hpp"
#include "biopsym/session_store.hpp"
#include "biopsym/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace biopsym {

enum class View : std::uint32_t { Probe = 0, Axial = 1, Sagittal = 2, Coronal = 3 };

inline std::string_view to_string(View v) {
  switch (v) {
    case View::Probe: return "probe";
    case View::Axial: return "axial";
    case View::Sagittal: return "sagittal";
    case View::Coronal: return "coronal";
  }
  return "?";
}

inline std::optional<View> parse_view(std::string_view s) {
  for (auto v : {View::Probe, View::Axial, View::Sagittal, View::Coronal})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

/// Geometric annotation in normalized image coordinates. Clients pick colours from `style`:
/// `needle` (green), `recorded` (red), `target` (hint).
struct Overlay {
  std::string style;
  std::string shape;  // "line" or "point"
  std::vector<Point2> points;
  bool clipped = false;       // line cut at the image border, or point outside [0,1]^2
  double out_of_plane = 0.0;  // signed distance of the (mid)point from the slice plane, mm
  std::optional<std::uint64_t> core_id;
};

struct SliceFrame {
  std::uint64_t session_id = 0;
  std::uint64_t frame_seq = 0;
  View view = View::Probe;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<Overlay> overlays;
  ProbePose pose;  // the clamped pose the frame was rendered from
  bool clamped = false;
  std::uint64_t pose_seq = 0;  // client sequence number of that pose, when given
  ImagePlane plane;
};

struct SceneState {
  ProbePose pose;
  Rigid probe_frame = Rigid::Identity();
  Ray needle;
  ImagePlane image_plane;
  ProstateModel gland;
  std::vector<std::pair<std::uint64_t, Segment>> cores;
  std::optional<json> exercise_indicator;  // present at hint level 2
};

struct ServiceConfig {
  ProbeRig rig;
  GunParams gun;
  SectorScheme12 sectors;
  double canonical_extent = 80.0;  // mm, square canonical views
  std::filesystem::path phantom_dir;  // optional BVOL cache
};

inline constexpr double kHintSliceDistance = 10.0;

/// Slice plane of a view for a pose.
inline ImagePlane view_plane(View view, const ProbeRig& rig, const ProbePose& pose, const ProstateModel& gland,
                             double canonical_extent) {
  switch (view) {
    case View::Probe: return image_plane(rig, pose);
    case View::Axial: return canonical_plane(CanonicalView::Axial, gland, canonical_extent, canonical_extent);
    case View::Sagittal: return canonical_plane(CanonicalView::Sagittal, gland, canonical_extent, canonical_extent);
    case View::Coronal: return canonical_plane(CanonicalView::Coronal, gland, canonical_extent, canonical_extent);
  }
  return image_plane(rig, pose);
}

/// 8-bit payload of a view: a pure function of its inputs. Only the probe view is fan-masked.
inline std::vector<std::uint8_t> render_payload(const Volume3D& vol, const ProbeRig& rig, const ProbePose& pose, View view,
                                                int w, int h, const ProstateModel& gland, double canonical_extent) {
  Image2D img = extract_slice(vol, view_plane(view, rig, pose, gland, canonical_extent), w, h);
  if (view == View::Probe) img = apply_fan_mask(std::move(img), rig.fan);
  std::vector<std::uint8_t> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = quantize_intensity(img.pixels[i]);
  return out;
}

inline std::optional<Overlay> line_overlay(const ImagePlane& plane, const Vec3& a, const Vec3& b, std::string style) {
  const PlaneProjection pa = project_to_plane(plane, a);
  const PlaneProjection pb = project_to_plane(plane, b);
  const Point2 sa{pa.s, pa.t};
  const Point2 sb{pb.s, pb.t};
  auto clipped = clip_to_unit_square(sa, sb);
  if (!clipped) return std::nullopt;
  Overlay o;
  o.style = std::move(style);
  o.shape = "line";
  o.points = {clipped->first, clipped->second};
  o.clipped = clipped->first.s != sa.s || clipped->first.t != sa.t || clipped->second.s != sb.s || clipped->second.t != sb.t;
  o.out_of_plane = 0.5 * (pa.distance + pb.distance);
  return o;
}

inline Overlay point_overlay(const ImagePlane& plane, const Vec3& p, std::string style) {
  const PlaneProjection pr = project_to_plane(plane, p);
  Overlay o;
  o.style = std::move(style);
  o.shape = "point";
  o.points = {{pr.s, pr.t}};
  o.clipped = pr.s < 0.0 || pr.s > 1.0 || pr.t < 0.0 || pr.t > 1.0;
  o.out_of_plane = pr.distance;
  return o;
}

inline void to_json(json& j, const Point2& p) { j = json::array({p.s, p.t}); }

inline void to_json(json& j, const Overlay& o) {
  j = json{{"style", o.style}, {"shape", o.shape}, {"points", o.points}, {"clipped", o.clipped}, {"out_of_plane", o.out_of_plane}};
  if (o.core_id) j["core_id"] = *o.core_id;
}

inline json frame_metadata(const SliceFrame& f) {
  return {{"type", "frame"},       {"session_id", f.session_id}, {"frame_seq", f.frame_seq},
          {"view", to_string(f.view)}, {"width", f.width},       {"height", f.height},
          {"pose", f.pose},        {"clamped", f.clamped},       {"pose_seq", f.pose_seq},
          {"plane", f.plane},      {"overlays", f.overlays},     {"digest", digest_hex(f.pixels)}};
}

inline json scene_to_json(const SceneState& s) {
  json cores = json::array();
  for (const auto& [id, seg] : s.cores) cores.push_back({{"id", id}, {"p0", seg.p0}, {"p1", seg.p1}});
  Mat3 r = s.probe_frame.linear();
  Vec3 t = s.probe_frame.translation();
  return {{"pose", s.pose},
          {"probe_frame", {{"rotation", r}, {"translation", t}}},
          {"needle", s.needle},
          {"image_plane", s.image_plane},
          {"gland", s.gland},
          {"cores", cores},
          {"exercise_indicator", s.exercise_indicator}};
}

inline json operator_json(const OperatorProfile& p) {
  return {{"id", p.id}, {"name", p.name}, {"level", to_string(p.level)}, {"created_at", p.created_at}};
}

inline json phantom_json(const PhantomMeta& m) {
  json j = phantom_record(m);
  j.erase("type");
  j.erase("v");
  return j;
}

inline json session_json(const SessionRecord& s) {
  json results = json::array();
  for (const auto& r : s.exercise_results)
    results.push_back({{"kind", r.kind}, {"exercise", r.exercise}, {"result", r.result}, {"at", r.at}});
  return {{"id", s.id},
          {"operator_id", s.operator_id},
          {"phantom_id", s.phantom_id},
          {"started_at", s.started_at},
          {"rig", s.config.rig},
          {"gun", s.config.gun},
          {"sectors", s.config.sectors},
          {"cores", s.cores},
          {"exercise_results", results},
          {"closed", s.closed},
          {"closed_at", s.closed_at}};
}

inline json history_json(const HistoryStats& h) {
  json per = json::array();
  for (const auto& [id, s] : h.per_session) per.push_back({{"session_id", id}, {"stats", s}});
  const StatsMean& m = h.mean;
  return {{"sessions", per},
          {"mean",
           {{"sessions", m.sessions},
            {"n_cores", m.n_cores},
            {"n_in_gland", m.n_in_gland},
            {"sector_coverage", m.sector_coverage},
            {"apex_coverage", m.apex_coverage},
            {"boundary_miss_count", m.boundary_miss_count},
            {"mean_in_gland_length", m.mean_in_gland_length},
            {"min_pair_distance", m.min_pair_distance},
            {"spread_cv", m.spread_cv}}}};
}

/// Engine behind the network API: phantoms, session lifecycle, pose handling, frames,
/// firing and exercises. Thread-safe; per-session calls are serialized.
class SimulatorService {
 public:
  SimulatorService(SessionStore& store, ServiceConfig cfg) : store_(store), cfg_(std::move(cfg)) {
    cfg_.rig.validate();
    cfg_.gun.validate();
    cfg_.sectors.validate();
  }

  const ServiceConfig& config() const { return cfg_; }
  SessionStore& store() { return store_; }

  // --- phantoms ---

  PhantomMeta create_phantom(const PhantomParams& params, std::uint64_t seed) { return store_.register_phantom(params, seed); }

  /// Served volume of a phantom: the generated phantom on the 8-bit lattice, cached in memory
  /// and, when a phantom directory is configured, on disk.
  std::shared_ptr<const Volume3D> volume(std::uint64_t phantom_id) {
    const PhantomMeta meta = store_.get_phantom(phantom_id);
    std::lock_guard lock(volume_mu_);
    if (auto it = volumes_.find(phantom_id); it != volumes_.end()) return it->second;
    std::shared_ptr<const Volume3D> vol;
    const std::filesystem::path cached =
        cfg_.phantom_dir.empty() ? std::filesystem::path{} : cfg_.phantom_dir / ("phantom-" + std::to_string(phantom_id) + ".bvol");
    if (!cached.empty() && std::filesystem::exists(cached)) {
      vol = std::make_shared<const Volume3D>(load_volume(cached));
    } else {
      vol = std::make_shared<const Volume3D>(quantized(generate_phantom(meta.params, meta.seed).first));
      if (!cached.empty()) {
        std::filesystem::create_directories(cfg_.phantom_dir);
        save_volume(*vol, cached);
      }
    }
    volumes_[phantom_id] = vol;
    return vol;
  }

  // --- sessions ---

  std::uint64_t open_session(std::uint64_t operator_id, std::uint64_t phantom_id) {
    return store_.open_session(operator_id, phantom_id, SessionConfig{cfg_.rig, cfg_.gun, cfg_.sectors});
  }

  void close_session(std::uint64_t session_id) { store_.close_session(session_id); }

  /// Accepts a pose for the session, clamped to the rig limits.
  ProbePose set_pose(std::uint64_t session_id, const ProbePose& requested, std::uint64_t pose_seq = 0, bool* clamped = nullptr) {
    const SessionRecord rec = store_.get_session(session_id);
    bool was_clamped = false;
    const ProbePose pose = clamp_pose(rec.config.rig, requested, &was_clamped);
    std::lock_guard lock(mu_);
    Runtime& rt = runtime(session_id);
    rt.pose = pose;
    rt.pose_clamped = was_clamped;
    rt.pose_seq = pose_seq;
    if (clamped) *clamped = was_clamped;
    return pose;
  }

  ProbePose current_pose(std::uint64_t session_id) {
    (void)store_.get_session(session_id);
    std::lock_guard lock(mu_);
    return runtime(session_id).pose;
  }

  /// Renders a view at the session's latest accepted pose and advances its frame counter.
  SliceFrame render(std::uint64_t session_id, View view, int w, int h) {
    if (w < 2 || h < 2 || w > 4096 || h > 4096) throw BadResolution("frame resolution out of range");
    const SessionRecord rec = store_.get_session(session_id);
    const ProstateModel gland = store_.get_phantom(rec.phantom_id).params.gland();
    const auto vol = volume(rec.phantom_id);

    SliceFrame f;
    std::optional<Exercise> exercise;
    {
      std::lock_guard lock(mu_);
      Runtime& rt = runtime(session_id);
      f.pose = rt.pose;
      f.clamped = rt.pose_clamped;
      f.pose_seq = rt.pose_seq;
      f.frame_seq = ++rt.frame_seq[view];
      exercise = rt.exercise;
    }
    f.session_id = session_id;
    f.view = view;
    f.width = w;
    f.height = h;
    f.plane = view_plane(view, rec.config.rig, f.pose, gland, cfg_.canonical_extent);
    f.pixels = render_payload(*vol, rec.config.rig, f.pose, view, w, h, gland, cfg_.canonical_extent);

    const Ray ray = needle_ray(rec.config.rig, f.pose);
    if (auto o = line_overlay(f.plane, ray.origin, ray.at(rec.config.gun.max_reach), "needle")) f.overlays.push_back(*o);
    for (const auto& core : rec.cores) {
      Overlay marker = point_overlay(f.plane, core.sample_midpoint(), "recorded");
      marker.core_id = core.id;
      f.overlays.push_back(marker);
      if (auto line = line_overlay(f.plane, core.p0, core.p1, "recorded")) {
        line->core_id = core.id;
        f.overlays.push_back(*line);
      }
    }
    if (exercise && exercise->hint_level >= 1) {
      std::optional<Vec3> target;
      if (auto* s = std::get_if<SphereTarget>(&exercise->target)) target = s->center;
      if (auto* p = std::get_if<PlaneTarget>(&exercise->target)) target = p->plane.point_at(0.5, 0.5);
      if (target) {
        Overlay o = point_overlay(f.plane, *target, "target");
        if (std::abs(o.out_of_plane) < kHintSliceDistance) f.overlays.push_back(o);
      }
    }
    return f;
  }

  /// Fires at the latest accepted pose and persists the core.
  BiopsyCore fire(std::uint64_t session_id, double needle_depth) {
    const SessionRecord rec = store_.get_session(session_id);
    if (rec.closed) throw SessionClosed("session " + std::to_string(session_id) + " is closed");
    const ProstateModel gland = store_.get_phantom(rec.phantom_id).params.gland();
    ProbePose pose;
    {
      std::lock_guard lock(mu_);
      pose = runtime(session_id).pose;
    }
    BiopsyCore core = store_.append_core(
        session_id, biopsym::fire(rec.config.rig, pose, needle_depth, rec.config.gun, gland, rec.config.sectors));
    std::lock_guard lock(mu_);
    ++runtime(session_id).fire_epoch;
    return core;
  }

  /// Bumped by every fire; stream sessions watch it to refresh canonical views.
  std::uint64_t fire_epoch(std::uint64_t session_id) {
    std::lock_guard lock(mu_);
    return runtime(session_id).fire_epoch;
  }

  SessionStats stats(std::uint64_t session_id) { return store_.session_stats_of(session_id); }

  std::vector<Recommendation> recommendations(std::uint64_t operator_id) {
    const HistoryStats h = store_.operator_history_stats(operator_id);
    return recommend_exercises(h.mean.recommendation_inputs(), cfg_.gun.core_length);
  }

  // --- exercises ---

  /// Starts an exercise described by `spec` (see README for the accepted fields).
  Exercise start_exercise(std::uint64_t session_id, const json& spec) {
    const SessionRecord rec = store_.get_session(session_id);
    if (rec.closed) throw SessionClosed("session " + std::to_string(session_id) + " is closed");
    const ProstateModel gland = store_.get_phantom(rec.phantom_id).params.gland();
    const OperatorProfile op = store_.get_operator(rec.operator_id);

    const auto kind = parse_exercise_kind(spec.value("kind", ""));
    if (!kind) throw InvalidParams("unknown exercise kind");
    Exercise ex;
    ex.hint_level = spec.value("hint_level", default_hint_level(op.level));
    switch (*kind) {
      case ExerciseKind::PlaneLocalization: {
        PlaneTarget t;
        if (spec.contains("plane")) {
          t.plane = spec.at("plane").get<ImagePlane>();
        } else if (spec.contains("pose")) {
          t.plane = image_plane(rec.config.rig, spec.at("pose").get<ProbePose>());
        } else {
          const auto view = parse_view(spec.value("view", "sagittal"));
          if (!view) throw InvalidParams("unknown view");
          t.plane = view_plane(*view, rec.config.rig, ProbePose{}, gland, cfg_.canonical_extent);
        }
        t.tol_angle = spec.value("tol_angle", t.tol_angle);
        t.tol_offset = spec.value("tol_offset", t.tol_offset);
        ex.target = t;
        break;
      }
      case ExerciseKind::TargetHit: {
        SphereTarget t;
        if (spec.contains("center")) {
          t.center = spec.at("center").get<Vec3>();
        } else {
          const auto sector = SectorId::parse(spec.value("sector", "Right-Apex-Lateral"));
          if (!sector) throw InvalidParams("unknown sector");
          t.center = sector_midpoint_target(gland, rec.config.sectors, *sector);
        }
        t.radius = spec.value("radius", t.radius);
        if (!contains(gland, t.center)) throw InvalidParams("target centre lies outside the gland");
        ex.target = t;
        break;
      }
      case ExerciseKind::SchemeCompletion: {
        SchemeTarget t;
        t.scheme = rec.config.sectors;
        t.coverage_threshold = spec.value("coverage_threshold", t.coverage_threshold);
        if (spec.contains("max_spread_cv")) t.max_spread_cv = spec.at("max_spread_cv").get<double>();
        ex.target = t;
        break;
      }
    }
    ex.validate();
    std::lock_guard lock(mu_);
    Runtime& rt = runtime(session_id);
    rt.exercise = ex;
    rt.exercise_first_core = rec.cores.size();
    return ex;
  }

  std::optional<Exercise> active_exercise(std::uint64_t session_id) {
    std::lock_guard lock(mu_);
    return runtime(session_id).exercise;
  }

  /// Scores the active exercise against the session's evidence and records the result.
  /// `evidence` may name the evidence kind ("plane", "cores", "session"); a mismatch is an error.
  ExerciseResult submit_exercise(std::uint64_t session_id, const std::string& evidence = "") {
    const SessionRecord rec = store_.get_session(session_id);
    const ProstateModel gland = store_.get_phantom(rec.phantom_id).params.gland();
    Exercise ex;
    std::size_t first_core = 0;
    ProbePose pose;
    {
      std::lock_guard lock(mu_);
      Runtime& rt = runtime(session_id);
      if (!rt.exercise) throw EvidenceMismatch("no active exercise");
      ex = *rt.exercise;
      first_core = rt.exercise_first_core;
      pose = rt.pose;
    }
    std::string kind = evidence;
    if (kind.empty()) {
      switch (ex.kind()) {
        case ExerciseKind::PlaneLocalization: kind = "plane"; break;
        case ExerciseKind::TargetHit: kind = "cores"; break;
        case ExerciseKind::SchemeCompletion: kind = "session"; break;
      }
    }
    ExerciseEvidence ev;
    if (kind == "plane") {
      ev = PlaneEvidence{image_plane(rec.config.rig, pose)};
    } else if (kind == "cores") {
      ev = CoreEvidence{std::vector<BiopsyCore>(rec.cores.begin() + static_cast<std::ptrdiff_t>(std::min(first_core, rec.cores.size())),
                                                rec.cores.end())};
    } else if (kind == "session") {
      ev = SessionEvidence{rec.cores, gland};
    } else {
      throw EvidenceMismatch("unknown evidence kind '" + kind + "'");
    }
    const ExerciseResult result = evaluate_exercise(ex, ev);
    if (!rec.closed)
      store_.append_exercise_result(session_id, {to_string(ex.kind()), exercise_to_json(ex), exercise_result_to_json(result), 0});
    std::lock_guard lock(mu_);
    runtime(session_id).exercise.reset();
    return result;
  }

  SceneState scene(std::uint64_t session_id) {
    const SessionRecord rec = store_.get_session(session_id);
    SceneState s;
    std::optional<Exercise> ex;
    {
      std::lock_guard lock(mu_);
      s.pose = runtime(session_id).pose;
      ex = runtime(session_id).exercise;
    }
    s.probe_frame = pose_to_frame(rec.config.rig, s.pose);
    s.needle = needle_ray(rec.config.rig, s.pose);
    s.image_plane = image_plane(rec.config.rig, s.pose);
    s.gland = store_.get_phantom(rec.phantom_id).params.gland();
    for (const auto& c : rec.cores) s.cores.emplace_back(c.id, c.segment());
    if (ex && ex->hint_level >= 2) s.exercise_indicator = exercise_to_json(*ex);
    return s;
  }

 private:
  struct Runtime {
    ProbePose pose;
    bool pose_clamped = false;
    std::uint64_t pose_seq = 0;
    std::map<View, std::uint64_t> frame_seq;
    std::uint64_t fire_epoch = 0;
    std::optional<Exercise> exercise;
    std::size_t exercise_first_core = 0;
  };

  Runtime& runtime(std::uint64_t session_id) { return runtimes_[session_id]; }

  SessionStore& store_;
  ServiceConfig cfg_;
  std::mutex mu_;
  std::map<std::uint64_t, Runtime> runtimes_;
  std::mutex volume_mu_;
  std::map<std::uint64_t, std::shared_ptr<const Volume3D>> volumes_;
};

}  // namespace biopsym
