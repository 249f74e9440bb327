#pragma once

#include "biopsym/anatomy.hpp"
#include "biopsym/biopsy.hpp"
#include "biopsym/error.hpp"
#include "biopsym/geometry.hpp"
#include "biopsym/image.hpp"
#include "biopsym/probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace biopsym {

// ---------------------------------------------------------------------------
// Session statistics

struct SessionStats {
  int n_cores = 0;
  int n_in_gland = 0;
  double sector_coverage = 0.0;  // fraction of the 12 sectors hit
  double apex_coverage = 0.0;    // fraction of the 4 apex sectors hit
  std::optional<double> mean_in_gland_length;
  std::optional<double> min_pair_distance;  // between in-gland midpoints
  std::optional<double> spread_cv;          // CV of nearest-neighbour midpoint distances
  int boundary_miss_count = 0;
  std::array<int, kSectorCount> sector_hits{};

  friend bool operator==(const SessionStats&, const SessionStats&) = default;
};

namespace detail {

inline double population_cv(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return std::sqrt(var) / mean;
}

}  // namespace detail

/// Statistics of a biopsy series against `model`. In-gland extents and sectors are recomputed
/// from the core endpoints, so stored cores can be rescored against another sectorization.
inline SessionStats session_stats(const std::vector<BiopsyCore>& cores, const ProstateModel& model,
                                  const SectorScheme12& scheme) {
  SessionStats st;
  st.n_cores = static_cast<int>(cores.size());
  std::vector<Vec3> mids;
  double total_len = 0.0;
  for (const auto& core : cores) {
    const GlandIntersection hit = segment_gland_intersection(model, core.p0, core.p1);
    if (hit.length <= 0.0) {
      ++st.boundary_miss_count;
      continue;
    }
    ++st.n_in_gland;
    total_len += hit.length;
    const Vec3 mid = hit.clipped->midpoint();
    mids.push_back(mid);
    ++st.sector_hits[classify_normalized(model, scheme, model.normalized(mid)).index()];
  }

  int hit = 0;
  int apex_hit = 0;
  for (int s = 0; s < kSectorCount; ++s) {
    if (st.sector_hits[s] == 0) continue;
    ++hit;
    if (SectorId::from_index(s).is_apex()) ++apex_hit;
  }
  st.sector_coverage = hit / static_cast<double>(kSectorCount);
  st.apex_coverage = apex_hit / static_cast<double>(kApexSectorCount);

  if (st.n_in_gland > 0) st.mean_in_gland_length = total_len / st.n_in_gland;
  if (mids.size() >= 2) {
    double min_d = std::numeric_limits<double>::infinity();
    std::vector<double> nn(mids.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < mids.size(); ++i) {
      for (std::size_t j = i + 1; j < mids.size(); ++j) {
        const double d = (mids[i] - mids[j]).norm();
        min_d = std::min(min_d, d);
        nn[i] = std::min(nn[i], d);
        nn[j] = std::min(nn[j], d);
      }
    }
    st.min_pair_distance = min_d;
    if (mids.size() >= 3) st.spread_cv = detail::population_cv(nn);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Exercises

enum class ExerciseKind { PlaneLocalization, TargetHit, SchemeCompletion };

inline std::string to_string(ExerciseKind k) {
  switch (k) {
    case ExerciseKind::PlaneLocalization: return "PlaneLocalization";
    case ExerciseKind::TargetHit: return "TargetHit";
    case ExerciseKind::SchemeCompletion: return "SchemeCompletion";
  }
  return "?";
}

inline std::optional<ExerciseKind> parse_exercise_kind(const std::string& s) {
  for (auto k : {ExerciseKind::PlaneLocalization, ExerciseKind::TargetHit, ExerciseKind::SchemeCompletion})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct PlaneTarget {
  ImagePlane plane;
  double tol_angle = 10.0 * kPi / 180.0;
  double tol_offset = 5.0;
};

struct SphereTarget {
  Vec3 center = Vec3::Zero();
  double radius = 5.0;
};

struct SchemeTarget {
  SectorScheme12 scheme;
  double coverage_threshold = 10.0 / 12.0;
  std::optional<double> max_spread_cv;
};

struct Exercise {
  std::variant<PlaneTarget, SphereTarget, SchemeTarget> target;
  int hint_level = 0;  // 0 none, 1 in-slice target, 2 also 3D indicator

  ExerciseKind kind() const { return static_cast<ExerciseKind>(target.index()); }

  void validate() const {
    if (hint_level < 0 || hint_level > 2) throw InvalidParams("hint_level must be 0, 1 or 2");
    if (auto* p = std::get_if<PlaneTarget>(&target)) {
      p->plane.validate();
      if (!(p->tol_angle > 0.0 && p->tol_offset > 0.0)) throw InvalidParams("plane tolerances must be positive");
    } else if (auto* s = std::get_if<SphereTarget>(&target)) {
      if (!(s->radius > 0.0)) throw InvalidParams("target radius must be positive");
    } else if (auto* c = std::get_if<SchemeTarget>(&target)) {
      c->scheme.validate();
      if (!(c->coverage_threshold > 0.0 && c->coverage_threshold <= 1.0))
        throw InvalidParams("coverage threshold must lie in (0, 1]");
    }
  }
};

struct PlaneEvidence {
  ImagePlane achieved;
};
struct CoreEvidence {
  std::vector<BiopsyCore> cores;
};
struct SessionEvidence {
  std::vector<BiopsyCore> cores;
  ProstateModel model;
};
using ExerciseEvidence = std::variant<PlaneEvidence, CoreEvidence, SessionEvidence>;

struct PlaneDetail {
  double angle = 0.0;   // between plane normals, sign-agnostic
  double offset = 0.0;  // between plane origins
};
struct HitDetail {
  bool hit = false;
  std::optional<double> miss_distance;  // closest approach of any core to the target centre
};

struct ExerciseResult {
  bool passed = false;
  double score = 0.0;
  std::variant<PlaneDetail, HitDetail, SessionStats> detail;
};

/// Score a passing attempt reaches at minimum.
inline double pass_threshold(ExerciseKind kind, const Exercise& ex) {
  switch (kind) {
    case ExerciseKind::PlaneLocalization: return 0.25;
    case ExerciseKind::TargetHit: return 1.0;
    case ExerciseKind::SchemeCompletion: return std::get<SchemeTarget>(ex.target).coverage_threshold;
  }
  return 1.0;
}

namespace detail {
inline double linear_falloff(double x, double tol) { return std::clamp(1.0 - x / (2.0 * tol), 0.0, 1.0); }
}  // namespace detail

inline ExerciseResult evaluate_exercise(const Exercise& ex, const ExerciseEvidence& evidence) {
  ExerciseResult res;
  switch (ex.kind()) {
    case ExerciseKind::PlaneLocalization: {
      const auto* ev = std::get_if<PlaneEvidence>(&evidence);
      if (!ev) throw EvidenceMismatch("PlaneLocalization expects a final image plane");
      const auto& tgt = std::get<PlaneTarget>(ex.target);
      PlaneDetail d;
      const double raw = angle_between(ev->achieved.normal(), tgt.plane.normal());
      d.angle = std::min(raw, kPi - raw);
      d.offset = (ev->achieved.origin - tgt.plane.origin).norm();
      res.passed = d.angle <= tgt.tol_angle && d.offset <= tgt.tol_offset;
      res.score = detail::linear_falloff(d.angle, tgt.tol_angle) * detail::linear_falloff(d.offset, tgt.tol_offset);
      res.detail = d;
      break;
    }
    case ExerciseKind::TargetHit: {
      const auto* ev = std::get_if<CoreEvidence>(&evidence);
      if (!ev) throw EvidenceMismatch("TargetHit expects fired cores");
      const auto& tgt = std::get<SphereTarget>(ex.target);
      HitDetail d;
      for (const auto& core : ev->cores) {
        const double dist = point_segment_distance(tgt.center, core.segment());
        if (!d.miss_distance || dist < *d.miss_distance) d.miss_distance = dist;
      }
      d.hit = d.miss_distance && *d.miss_distance <= tgt.radius;
      res.passed = d.hit;
      if (d.hit)
        res.score = 1.0;
      else if (d.miss_distance)
        res.score = std::clamp(tgt.radius / *d.miss_distance, 0.0, 1.0);
      res.detail = d;
      break;
    }
    case ExerciseKind::SchemeCompletion: {
      const auto* ev = std::get_if<SessionEvidence>(&evidence);
      if (!ev) throw EvidenceMismatch("SchemeCompletion expects a full session");
      const auto& tgt = std::get<SchemeTarget>(ex.target);
      const SessionStats st = session_stats(ev->cores, ev->model, tgt.scheme);
      res.passed = st.sector_coverage >= tgt.coverage_threshold && st.boundary_miss_count == 0;
      if (tgt.max_spread_cv && st.spread_cv && *st.spread_cv > *tgt.max_spread_cv) res.passed = false;
      res.score = st.sector_coverage;
      res.detail = st;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Recommendations

struct Recommendation {
  ExerciseKind kind;
  std::string rationale;

  friend bool operator==(const Recommendation&, const Recommendation&) = default;
};

/// The handful of statistics the recommendation rules look at.
struct RecommendationInputs {
  double apex_coverage = 0.0;
  double boundary_miss_count = 0.0;
  std::optional<double> mean_in_gland_length;
  std::optional<double> spread_cv;

  static RecommendationInputs from(const SessionStats& s) {
    return {s.apex_coverage, static_cast<double>(s.boundary_miss_count), s.mean_in_gland_length, s.spread_cv};
  }
};

/// Rule table, in priority order:
///   apex_coverage < 0.5                     -> TargetHit        "apex"
///   boundary misses > 2                     -> PlaneLocalization "boundary"
///   mean in-gland length < 0.6 core_length  -> TargetHit        "depth"
///   spread_cv > 0.6                         -> SchemeCompletion "spread"
///   otherwise                               -> SchemeCompletion "maintenance"
inline std::vector<Recommendation> recommend_exercises(const RecommendationInputs& in, double core_length = 17.0) {
  std::vector<Recommendation> out;
  if (in.apex_coverage < 0.5) out.push_back({ExerciseKind::TargetHit, "apex"});
  if (in.boundary_miss_count > 2) out.push_back({ExerciseKind::PlaneLocalization, "boundary"});
  if (in.mean_in_gland_length && *in.mean_in_gland_length < 0.6 * core_length)
    out.push_back({ExerciseKind::TargetHit, "depth"});
  if (in.spread_cv && *in.spread_cv > 0.6) out.push_back({ExerciseKind::SchemeCompletion, "spread"});
  if (out.empty()) out.push_back({ExerciseKind::SchemeCompletion, "maintenance"});
  return out;
}

inline std::vector<Recommendation> recommend_exercises(const SessionStats& stats, double core_length = 17.0) {
  return recommend_exercises(RecommendationInputs::from(stats), core_length);
}

// ---------------------------------------------------------------------------
// Monte-Carlo protocol comparison

struct NoiseModel {
  double angular_sigma = 0.0;  // pitch and yaw, independent
  double depth_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// A named list of core targets in normalized gland coordinates (u, v, w).
struct ProtocolScheme {
  std::string name;
  std::vector<Vec3> targets;
};

struct GlandDistribution {
  ProstateModel nominal;
  double size_sigma = 0.05;  // relative, per semi-axis, clamped to +-3 sigma
};

struct CompareConfig {
  std::vector<ProtocolScheme> schemes;
  ProbeRig rig;
  GunParams gun;
  SectorScheme12 sectors;
  GlandDistribution glands;
  NoiseModel noise;
  double tumor_radius = 5.0;
  int trials = 1000;
  unsigned threads = 0;  // 0: hardware concurrency
};

struct SchemeReport {
  std::string name;
  bool feasible = true;
  std::string infeasible_reason;
  int trials = 0;
  int cores_per_trial = 0;
  double mean_sector_coverage = 0.0;
  double mean_apex_coverage = 0.0;
  double detection_probability = 0.0;
  double ci_half_width = 0.0;  // 95% normal-approximation binomial
};

struct ProtocolReport {
  std::vector<SchemeReport> schemes;
};

/// The 12 sector centroids as a protocol, and the 6 medial ones as the classic sextant.
inline ProtocolScheme twelve_core_scheme(const SectorScheme12& sectors = {}) {
  const auto c = sector_centroids_normalized(ProstateModel{}, sectors);
  ProtocolScheme s{"12-core", {}};
  for (const auto& p : c) s.targets.push_back(p);
  return s;
}

inline ProtocolScheme sextant_scheme(const SectorScheme12& sectors = {}) {
  const auto c = sector_centroids_normalized(ProstateModel{}, sectors);
  ProtocolScheme s{"sextant", {}};
  for (int i = 0; i < kSectorCount; ++i)
    if (SectorId::from_index(i).track == Track::Medial) s.targets.push_back(c[i]);
  return s;
}

namespace detail {

inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t trial, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline Vec3 uniform_in_unit_ball(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  while (true) {
    const Vec3 p(u(rng), u(rng), u(rng));
    if (p.squaredNorm() <= 1.0) return p;
  }
}

/// Tumour centre uniform among positions keeping the ball inside the gland. When no such
/// position exists (radius >= smallest semi-axis) the tumour is centred on the gland.
inline Vec3 place_tumor(const ProstateModel& gland, double radius, std::mt19937_64& rng) {
  if (radius >= gland.semi_axes.minCoeff()) return gland.center;
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const Vec3 p = gland.from_normalized(uniform_in_unit_ball(rng));
    if (distance_to_surface(gland, p) >= radius) return p;
  }
  return gland.center;
}

struct TrialOutcome {
  double sector_coverage = 0.0;
  double apex_coverage = 0.0;
  bool detected = false;
};

}  // namespace detail

inline ProtocolReport compare_protocols(const CompareConfig& cfg) {
  if (cfg.trials < 1) throw InvalidParams("trials must be >= 1");
  if (cfg.schemes.empty()) throw InvalidParams("at least one scheme is required");
  if (!(cfg.noise.angular_sigma >= 0.0 && cfg.noise.depth_sigma >= 0.0)) throw InvalidParams("noise sigmas must be >= 0");
  if (!(cfg.tumor_radius > 0.0)) throw InvalidParams("tumor radius must be positive");
  cfg.rig.validate();
  cfg.gun.validate();
  cfg.sectors.validate();
  cfg.glands.nominal.validate();

  ProtocolReport report;
  std::vector<std::size_t> active;
  for (std::size_t s = 0; s < cfg.schemes.size(); ++s) {
    SchemeReport sr;
    sr.name = cfg.schemes[s].name;
    sr.cores_per_trial = static_cast<int>(cfg.schemes[s].targets.size());
    for (std::size_t t = 0; t < cfg.schemes[s].targets.size() && sr.feasible; ++t) {
      try {
        (void)aim_core_midpoint(cfg.rig, cfg.gun, cfg.glands.nominal.from_normalized(cfg.schemes[s].targets[t]));
      } catch (const InfeasibleTarget& e) {
        sr.feasible = false;
        sr.infeasible_reason = "target " + std::to_string(t) + ": " + e.what();
      }
    }
    if (sr.feasible) active.push_back(s);
    report.schemes.push_back(std::move(sr));
  }

  const std::size_t n_trials = static_cast<std::size_t>(cfg.trials);
  std::vector<detail::TrialOutcome> outcomes(n_trials * cfg.schemes.size());

  auto run_trial = [&](std::size_t trial) {
    auto rng = detail::substream(cfg.noise.seed, trial, 0);
    ProstateModel gland = cfg.glands.nominal;
    if (cfg.glands.size_sigma > 0.0) {
      std::normal_distribution<double> n(0.0, 1.0);
      for (int a = 0; a < 3; ++a) gland.semi_axes[a] *= 1.0 + cfg.glands.size_sigma * std::clamp(n(rng), -3.0, 3.0);
    }
    const Vec3 tumor = detail::place_tumor(gland, cfg.tumor_radius, rng);

    for (std::size_t s : active) {
      auto noise_rng = detail::substream(cfg.noise.seed, trial, 1 + s);
      std::normal_distribution<double> n(0.0, 1.0);
      std::vector<BiopsyCore> cores;
      bool detected = false;
      for (const Vec3& target_uvw : cfg.schemes[s].targets) {
        AimSolution aim;
        try {
          aim = aim_core_midpoint(cfg.rig, cfg.gun, gland.from_normalized(target_uvw));
        } catch (const InfeasibleTarget&) {
          continue;  // this gland instance puts the target out of reach; the core is not taken
        }
        // Draw unconditionally so the stream layout does not depend on the sigmas.
        const double dp = n(noise_rng);
        const double dy = n(noise_rng);
        const double dd = n(noise_rng);
        aim.pose.pitch += cfg.noise.angular_sigma * dp;
        aim.pose.yaw += cfg.noise.angular_sigma * dy;
        aim.needle_depth = std::clamp(aim.needle_depth + cfg.noise.depth_sigma * dd, 0.0, cfg.gun.max_needle_depth());
        const ProbePose pose = clamp_pose(cfg.rig, aim.pose);
        BiopsyCore core = fire(cfg.rig, pose, aim.needle_depth, cfg.gun, gland, cfg.sectors);
        if (core.gland_segment && point_segment_distance(tumor, *core.gland_segment) <= cfg.tumor_radius) detected = true;
        cores.push_back(std::move(core));
      }
      const SessionStats st = session_stats(cores, gland, cfg.sectors);
      outcomes[trial * cfg.schemes.size() + s] = {st.sector_coverage, st.apex_coverage, detected};
    }
  };

  unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_trials));
  if (threads <= 1) {
    for (std::size_t t = 0; t < n_trials; ++t) run_trial(t);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < n_trials; t += threads) run_trial(t);
      });
  }

  // Reduce in trial order so the result is independent of scheduling.
  for (std::size_t s : active) {
    SchemeReport& sr = report.schemes[s];
    double cov = 0.0;
    double apex = 0.0;
    long detected = 0;
    for (std::size_t t = 0; t < n_trials; ++t) {
      const auto& o = outcomes[t * cfg.schemes.size() + s];
      cov += o.sector_coverage;
      apex += o.apex_coverage;
      detected += o.detected ? 1 : 0;
    }
    sr.trials = cfg.trials;
    sr.mean_sector_coverage = cov / cfg.trials;
    sr.mean_apex_coverage = apex / cfg.trials;
    sr.detection_probability = static_cast<double>(detected) / cfg.trials;
    const double p = sr.detection_probability;
    sr.ci_half_width = 1.96 * std::sqrt(p * (1.0 - p) / cfg.trials);
  }
  return report;
}

}  // namespace biopsym
