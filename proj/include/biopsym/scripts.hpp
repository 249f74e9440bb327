#pragma once

#include "biopsym/analytics.hpp"
#include "biopsym/biopsy.hpp"
#include "biopsym/error.hpp"
#include "biopsym/frame_codec.hpp"
#include "biopsym/serialization.hpp"
#include "biopsym/service.hpp"
#include "biopsym/session_store.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace biopsym {

// ---------------------------------------------------------------------------
// Pose/fire scripts
//
// JSON lines. The first is a header:
//   {"type":"script","v":1,"phantom":{"params":{..},"seed":7},"operator":"name","level":"novice","resolution":[w,h]}
// followed by
//   {"type":"pose","pose":{..},"digest":"<fnv1a hex of the probe view>"}   digest optional
//   {"type":"fire","needle_depth":42.0}

inline std::vector<json> read_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<json> lines;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      lines.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  if (lines.empty() || lines.front().value("type", "") != "script") throw FormatError(path.string() + ": missing script header");
  if (lines.front().value("v", 0) != 1) throw FormatError(path.string() + ": unsupported script version");
  return lines;
}

inline void write_script(const std::vector<json>& lines, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const json& l : lines) out << l.dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

/// Script that aims and fires one core at each of the 12 sector midpoint targets.
inline std::vector<json> make_drill_script(const PhantomParams& params, std::uint64_t seed, const ProbeRig& rig = {},
                                           const GunParams& gun = {}, const SectorScheme12& sectors = {}, int resolution = 128) {
  params.validate();
  const ProstateModel gland = params.gland();
  std::vector<json> lines;
  lines.push_back({{"type", "script"},
                   {"v", 1},
                   {"phantom", {{"params", params}, {"seed", seed}}},
                   {"operator", "drill"},
                   {"level", "novice"},
                   {"resolution", {resolution, resolution}}});
  for (int i = 0; i < kSectorCount; ++i) {
    const AimSolution aim = aim_core_midpoint(rig, gun, sector_midpoint_target(gland, sectors, SectorId::from_index(i)));
    lines.push_back({{"type", "pose"}, {"pose", aim.pose}});
    lines.push_back({{"type", "fire"}, {"needle_depth", aim.needle_depth}});
  }
  return lines;
}

struct ReplayResult {
  SessionStats stats;
  int digests_checked = 0;
  int digest_mismatches = 0;
  std::vector<json> recorded;  // the script with every pose line carrying its digest
};

/// Re-executes a script against a store, recomputing stats and checking frame digests.
inline ReplayResult replay_script(const std::vector<json>& lines, SessionStore& store, const ServiceConfig& cfg = {}) {
  if (lines.empty() || lines.front().value("type", "") != "script") throw FormatError("missing script header");
  const json& header = lines.front();
  int w = 128, h = 128;
  if (header.contains("resolution")) {
    w = header.at("resolution").at(0).get<int>();
    h = header.at("resolution").at(1).get<int>();
  }
  const json phantom = header.value("phantom", json::object());
  const PhantomParams params = phantom.contains("params") ? phantom.at("params").get<PhantomParams>() : PhantomParams{};
  const auto level = parse_operator_level(header.value("level", "novice"));
  if (!level) throw FormatError("unknown operator level in script header");

  SimulatorService svc(store, cfg);
  const OperatorProfile op = store.create_operator(header.value("operator", "replay"), *level);
  const PhantomMeta meta = svc.create_phantom(params, phantom.value("seed", std::uint64_t{0}));
  const std::uint64_t session = svc.open_session(op.id, meta.id);

  ReplayResult r;
  r.recorded.push_back(header);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    json line = lines[i];
    const std::string type = line.value("type", "");
    if (type == "pose") {
      svc.set_pose(session, line.at("pose").get<ProbePose>());
      const SliceFrame f = svc.render(session, View::Probe, w, h);
      const std::string digest = digest_hex(f.pixels);
      if (line.contains("digest")) {
        ++r.digests_checked;
        if (line.at("digest").get<std::string>() != digest) ++r.digest_mismatches;
      }
      line["digest"] = digest;
    } else if (type == "fire") {
      svc.fire(session, line.at("needle_depth").get<double>());
    } else {
      throw FormatError("script line " + std::to_string(i + 1) + ": unknown type '" + type + "'");
    }
    r.recorded.push_back(std::move(line));
  }
  r.stats = svc.stats(session);
  svc.close_session(session);
  return r;
}

// ---------------------------------------------------------------------------
// Reslice benchmark

struct BenchResult {
  int iterations = 0;
  int resolution = 0;
  double slice_median_ms = 0.0;
  double slice_p95_ms = 0.0;
  double frame_median_ms = 0.0;  // slice + fan mask + 8-bit conversion
  double frame_p95_ms = 0.0;
};

inline double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline ProbePose random_pose(const ProbeRig& rig, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ProbePose p;
  p.pitch = u(rng) * rig.limits.pitch_max;
  p.yaw = u(rng) * rig.limits.yaw_max;
  p.roll = u(rng) * kPi;
  p.insertion = 0.5 * (u(rng) + 1.0) * rig.limits.insertion_max;
  return p;
}

inline BenchResult bench_reslice(const Volume3D& vol, const ProbeRig& rig, int resolution, int iterations, std::uint64_t seed = 0) {
  if (iterations < 1) throw InvalidParams("iterations must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<double> slice_ms, frame_ms;
  using clock = std::chrono::steady_clock;
  volatile float sink = 0.0f;
  for (int i = 0; i < iterations; ++i) {
    const ProbePose pose = random_pose(rig, rng);
    const ImagePlane plane = image_plane(rig, pose);
    auto t0 = clock::now();
    Image2D img = extract_slice(vol, plane, resolution, resolution);
    auto t1 = clock::now();
    img = apply_fan_mask(std::move(img), rig.fan);
    std::vector<std::uint8_t> bytes(img.pixels.size());
    for (std::size_t k = 0; k < bytes.size(); ++k) bytes[k] = quantize_intensity(img.pixels[k]);
    auto t2 = clock::now();
    sink = sink + static_cast<float>(bytes[bytes.size() / 2]);
    slice_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    frame_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t0).count());
  }
  return {iterations, resolution, percentile(slice_ms, 0.5), percentile(slice_ms, 0.95), percentile(frame_ms, 0.5),
          percentile(frame_ms, 0.95)};
}

// ---------------------------------------------------------------------------
// Report formatting

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string format_compare_table(const ProtocolReport& report) {
  std::size_t name_w = 6;
  for (const auto& s : report.schemes) name_w = std::max(name_w, s.name.size());
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  std::string out = pad("scheme", name_w) + "  cores  trials  coverage  apex_cov  detection  ci95\n";
  for (const auto& s : report.schemes) {
    out += pad(s.name, name_w) + "  ";
    if (!s.feasible) {
      out += "infeasible: " + s.infeasible_reason + "\n";
      continue;
    }
    out += pad(std::to_string(s.cores_per_trial), 5) + "  " + pad(std::to_string(s.trials), 6) + "  " +
           pad(format_fixed(s.mean_sector_coverage), 8) + "  " + pad(format_fixed(s.mean_apex_coverage), 8) + "  " +
           pad(format_fixed(s.detection_probability), 9) + "  " + format_fixed(s.ci_half_width) + "\n";
  }
  return out;
}

inline std::string format_compare_records(const ProtocolReport& report) {
  std::string out;
  for (const auto& s : report.schemes) out += json(s).dump() + "\n";
  return out;
}

}  // namespace biopsym
