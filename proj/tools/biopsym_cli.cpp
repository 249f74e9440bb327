// biopsym: headless front end to the simulator.

#include "biopsym/analytics.hpp"
#include "biopsym/error.hpp"
#include "biopsym/scripts.hpp"
#include "biopsym/serialization.hpp"
#include "biopsym/server.hpp"
#include "biopsym/service.hpp"
#include "biopsym/session_store.hpp"
#include "biopsym/volume.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace biopsym;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kBudget = 3 };

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

struct PhantomOpts {
  std::string params_file;
  std::uint64_t seed = 0;
  std::string out;
  std::optional<double> spacing;
  std::vector<double> gland_axes;
  std::optional<double> speckle;
  std::optional<double> rectal_wall_depth;

  PhantomParams params() const {
    PhantomParams p = params_file.empty() ? PhantomParams{} : read_json_file(params_file).get<PhantomParams>();
    if (spacing) p.spacing = *spacing;
    if (!gland_axes.empty()) p.gland_semi_axes = Vec3(gland_axes[0], gland_axes[1], gland_axes[2]);
    if (speckle) p.speckle_amplitude = *speckle;
    if (rectal_wall_depth) p.rectal_wall_depth = *rectal_wall_depth;
    p.validate();
    return p;
  }
};

int cmd_phantom(const PhantomOpts& o, bool record) {
  const PhantomParams params = o.params();
  const auto [vol, gland] = generate_phantom(params, o.seed);
  const PhantomMeta meta = make_phantom_meta(params, o.seed);
  if (!o.out.empty()) {
    save_volume(vol, o.out);
    json m = phantom_json(meta);
    m.erase("id");
    m.erase("created_at");
    m["dims"] = vol.dims();
    std::ofstream(o.out + ".json", std::ios::trunc) << m.dump(2) << '\n';
  }
  if (record) {
    std::cout << json{{"gland_volume_cc", meta.gland_volume_cc}, {"dims", vol.dims()}, {"out", o.out}}.dump() << '\n';
  } else {
    std::cout << "dims " << vol.dims()[0] << "x" << vol.dims()[1] << "x" << vol.dims()[2] << "\n";
    std::cout << "gland_volume_cc " << format_fixed(meta.gland_volume_cc, 3) << "\n";
    if (!o.out.empty()) std::cout << "wrote " << o.out << " and " << o.out << ".json\n";
  }
  return kOk;
}

struct BenchOpts {
  std::string volume;
  int resolution = 512;
  int iterations = 100;
  std::optional<double> budget;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchOpts& o, bool record) {
  const Volume3D vol = o.volume.empty() ? generate_phantom(PhantomParams{}, 0).first : load_volume(o.volume);
  const ProbeRig rig;
  const BenchResult r = bench_reslice(vol, rig, o.resolution, o.iterations, o.seed);
  if (record) {
    std::cout << json{{"iterations", r.iterations},         {"resolution", r.resolution},
                      {"slice_median_ms", r.slice_median_ms}, {"slice_p95_ms", r.slice_p95_ms},
                      {"frame_median_ms", r.frame_median_ms}, {"frame_p95_ms", r.frame_p95_ms}}
                     .dump()
              << '\n';
  } else {
    std::cout << "volume " << vol.dims()[0] << "x" << vol.dims()[1] << "x" << vol.dims()[2] << ", " << r.resolution << "x"
              << r.resolution << " slices, " << r.iterations << " iterations\n";
    std::cout << "slice median " << format_fixed(r.slice_median_ms, 3) << " ms, p95 " << format_fixed(r.slice_p95_ms, 3)
              << " ms\n";
    std::cout << "frame median " << format_fixed(r.frame_median_ms, 3) << " ms, p95 " << format_fixed(r.frame_p95_ms, 3)
              << " ms\n";
  }
  if (o.budget && r.slice_median_ms > *o.budget) {
    std::cerr << "median " << format_fixed(r.slice_median_ms, 3) << " ms exceeds budget " << *o.budget << " ms\n";
    return kBudget;
  }
  return kOk;
}

struct ReplayOpts {
  std::string script;
  std::string store;
  std::string write_digests;
};

int cmd_replay(const ReplayOpts& o, bool record) {
  const auto lines = read_script(o.script);
  fs::path dir = o.store;
  bool temp = false;
  if (dir.empty()) {
    dir = fs::temp_directory_path() / ("biopsym-replay-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    temp = true;
  }
  ReplayResult r;
  try {
    SessionStore store(dir);
    r = replay_script(lines, store);
  } catch (...) {
    if (temp) fs::remove_all(dir);
    throw;
  }
  if (temp) fs::remove_all(dir);
  if (!o.write_digests.empty()) write_script(r.recorded, o.write_digests);

  if (record) {
    std::cout << json{{"stats", r.stats}, {"digests_checked", r.digests_checked}, {"digest_mismatches", r.digest_mismatches}}
                     .dump()
              << '\n';
  } else {
    std::cout << json(r.stats).dump(2) << "\n";
    std::cout << "digests checked " << r.digests_checked << ", mismatches " << r.digest_mismatches << "\n";
  }
  return r.digest_mismatches == 0 ? kOk : kBudget;
}

struct CompareOpts {
  std::string schemes;
  std::vector<double> noise;
  double tumor_radius = 5.0;
  int trials = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  double size_sigma = 0.05;
};

int cmd_compare(const CompareOpts& o, bool record) {
  CompareConfig cfg;
  if (o.schemes.empty()) {
    cfg.schemes = {twelve_core_scheme(cfg.sectors), sextant_scheme(cfg.sectors)};
  } else {
    const json j = read_json_file(o.schemes);
    const json& list = j.is_object() && j.contains("schemes") ? j.at("schemes") : j;
    try {
      cfg.schemes = list.get<std::vector<ProtocolScheme>>();
    } catch (const json::exception& e) {
      throw FormatError(o.schemes + ": " + e.what());
    }
  }
  cfg.glands.nominal = PhantomParams{}.gland();
  cfg.glands.size_sigma = o.size_sigma;
  if (!o.noise.empty()) cfg.noise.angular_sigma = o.noise[0];
  if (o.noise.size() > 1) cfg.noise.depth_sigma = o.noise[1];
  cfg.noise.seed = o.seed;
  cfg.tumor_radius = o.tumor_radius;
  cfg.trials = o.trials;
  cfg.threads = o.threads;
  const ProtocolReport report = compare_protocols(cfg);
  std::cout << (record ? format_compare_records(report) : format_compare_table(report));
  return kOk;
}

struct ServeOpts {
  std::string store;
  std::string listen = "127.0.0.1:8080";
  std::string phantom_dir;
  int threads = 2;
};

int cmd_serve(const ServeOpts& o) {
  const auto colon = o.listen.rfind(':');
  if (colon == std::string::npos) throw InvalidParams("--listen expects host:port");
  const std::string host = o.listen.substr(0, colon);
  const int port = std::stoi(o.listen.substr(colon + 1));
  if (port < 0 || port > 65535) throw InvalidParams("port out of range");

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  SessionStore store(o.store);
  ServiceConfig cfg;
  cfg.phantom_dir = o.phantom_dir;
  SimulatorService svc(store, cfg);
  Server server(svc, host, static_cast<unsigned short>(port), o.threads);
  server.start();
  const auto ep = server.endpoint();
  std::cout << "listening on http://" << ep.address().to_string() << ":" << ep.port() << std::endl;

  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return kOk;
}

int cmd_drill(const PhantomOpts& o, int resolution, const std::string& out) {
  const auto lines = make_drill_script(o.params(), o.seed, {}, {}, {}, resolution);
  if (out.empty()) {
    for (const json& l : lines) std::cout << l.dump() << '\n';
  } else {
    write_script(lines, out);
  }
  return kOk;
}

void add_phantom_flags(CLI::App* cmd, PhantomOpts& o) {
  cmd->add_option("--params", o.params_file, "phantom parameter file (JSON); missing keys keep defaults")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "speckle seed");
  cmd->add_option("--spacing", o.spacing, "voxel spacing, mm");
  cmd->add_option("--gland-axes", o.gland_axes, "gland semi-axes a b c, mm")->expected(3);
  cmd->add_option("--speckle", o.speckle, "speckle amplitude");
  cmd->add_option("--rectal-wall-depth", o.rectal_wall_depth, "rectal wall depth from the posterior face, mm (0 disables)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prostate biopsy simulator tools"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string format = "text";
  app.add_option("--format", format, "output format")->check(CLI::IsMember({"text", "record"}));

  PhantomOpts phantom;
  auto* c_phantom = app.add_subcommand("phantom", "generate a synthetic phantom volume");
  add_phantom_flags(c_phantom, phantom);
  c_phantom->add_option("--out", phantom.out, "output BVOL file; metadata goes to <out>.json");

  BenchOpts bench;
  auto* c_bench = app.add_subcommand("bench-reslice", "time probe-plane slice extraction");
  c_bench->add_option("--volume", bench.volume, "BVOL file (default: generated phantom)")->check(CLI::ExistingFile);
  c_bench->add_option("--resolution", bench.resolution, "slice width and height, pixels")->check(CLI::Range(2, 4096));
  c_bench->add_option("--iterations", bench.iterations)->check(CLI::Range(1, 1000000));
  c_bench->add_option("--budget", bench.budget, "fail (exit 3) when the median exceeds this, ms");
  c_bench->add_option("--seed", bench.seed, "pose sampling seed");

  ReplayOpts replay;
  auto* c_replay = app.add_subcommand("replay", "re-run a pose/fire script and check frame digests");
  c_replay->add_option("--session-log", replay.script, "script file (JSON lines)")->required();
  c_replay->add_option("--store", replay.store, "store directory (default: temporary)");
  c_replay->add_option("--write-digests", replay.write_digests, "write the script back with frame digests");

  CompareOpts compare;
  auto* c_compare = app.add_subcommand("compare", "Monte-Carlo comparison of sampling protocols");
  c_compare->add_option("--schemes", compare.schemes, "scheme file (default: 12-core and sextant)")->check(CLI::ExistingFile);
  c_compare->add_option("--noise", compare.noise, "angular sigma (rad) and optional depth sigma (mm)")->expected(1, 2);
  c_compare->add_option("--tumor-radius", compare.tumor_radius, "mm");
  c_compare->add_option("--trials", compare.trials)->check(CLI::Range(1, 100000000));
  c_compare->add_option("--seed", compare.seed);
  c_compare->add_option("--threads", compare.threads, "0: all cores");
  c_compare->add_option("--size-sigma", compare.size_sigma, "relative gland size variation");

  ServeOpts serve;
  auto* c_serve = app.add_subcommand("serve", "run the HTTP/websocket API");
  c_serve->add_option("--store", serve.store, "store directory")->required();
  c_serve->add_option("--listen", serve.listen, "host:port (port 0 picks a free one)");
  c_serve->add_option("--phantom-dir", serve.phantom_dir, "cache generated phantom volumes here");
  c_serve->add_option("--threads", serve.threads)->check(CLI::Range(1, 64));

  PhantomOpts drill;
  int drill_resolution = 128;
  std::string drill_out;
  auto* c_drill = app.add_subcommand("drill-script", "write a script that samples all 12 sectors");
  add_phantom_flags(c_drill, drill);
  c_drill->add_option("--resolution", drill_resolution)->check(CLI::Range(2, 4096));
  c_drill->add_option("--out", drill_out, "script file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  const bool record = format == "record";
  try {
    if (*c_phantom) return cmd_phantom(phantom, record);
    if (*c_bench) return cmd_bench(bench, record);
    if (*c_replay) return cmd_replay(replay, record);
    if (*c_compare) return cmd_compare(compare, record);
    if (*c_serve) return cmd_serve(serve);
    if (*c_drill) return cmd_drill(drill, drill_resolution, drill_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
