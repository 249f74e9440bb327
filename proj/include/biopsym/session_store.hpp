#pragma once

#include "biopsym/analytics.hpp"
#include "biopsym/biopsy.hpp"
#include "biopsym/error.hpp"
#include "biopsym/serialization.hpp"
#include "biopsym/volume.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace biopsym {

enum class OperatorLevel { Novice, Intermediate, Expert };

inline std::string to_string(OperatorLevel l) {
  switch (l) {
    case OperatorLevel::Novice: return "Novice";
    case OperatorLevel::Intermediate: return "Intermediate";
    case OperatorLevel::Expert: return "Expert";
  }
  return "?";
}

/// Case-insensitive.
inline std::optional<OperatorLevel> parse_operator_level(const std::string& s) {
  auto lower = [](std::string t) {
    for (char& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return t;
  };
  for (auto l : {OperatorLevel::Novice, OperatorLevel::Intermediate, OperatorLevel::Expert})
    if (lower(to_string(l)) == lower(s)) return l;
  return std::nullopt;
}

/// Novice -> 2, Intermediate -> 1, Expert -> 0.
inline int default_hint_level(OperatorLevel l) { return 2 - static_cast<int>(l); }

struct OperatorProfile {
  std::uint64_t id = 0;
  std::string name;
  OperatorLevel level = OperatorLevel::Novice;
  std::int64_t created_at = 0;

  friend bool operator==(const OperatorProfile&, const OperatorProfile&) = default;
};

/// Phantom catalogue entry. Age and PSA are synthetic, derived from the seed.
struct PhantomMeta {
  std::uint64_t id = 0;
  PhantomParams params;
  std::uint64_t seed = 0;
  double gland_volume_cc = 0.0;
  double pseudo_age = 0.0;
  double pseudo_psa = 0.0;
  std::int64_t created_at = 0;

  friend bool operator==(const PhantomMeta& a, const PhantomMeta& b) {
    return a.id == b.id && json(a.params) == json(b.params) && a.seed == b.seed && a.gland_volume_cc == b.gland_volume_cc &&
           a.pseudo_age == b.pseudo_age && a.pseudo_psa == b.pseudo_psa && a.created_at == b.created_at;
  }
};

inline PhantomMeta make_phantom_meta(const PhantomParams& params, std::uint64_t seed) {
  PhantomMeta m;
  m.params = params;
  m.seed = seed;
  m.gland_volume_cc = params.gland().volume_cc();
  std::mt19937_64 rng(seed ^ 0x5eed'a9e0'95a0'0001ULL);
  m.pseudo_age = static_cast<double>(std::uniform_int_distribution<int>(50, 80)(rng));
  m.pseudo_psa = std::round(std::exp(std::normal_distribution<double>(std::log(6.0), 0.5)(rng)) * 10.0) / 10.0;
  return m;
}

/// Rig, gun and sectorization a session was run with.
struct SessionConfig {
  ProbeRig rig;
  GunParams gun;
  SectorScheme12 sectors;
};

struct StoredExerciseResult {
  std::string kind;
  json exercise;
  json result;
  std::int64_t at = 0;

  friend bool operator==(const StoredExerciseResult&, const StoredExerciseResult&) = default;
};

struct SessionRecord {
  std::uint64_t id = 0;
  std::uint64_t operator_id = 0;
  std::uint64_t phantom_id = 0;
  std::int64_t started_at = 0;
  SessionConfig config;
  std::vector<BiopsyCore> cores;
  std::vector<StoredExerciseResult> exercise_results;
  bool closed = false;
  std::int64_t closed_at = 0;

  friend bool operator==(const SessionRecord& a, const SessionRecord& b) {
    return a.id == b.id && a.operator_id == b.operator_id && a.phantom_id == b.phantom_id && a.started_at == b.started_at &&
           json(a.config.rig) == json(b.config.rig) && json(a.config.gun) == json(b.config.gun) &&
           json(a.config.sectors) == json(b.config.sectors) && a.cores == b.cores &&
           a.exercise_results == b.exercise_results && a.closed == b.closed && a.closed_at == b.closed_at;
  }
};

/// Arithmetic means of per-session statistics; optional fields average over sessions that have them.
struct StatsMean {
  int sessions = 0;
  double n_cores = 0.0;
  double n_in_gland = 0.0;
  double sector_coverage = 0.0;
  double apex_coverage = 0.0;
  double boundary_miss_count = 0.0;
  std::optional<double> mean_in_gland_length;
  std::optional<double> min_pair_distance;
  std::optional<double> spread_cv;

  RecommendationInputs recommendation_inputs() const {
    return {apex_coverage, boundary_miss_count, mean_in_gland_length, spread_cv};
  }
};

struct HistoryStats {
  std::vector<std::pair<std::uint64_t, SessionStats>> per_session;
  StatsMean mean;
};

inline StatsMean mean_of(const std::vector<std::pair<std::uint64_t, SessionStats>>& per_session) {
  StatsMean m;
  m.sessions = static_cast<int>(per_session.size());
  if (per_session.empty()) return m;
  double len = 0.0, pair = 0.0, cv = 0.0;
  int n_len = 0, n_pair = 0, n_cv = 0;
  for (const auto& [id, s] : per_session) {
    m.n_cores += s.n_cores;
    m.n_in_gland += s.n_in_gland;
    m.sector_coverage += s.sector_coverage;
    m.apex_coverage += s.apex_coverage;
    m.boundary_miss_count += s.boundary_miss_count;
    if (s.mean_in_gland_length) len += *s.mean_in_gland_length, ++n_len;
    if (s.min_pair_distance) pair += *s.min_pair_distance, ++n_pair;
    if (s.spread_cv) cv += *s.spread_cv, ++n_cv;
  }
  const double n = m.sessions;
  m.n_cores /= n;
  m.n_in_gland /= n;
  m.sector_coverage /= n;
  m.apex_coverage /= n;
  m.boundary_miss_count /= n;
  if (n_len) m.mean_in_gland_length = len / n_len;
  if (n_pair) m.min_pair_distance = pair / n_pair;
  if (n_cv) m.spread_cv = cv / n_cv;
  return m;
}

// --- record encodings --------------------------------------------------------

inline constexpr int kRecordVersion = 1;

inline json operator_record(const OperatorProfile& p) {
  return {{"type", "operator"}, {"v", kRecordVersion}, {"id", p.id}, {"name", p.name}, {"level", to_string(p.level)},
          {"created_at", p.created_at}};
}

inline json phantom_record(const PhantomMeta& m) {
  return {{"type", "phantom"},           {"v", kRecordVersion},         {"id", m.id},
          {"params", m.params},          {"seed", m.seed},              {"gland_volume_cc", m.gland_volume_cc},
          {"pseudo_age", m.pseudo_age},  {"pseudo_psa", m.pseudo_psa},  {"created_at", m.created_at},
          {"synthetic_metadata", true}};
}

/// Append-only file of newline-terminated records; fsync on demand.
class AppendLog {
 public:
  explicit AppendLog(std::filesystem::path path) : path_(std::move(path)) {}

  void append(const json& record, bool sync = false) const {
    const std::string line = record.dump() + "\n";
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw IoError("cannot open " + path_.string() + ": " + std::strerror(errno));
    std::size_t done = 0;
    while (done < line.size()) {
      const ssize_t n = ::write(fd, line.data() + done, line.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        const std::string msg = std::strerror(errno);
        ::close(fd);
        throw IoError("write to " + path_.string() + " failed: " + msg);
      }
      done += static_cast<std::size_t>(n);
    }
    if (sync && ::fsync(fd) != 0) {
      const std::string msg = std::strerror(errno);
      ::close(fd);
      throw IoError("fsync of " + path_.string() + " failed: " + msg);
    }
    ::close(fd);
  }

  /// Complete records in file order. An unterminated trailing line (torn write) is dropped.
  std::vector<json> read_all() const {
    std::vector<json> out;
    std::ifstream in(path_, std::ios::binary);
    if (!in) return out;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    while (pos < content.size()) {
      const std::size_t nl = content.find('\n', pos);
      if (nl == std::string::npos) break;
      const std::string line = content.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      try {
        out.push_back(json::parse(line));
      } catch (const json::parse_error& e) {
        throw FormatError(path_.string() + ": malformed record: " + e.what());
      }
    }
    return out;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

/// File-backed store of operators, phantoms and sessions.
///
/// Layout: `operators.log`, `phantoms.log`, `sessions/<id>.log`; one JSON record per line,
/// each with a `type` and a schema version `v`. Opening a store replays every log, so the
/// in-memory state is always the fold of the persisted events. Methods are thread-safe.
class SessionStore {
 public:
  using Clock = std::function<std::int64_t()>;

  explicit SessionStore(std::filesystem::path dir, Clock clock = wall_clock_ms)
      : dir_(std::move(dir)), clock_(std::move(clock)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_ / "sessions", ec);
    if (ec) throw IoError("cannot create store directory " + dir_.string() + ": " + ec.message());
    replay();
  }

  const std::filesystem::path& directory() const { return dir_; }

  // --- operators ---

  OperatorProfile create_operator(std::string name, OperatorLevel level) {
    std::lock_guard lock(mu_);
    OperatorProfile p{next_operator_id_++, std::move(name), level, clock_()};
    AppendLog(dir_ / "operators.log").append(operator_record(p));
    operators_[p.id] = p;
    return p;
  }

  OperatorProfile get_operator(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    auto it = operators_.find(id);
    if (it == operators_.end()) throw NotFound("operator " + std::to_string(id));
    return it->second;
  }

  std::vector<OperatorProfile> list_operators() const {
    std::lock_guard lock(mu_);
    std::vector<OperatorProfile> out;
    for (const auto& [id, p] : operators_) out.push_back(p);
    return out;
  }

  // --- phantoms ---

  PhantomMeta register_phantom(const PhantomParams& params, std::uint64_t seed) {
    params.validate();
    std::lock_guard lock(mu_);
    PhantomMeta m = make_phantom_meta(params, seed);
    m.id = next_phantom_id_++;
    m.created_at = clock_();
    AppendLog(dir_ / "phantoms.log").append(phantom_record(m));
    phantoms_[m.id] = m;
    return m;
  }

  PhantomMeta get_phantom(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    auto it = phantoms_.find(id);
    if (it == phantoms_.end()) throw NotFound("phantom " + std::to_string(id));
    return it->second;
  }

  std::vector<PhantomMeta> list_phantoms() const {
    std::lock_guard lock(mu_);
    std::vector<PhantomMeta> out;
    for (const auto& [id, m] : phantoms_) out.push_back(m);
    return out;
  }

  // --- sessions ---

  std::uint64_t open_session(std::uint64_t operator_id, std::uint64_t phantom_id, const SessionConfig& config = {}) {
    std::lock_guard lock(mu_);
    if (!operators_.contains(operator_id)) throw NotFound("operator " + std::to_string(operator_id));
    if (!phantoms_.contains(phantom_id)) throw NotFound("phantom " + std::to_string(phantom_id));
    SessionRecord s;
    s.id = next_session_id_++;
    s.operator_id = operator_id;
    s.phantom_id = phantom_id;
    s.started_at = clock_();
    s.config = config;
    session_log(s.id).append({{"type", "session_open"},
                              {"v", kRecordVersion},
                              {"id", s.id},
                              {"operator_id", s.operator_id},
                              {"phantom_id", s.phantom_id},
                              {"started_at", s.started_at},
                              {"rig", s.config.rig},
                              {"gun", s.config.gun},
                              {"sectors", s.config.sectors}});
    sessions_[s.id] = s;
    return s.id;
  }

  SessionRecord get_session(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    return session_ref(id);
  }

  std::vector<SessionRecord> list_sessions() const {
    std::lock_guard lock(mu_);
    std::vector<SessionRecord> out;
    for (const auto& [id, s] : sessions_) out.push_back(s);
    return out;
  }

  /// Appends a fired core; assigns the next core id and, when unset, the firing time.
  BiopsyCore append_core(std::uint64_t session_id, BiopsyCore core) {
    std::lock_guard lock(mu_);
    SessionRecord& s = session_ref(session_id);
    if (s.closed) throw SessionClosed("session " + std::to_string(session_id) + " is closed");
    core.id = s.cores.empty() ? 1 : s.cores.back().id + 1;
    if (core.fired_at == 0) core.fired_at = clock_();
    session_log(session_id).append({{"type", "core"}, {"v", kRecordVersion}, {"core", core}});
    s.cores.push_back(core);
    return core;
  }

  void append_exercise_result(std::uint64_t session_id, StoredExerciseResult result) {
    std::lock_guard lock(mu_);
    SessionRecord& s = session_ref(session_id);
    if (s.closed) throw SessionClosed("session " + std::to_string(session_id) + " is closed");
    if (result.at == 0) result.at = clock_();
    session_log(session_id).append({{"type", "exercise_result"},
                                    {"v", kRecordVersion},
                                    {"kind", result.kind},
                                    {"exercise", result.exercise},
                                    {"result", result.result},
                                    {"at", result.at}});
    s.exercise_results.push_back(std::move(result));
  }

  void close_session(std::uint64_t session_id) {
    std::lock_guard lock(mu_);
    SessionRecord& s = session_ref(session_id);
    if (s.closed) throw SessionClosed("session " + std::to_string(session_id) + " is already closed");
    const std::int64_t at = clock_();
    session_log(session_id).append({{"type", "session_close"}, {"v", kRecordVersion}, {"closed_at", at}}, /*sync=*/true);
    s.closed = true;
    s.closed_at = at;
  }

  SessionStats session_stats_of(std::uint64_t session_id) const {
    std::lock_guard lock(mu_);
    const SessionRecord& s = session_ref(session_id);
    return session_stats(s.cores, phantoms_.at(s.phantom_id).params.gland(), s.config.sectors);
  }

  /// Statistics over the operator's closed sessions.
  HistoryStats operator_history_stats(std::uint64_t operator_id) const {
    std::lock_guard lock(mu_);
    if (!operators_.contains(operator_id)) throw NotFound("operator " + std::to_string(operator_id));
    HistoryStats h;
    for (const auto& [id, s] : sessions_) {
      if (s.operator_id != operator_id || !s.closed) continue;
      h.per_session.emplace_back(id, session_stats(s.cores, phantoms_.at(s.phantom_id).params.gland(), s.config.sectors));
    }
    h.mean = mean_of(h.per_session);
    return h;
  }

 private:
  AppendLog session_log(std::uint64_t id) const {
    return AppendLog(dir_ / "sessions" / (std::to_string(id) + ".log"));
  }

  SessionRecord& session_ref(std::uint64_t id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("session " + std::to_string(id));
    return it->second;
  }
  const SessionRecord& session_ref(std::uint64_t id) const {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("session " + std::to_string(id));
    return it->second;
  }

  static void expect(const json& rec, const char* type, const std::filesystem::path& file) {
    if (!rec.is_object() || rec.value("type", "") != type) throw FormatError(file.string() + ": expected a '" + type + "' record");
    if (rec.value("v", 0) != kRecordVersion) throw FormatError(file.string() + ": unsupported record version");
  }

  void replay() {
    try {
      const AppendLog ops(dir_ / "operators.log");
      for (const json& rec : ops.read_all()) {
        expect(rec, "operator", ops.path());
        OperatorProfile p;
        p.id = rec.at("id").get<std::uint64_t>();
        p.name = rec.at("name").get<std::string>();
        auto level = parse_operator_level(rec.at("level").get<std::string>());
        if (!level) throw FormatError("unknown operator level");
        p.level = *level;
        p.created_at = rec.at("created_at").get<std::int64_t>();
        operators_[p.id] = p;
        next_operator_id_ = std::max(next_operator_id_, p.id + 1);
      }

      const AppendLog phs(dir_ / "phantoms.log");
      for (const json& rec : phs.read_all()) {
        expect(rec, "phantom", phs.path());
        PhantomMeta m;
        m.id = rec.at("id").get<std::uint64_t>();
        m.params = rec.at("params").get<PhantomParams>();
        m.seed = rec.at("seed").get<std::uint64_t>();
        m.gland_volume_cc = rec.at("gland_volume_cc").get<double>();
        m.pseudo_age = rec.at("pseudo_age").get<double>();
        m.pseudo_psa = rec.at("pseudo_psa").get<double>();
        m.created_at = rec.at("created_at").get<std::int64_t>();
        phantoms_[m.id] = m;
        next_phantom_id_ = std::max(next_phantom_id_, m.id + 1);
      }

      for (const auto& entry : std::filesystem::directory_iterator(dir_ / "sessions")) {
        if (entry.path().extension() != ".log") continue;
        const AppendLog log(entry.path());
        const auto records = log.read_all();
        if (records.empty()) continue;
        expect(records.front(), "session_open", log.path());
        SessionRecord s;
        const json& open = records.front();
        s.id = open.at("id").get<std::uint64_t>();
        s.operator_id = open.at("operator_id").get<std::uint64_t>();
        s.phantom_id = open.at("phantom_id").get<std::uint64_t>();
        s.started_at = open.at("started_at").get<std::int64_t>();
        s.config.rig = open.at("rig").get<ProbeRig>();
        s.config.gun = open.at("gun").get<GunParams>();
        s.config.sectors = open.at("sectors").get<SectorScheme12>();
        for (std::size_t i = 1; i < records.size(); ++i) {
          const json& rec = records[i];
          const std::string type = rec.value("type", "");
          if (rec.value("v", 0) != kRecordVersion) throw FormatError(log.path().string() + ": unsupported record version");
          if (s.closed) throw FormatError(log.path().string() + ": record after session_close");
          if (type == "core") {
            BiopsyCore c = rec.at("core").get<BiopsyCore>();
            if (!s.cores.empty() && c.id <= s.cores.back().id) throw FormatError(log.path().string() + ": core ids not increasing");
            s.cores.push_back(std::move(c));
          } else if (type == "exercise_result") {
            s.exercise_results.push_back({rec.at("kind").get<std::string>(), rec.at("exercise"), rec.at("result"),
                                          rec.at("at").get<std::int64_t>()});
          } else if (type == "session_close") {
            s.closed = true;
            s.closed_at = rec.at("closed_at").get<std::int64_t>();
          } else {
            throw FormatError(log.path().string() + ": unknown record type '" + type + "'");
          }
        }
        sessions_[s.id] = std::move(s);
        next_session_id_ = std::max(next_session_id_, sessions_.rbegin()->first + 1);
      }
    } catch (const json::exception& e) {
      throw FormatError(std::string("store replay failed: ") + e.what());
    }
  }

  std::filesystem::path dir_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, OperatorProfile> operators_;
  std::map<std::uint64_t, PhantomMeta> phantoms_;
  std::map<std::uint64_t, SessionRecord> sessions_;
  std::uint64_t next_operator_id_ = 1;
  std::uint64_t next_phantom_id_ = 1;
  std::uint64_t next_session_id_ = 1;
};

}  // namespace biopsym
