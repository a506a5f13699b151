#pragma once

#include <openssl/evp.h>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "causal_crowds/error.hpp"
#include "causal_crowds/scenario.hpp"

namespace causal_crowds {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kScenesFile = "scenes.ndjson";
inline constexpr const char* kManifestFile = "manifest.json";

struct Manifest {
  int format_version = kFormatVersion;
  Split split = Split::ID;
  std::size_t num_scenes = 0;
  std::uint64_t rng_seed = 0;
  sim::SimConfig config;
  CausalThresholds thresholds;
  SplitSummary category_means;
  std::string digest;  // lowercase hex SHA-256 of the scenes file
  bool operator==(const Manifest&) const = default;
};

/// Predicted ego futures for one scene, keyed by what was removed.
struct PredictionSet {
  std::string scene_id;
  std::vector<Vec2> factual;
  std::map<std::uint32_t, std::vector<Vec2>> counterfactual;  // singleton removals
  std::optional<std::vector<Vec2>> all_noncausal;            // every non-causal agent removed
  bool operator==(const PredictionSet&) const = default;
};

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoFailure, "SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

namespace io {

using json = nlohmann::ordered_json;

inline json to_json(Vec2 v) { return json::array({v.x, v.y}); }

inline json to_json(std::span<const Vec2> path) {
  json a = json::array();
  for (const Vec2& p : path) a.push_back(to_json(p));
  return a;
}

inline std::string_view to_string(sim::BranchPoint b) {
  return b == sim::BranchPoint::FromStart ? "from_start" : "at_history_end";
}

inline json to_json(const sim::SimConfig& c) {
  json j;
  j["dt"] = c.dt;
  j["total_steps"] = c.total_steps;
  j["history_steps"] = c.history_steps;
  j["future_steps"] = c.future_steps;
  j["visibility_window"] = c.visibility_window;
  j["reciprocity"] = c.reciprocity;
  j["rng_seed"] = c.rng_seed;
  j["heading_epsilon"] = c.heading_epsilon;
  j["goal_tolerance"] = c.goal_tolerance;
  j["substeps"] = c.substeps;
  j["branch"] = to_string(c.branch);
  return j;
}

inline json to_json(const CausalThresholds& t) {
  json j;
  j["epsilon"] = t.epsilon;
  j["eta"] = t.eta;
  return j;
}

inline json to_json(const SplitSummary& s) {
  json j;
  j["non_causal"] = s.non_causal;
  j["direct"] = s.direct;
  j["indirect"] = s.indirect;
  j["ambiguous"] = s.ambiguous;
  j["total"] = s.total;
  return j;
}

inline json to_json(const sim::AgentState& s, const sim::AgentParams& p) {
  json j;
  j["id"] = p.id;
  j["position"] = to_json(s.position);
  j["velocity"] = to_json(s.velocity);
  j["heading"] = to_json(s.heading);
  j["radius"] = p.radius;
  j["max_speed"] = p.max_speed;
  j["pref_speed"] = p.pref_speed;
  j["goal"] = to_json(p.goal);
  j["fov_half_angle"] = p.fov_half_angle;
  j["neighbor_dist"] = p.neighbor_dist;
  j["time_horizon"] = p.time_horizon;
  json b;
  if (const auto* f = std::get_if<sim::Follower>(&p.behavior)) {
    b["type"] = "follower";
    b["target_id"] = f->target_id;
    b["offset"] = to_json(f->offset);
  } else {
    b["type"] = "goal_seeking";
  }
  j["behavior"] = std::move(b);
  return j;
}

inline json to_json(const CausalAnnotation& a) {
  json j;
  j["agent_id"] = a.agent_id;
  j["effect"] = a.effect;
  j["category"] = to_string(a.category);
  json m = json::array();
  for (bool b : a.direct_mask) m.push_back(b);
  j["direct_mask"] = std::move(m);
  return j;
}

inline json to_json(const SceneRecord& r) {
  json j;
  j["scene_id"] = r.scene_id;
  j["split"] = causal_crowds::to_string(r.split);
  j["config"] = to_json(r.scene.config);
  json agents = json::array();
  for (std::size_t i = 0; i < r.scene.num_agents(); ++i) agents.push_back(to_json(r.scene.initial[i], r.scene.params[i]));
  j["agents"] = std::move(agents);
  json obstacles = json::array();
  for (const auto& o : r.scene.obstacles) obstacles.push_back(json::array({to_json(o.a), to_json(o.b)}));
  j["obstacles"] = std::move(obstacles);
  json traj = json::array();
  for (const auto& path : r.trajectories.positions) traj.push_back(to_json(path));
  j["trajectories"] = std::move(traj);
  json ann = json::array();
  for (const auto& a : r.annotations) ann.push_back(to_json(a));
  j["annotations"] = std::move(ann);
  return j;
}

inline json to_json(const Manifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["split"] = causal_crowds::to_string(m.split);
  j["num_scenes"] = m.num_scenes;
  j["rng_seed"] = m.rng_seed;
  j["config"] = to_json(m.config);
  j["thresholds"] = to_json(m.thresholds);
  j["category_means"] = to_json(m.category_means);
  j["scenes_file"] = kScenesFile;
  j["digest"] = {{"algorithm", "sha256"}, {"value", m.digest}};
  return j;
}

inline json to_json(const PredictionSet& p) {
  json entries;
  entries["factual"] = to_json(p.factual);
  for (const auto& [id, path] : p.counterfactual) entries[std::to_string(id)] = to_json(path);
  if (p.all_noncausal) entries["all_noncausal"] = to_json(*p.all_noncausal);
  json j;
  j["scene_id"] = p.scene_id;
  j["predictions"] = std::move(entries);
  return j;
}

// Reading. json exceptions are converted to ParseError by the callers.

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw Error(ErrorCode::ParseError, std::string("missing field '") + key + "'");
  return j.at(key);
}

inline Vec2 vec2_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::ParseError, "expected a [x, y] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline std::vector<Vec2> path_from(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, "expected an array of points");
  std::vector<Vec2> out;
  out.reserve(j.size());
  for (const auto& p : j) out.push_back(vec2_from(p));
  return out;
}

inline sim::BranchPoint branch_from(const std::string& s) {
  if (s == "from_start") return sim::BranchPoint::FromStart;
  if (s == "at_history_end") return sim::BranchPoint::AtHistoryEnd;
  throw Error(ErrorCode::ParseError, "unknown branch '" + s + "'");
}

inline sim::SimConfig config_from(const json& j) {
  sim::SimConfig c;
  c.dt = field(j, "dt").get<double>();
  c.total_steps = field(j, "total_steps").get<int>();
  c.history_steps = field(j, "history_steps").get<int>();
  c.future_steps = field(j, "future_steps").get<int>();
  c.visibility_window = field(j, "visibility_window").get<int>();
  c.reciprocity = field(j, "reciprocity").get<double>();
  c.rng_seed = field(j, "rng_seed").get<std::uint64_t>();
  c.heading_epsilon = field(j, "heading_epsilon").get<double>();
  c.goal_tolerance = field(j, "goal_tolerance").get<double>();
  c.substeps = field(j, "substeps").get<int>();
  c.branch = branch_from(field(j, "branch").get<std::string>());
  return c;
}

inline CausalThresholds thresholds_from(const json& j) {
  return {field(j, "epsilon").get<double>(), field(j, "eta").get<double>()};
}

inline SplitSummary summary_from(const json& j) {
  SplitSummary s;
  s.non_causal = field(j, "non_causal").get<double>();
  s.direct = field(j, "direct").get<double>();
  s.indirect = field(j, "indirect").get<double>();
  s.ambiguous = field(j, "ambiguous").get<double>();
  s.total = field(j, "total").get<double>();
  return s;
}

inline void agent_from(const json& j, sim::AgentState& s, sim::AgentParams& p) {
  p.id = field(j, "id").get<std::uint32_t>();
  s.position = vec2_from(field(j, "position"));
  s.velocity = vec2_from(field(j, "velocity"));
  s.heading = vec2_from(field(j, "heading"));
  p.radius = field(j, "radius").get<double>();
  p.max_speed = field(j, "max_speed").get<double>();
  p.pref_speed = field(j, "pref_speed").get<double>();
  p.goal = vec2_from(field(j, "goal"));
  p.fov_half_angle = field(j, "fov_half_angle").get<double>();
  p.neighbor_dist = field(j, "neighbor_dist").get<double>();
  p.time_horizon = field(j, "time_horizon").get<double>();
  const json& b = field(j, "behavior");
  const auto type = field(b, "type").get<std::string>();
  if (type == "follower") {
    p.behavior = sim::Follower{field(b, "target_id").get<std::uint32_t>(), vec2_from(field(b, "offset"))};
  } else if (type == "goal_seeking") {
    p.behavior = sim::GoalSeeking{};
  } else {
    throw Error(ErrorCode::ParseError, "unknown behavior '" + type + "'");
  }
}

inline CausalAnnotation annotation_from(const json& j) {
  CausalAnnotation a;
  a.agent_id = field(j, "agent_id").get<std::uint32_t>();
  a.effect = field(j, "effect").get<double>();
  a.category = category_from_string(field(j, "category").get<std::string>());
  for (const auto& b : field(j, "direct_mask")) a.direct_mask.push_back(b.get<bool>());
  return a;
}

inline SceneRecord record_from(const json& j) {
  SceneRecord r;
  r.scene_id = field(j, "scene_id").get<std::string>();
  r.split = split_from_string(field(j, "split").get<std::string>());
  r.scene.config = config_from(field(j, "config"));
  for (const auto& a : field(j, "agents")) {
    sim::AgentState s;
    sim::AgentParams p;
    agent_from(a, s, p);
    r.scene.initial.push_back(s);
    r.scene.params.push_back(p);
  }
  for (const auto& o : field(j, "obstacles")) {
    if (!o.is_array() || o.size() != 2) throw Error(ErrorCode::ParseError, "obstacle must be a pair of points");
    r.scene.obstacles.push_back({vec2_from(o[0]), vec2_from(o[1])});
  }
  for (const auto& path : field(j, "trajectories")) r.trajectories.positions.push_back(path_from(path));
  for (const auto& a : field(j, "annotations")) r.annotations.push_back(annotation_from(a));
  return r;
}

inline void violation(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::InvariantViolation, where + ": " + what);
}

/// Structural checks a loaded record must pass.
inline void check_record(const SceneRecord& r, const CausalThresholds& thresholds) {
  const auto& c = r.scene.config;
  const std::string& where = r.scene_id;
  try {
    sim::validate(c);
    for (const auto& p : r.scene.params) sim::validate(p);
    for (const auto& o : r.scene.obstacles) sim::validate(o);
  } catch (const Error& e) {
    violation(where, e.what());
  }
  const std::size_t n = r.scene.num_agents();
  if (n == 0) violation(where, "scene has no agents");
  for (std::size_t i = 0; i < n; ++i) {
    if (r.scene.params[i].id != i) violation(where, "agent ids must equal their index");
  }
  if (r.trajectories.num_agents() != n) violation(where, "trajectory count differs from agent count");
  for (const auto& path : r.trajectories.positions) {
    if (path.size() != static_cast<std::size_t>(c.total_steps)) {
      violation(where, "trajectory has " + std::to_string(path.size()) + " steps, expected " +
                           std::to_string(c.total_steps));
    }
  }
  if (r.annotations.size() != n - 1) violation(where, "annotation count must be agent count - 1");
  for (std::size_t k = 0; k < r.annotations.size(); ++k) {
    const auto& a = r.annotations[k];
    if (a.agent_id != k + 1) violation(where, "annotations must list agents 1..n-1 in order");
    if (a.direct_mask.size() != static_cast<std::size_t>(c.total_steps)) violation(where, "direct_mask length");
    if (!(a.effect >= 0.0)) violation(where, "negative or NaN effect");
    if (a.category != categorize(a.effect, a.direct_mask, thresholds)) {
      violation(where, "category of agent " + std::to_string(a.agent_id) + " disagrees with effect and mask");
    }
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

/// Splits on '\n'. A missing final newline is tolerated; empty lines are not.
inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    out.push_back(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
  }
  return out;
}

template <class Fn>
auto parse_line(std::string_view line, std::size_t line_no, const std::string& file, Fn&& fn) {
  try {
    return fn(json::parse(line));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, file + " line " + std::to_string(line_no) + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ParseError && e.code() != ErrorCode::InvalidArgument) throw;
    throw Error(ErrorCode::ParseError, file + " line " + std::to_string(line_no) + ": " + e.what());
  }
}

}  // namespace io

inline std::string serialize_scenes(std::span<const SceneRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += io::to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline Manifest make_manifest(const SplitSpec& spec, std::span<const SceneRecord> records) {
  Manifest m;
  m.split = spec.split;
  m.num_scenes = records.size();
  m.rng_seed = spec.rng_seed;
  m.config = spec.config;
  m.thresholds = spec.thresholds;
  m.category_means = summarize(records);
  return m;
}

/// Writes scenes.ndjson and manifest.json into `dir`, filling in the digest.
inline Manifest write_split(std::span<const SceneRecord> records, Manifest manifest, const std::filesystem::path& dir) {
  if (manifest.num_scenes != records.size()) {
    throw Error(ErrorCode::InvalidArgument, "manifest num_scenes does not match the record count");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  const std::string scenes = serialize_scenes(records);
  manifest.digest = sha256_hex(scenes);
  io::write_file(dir / kScenesFile, scenes);
  io::write_file(dir / kManifestFile, io::to_json(manifest).dump(2) + "\n");
  if (sha256_hex(io::read_file(dir / kScenesFile)) != manifest.digest) {
    throw Error(ErrorCode::DigestMismatch, "scenes file changed while writing " + dir.string());
  }
  return manifest;
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestFile;
  const std::string text = io::read_file(path);
  return io::parse_line(text, 1, path.string(), [](const io::json& j) {
    Manifest m;
    m.format_version = io::field(j, "format_version").get<int>();
    if (m.format_version != kFormatVersion) {
      throw Error(ErrorCode::InvariantViolation, "unsupported format_version " + std::to_string(m.format_version));
    }
    m.split = split_from_string(io::field(j, "split").get<std::string>());
    m.num_scenes = io::field(j, "num_scenes").get<std::size_t>();
    m.rng_seed = io::field(j, "rng_seed").get<std::uint64_t>();
    m.config = io::config_from(io::field(j, "config"));
    m.thresholds = io::thresholds_from(io::field(j, "thresholds"));
    m.category_means = io::summary_from(io::field(j, "category_means"));
    m.category_means.num_scenes = m.num_scenes;
    const auto& digest = io::field(j, "digest");
    if (io::field(digest, "algorithm").get<std::string>() != "sha256") {
      throw Error(ErrorCode::ParseError, "unsupported digest algorithm");
    }
    m.digest = io::field(digest, "value").get<std::string>();
    return m;
  });
}

struct LoadedSplit {
  Manifest manifest;
  std::vector<SceneRecord> records;
};

/// Loads and validates a split directory.
inline LoadedSplit read_split(const std::filesystem::path& dir) {
  LoadedSplit out;
  out.manifest = read_manifest(dir);
  const auto scenes_path = dir / kScenesFile;
  const std::string text = io::read_file(scenes_path);
  if (sha256_hex(text) != out.manifest.digest) {
    throw Error(ErrorCode::DigestMismatch, scenes_path.string() + " does not match the manifest digest");
  }
  const auto lines = io::lines_of(text);
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto r = io::parse_line(lines[i], i + 1, scenes_path.string(), [](const io::json& j) { return io::record_from(j); });
    io::check_record(r, out.manifest.thresholds);
    if (!seen.emplace(r.scene_id, i).second) io::violation(r.scene_id, "duplicate scene id");
    out.records.push_back(std::move(r));
  }
  if (out.records.size() != out.manifest.num_scenes) {
    throw Error(ErrorCode::InvariantViolation, "manifest lists " + std::to_string(out.manifest.num_scenes) +
                                                   " scenes, file has " + std::to_string(out.records.size()));
  }
  return out;
}

inline std::string serialize_predictions(std::span<const PredictionSet> sets) {
  std::string out;
  for (const auto& p : sets) {
    out += io::to_json(p).dump();
    out += '\n';
  }
  return out;
}

inline void write_predictions(std::span<const PredictionSet> sets, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + path.parent_path().string());
  }
  io::write_file(path, serialize_predictions(sets));
}

/// Loads predictions and cross-checks them against the split.
inline std::vector<PredictionSet> read_predictions(const std::filesystem::path& path,
                                                   std::span<const SceneRecord> records) {
  std::unordered_map<std::string, const SceneRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.scene_id, &r);
  const std::string text = io::read_file(path);
  const auto lines = io::lines_of(text);
  std::vector<PredictionSet> out;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = path.string() + " line " + std::to_string(i + 1);
    auto set = io::parse_line(lines[i], i + 1, path.string(), [&](const io::json& j) {
      PredictionSet p;
      p.scene_id = io::field(j, "scene_id").get<std::string>();
      const auto it = by_id.find(p.scene_id);
      if (it == by_id.end()) throw Error(ErrorCode::UnknownScene, where + ": unknown scene '" + p.scene_id + "'");
      const SceneRecord& r = *it->second;
      const auto future = static_cast<std::size_t>(r.scene.config.future_steps);
      const auto& entries = io::field(j, "predictions");
      if (!entries.is_object()) throw Error(ErrorCode::ParseError, "predictions must be an object");
      bool has_factual = false;
      for (const auto& [key, value] : entries.items()) {
        auto path_pts = io::path_from(value);
        if (path_pts.size() != future) {
          throw Error(ErrorCode::InvariantViolation, where + ": entry '" + key + "' has " +
                                                         std::to_string(path_pts.size()) + " points, expected " +
                                                         std::to_string(future));
        }
        if (key == "factual") {
          p.factual = std::move(path_pts);
          has_factual = true;
        } else if (key == "all_noncausal") {
          p.all_noncausal = std::move(path_pts);
        } else {
          std::uint32_t id = 0;
          const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
          if (ec != std::errc{} || ptr != key.data() + key.size() || id == 0 || id >= r.scene.num_agents()) {
            throw Error(ErrorCode::UnknownAgent, where + ": scene '" + p.scene_id + "' has no neighbour '" + key + "'");
          }
          p.counterfactual[id] = std::move(path_pts);
        }
      }
      if (!has_factual) throw Error(ErrorCode::MissingFactual, where + ": no \"factual\" entry");
      return p;
    });
    if (!seen.emplace(set.scene_id, i).second) {
      throw Error(ErrorCode::InvariantViolation, where + ": duplicate scene '" + set.scene_id + "'");
    }
    out.push_back(std::move(set));
  }
  return out;
}

}  // namespace causal_crowds
