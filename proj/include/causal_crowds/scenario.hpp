#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "causal_crowds/counterfactual.hpp"
#include "causal_crowds/error.hpp"
#include "causal_crowds/parallel.hpp"
#include "causal_crowds/random.hpp"
#include "causal_crowds/scene.hpp"

namespace causal_crowds {

enum class Split { ID, OodDensity, OodContext, OodDensityContext };

constexpr std::string_view to_string(Split s) {
  switch (s) {
    case Split::ID: return "id";
    case Split::OodDensity: return "ood_density";
    case Split::OodContext: return "ood_context";
    case Split::OodDensityContext: return "ood_density_context";
  }
  return "?";
}

inline Split split_from_string(std::string_view s) {
  for (auto v : {Split::ID, Split::OodDensity, Split::OodContext, Split::OodDensityContext}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown split '" + std::string(s) + "'");
}

struct OpenArea {
  double radius = 6.5;
  double inner_radius = 0.0;  // positions are drawn from the annulus
  double ego_radius = -1.0;   // ego drawn within this radius; negative: like the others
  double goal_jitter = 1.0;   // goals are antipodal plus a uniform offset of this size
  bool operator==(const OpenArea&) const = default;
};

/// Corridor along +x from x = 0 to x = length, centred on y = 0.
struct Street {
  double width = 4.0;
  double length = 30.0;
  bool operator==(const Street&) const = default;
};

/// Open area where a fraction of the agents stand still.
struct Plaza {
  double static_fraction = 0.3;
  double radius = 8.0;
  bool operator==(const Plaza&) const = default;
};

using Context = std::variant<OpenArea, Street, Plaza>;

struct SplitSpec {
  Split split = Split::ID;
  std::size_t num_scenes = 1;
  std::uint64_t rng_seed = 0;
  double target_agents = 12.0;  // mean agents per scene, ego included
  int agent_jitter = 2;         // count drawn uniformly from target +- jitter
  Context context = OpenArea{};
  double follower_fraction = 0.25;
  int max_chain = 2;
  double follow_back_lo = 0.9;  // follower offset behind its leader, m
  double follow_back_hi = 1.5;
  double follow_side = 0.8;     // max lateral follower offset, m
  double ego_leader_prob = 0.8;  // chance a follower is assigned to the ego
  int near_ego_agents = 0;    // extra agents placed around the ego
  int behind_ego_agents = 0;  // extra agents placed behind the ego
  double min_separation = 1.0;
  double pref_speed_lo = 0.8;
  double pref_speed_hi = 1.5;
  sim::AgentParams agent;  // template for radius, speeds, perception and horizon
  sim::SimConfig config;
  CausalThresholds thresholds;
  int max_attempts = 100;
};

inline void validate(const SplitSpec& s) {
  require(s.num_scenes > 0, "num_scenes must be positive");
  require(s.target_agents >= 2.0, "target_agents must be >= 2");
  require(s.agent_jitter >= 0 && s.target_agents - s.agent_jitter >= 1.0, "agent_jitter too large");
  require(s.follower_fraction >= 0.0 && s.follower_fraction <= 1.0, "follower_fraction must be in [0, 1]");
  require(s.max_chain >= 1, "max_chain must be >= 1");
  require(s.near_ego_agents >= 0 && s.behind_ego_agents >= 0, "extra agent counts must be non-negative");
  require(s.min_separation > 0.0, "min_separation must be positive");
  require(s.pref_speed_lo > 0.0 && s.pref_speed_lo <= s.pref_speed_hi, "bad preferred speed range");
  require(s.max_attempts >= 1, "max_attempts must be >= 1");
  const double radius = s.agent.radius;
  if (const auto* st = std::get_if<Street>(&s.context)) {
    require(st->width > 2.0 * (2.0 * radius), "street must be wider than two agent diameters");
    require(st->length > 4.0, "street too short");
  }
  if (const auto* p = std::get_if<Plaza>(&s.context)) {
    require(p->static_fraction >= 0.0 && p->static_fraction < 1.0, "static_fraction must be in [0, 1)");
  }
  require(s.pref_speed_hi <= s.agent.max_speed, "preferred speed above max_speed");
  sim::validate(s.agent);
  sim::validate(s.config);
  validate(s.thresholds);
}

/// The four benchmark splits with their default mixes.
inline SplitSpec default_split_spec(Split split, std::size_t num_scenes, std::uint64_t seed) {
  SplitSpec s;
  s.split = split;
  s.num_scenes = num_scenes;
  s.rng_seed = seed;
  switch (split) {
    case Split::ID:
      break;
    case Split::OodDensity:
      s.target_agents = 12.0;
      s.near_ego_agents = 6;
      s.behind_ego_agents = 11;
      break;
    case Split::OodContext:
      s.target_agents = 29.0;
      s.context = Street{};
      break;
    case Split::OodDensityContext:
      s.target_agents = 29.0;
      s.context = Plaza{};
      break;
  }
  return s;
}

struct SceneRecord {
  std::string scene_id;
  Split split = Split::ID;
  Scene scene;
  sim::Trajectories trajectories;
  std::vector<CausalAnnotation> annotations;
  bool operator==(const SceneRecord&) const = default;
};

struct CategoryCounts {
  std::size_t non_causal = 0;
  std::size_t direct = 0;
  std::size_t indirect = 0;
  std::size_t ambiguous = 0;
};

inline CategoryCounts count_categories(std::span<const CausalAnnotation> annotations) {
  CategoryCounts c;
  for (const auto& a : annotations) {
    switch (a.category) {
      case Category::NonCausal: ++c.non_causal; break;
      case Category::DirectCausal: ++c.direct; break;
      case Category::IndirectCausal: ++c.indirect; break;
      case Category::Ambiguous: ++c.ambiguous; break;
    }
  }
  return c;
}

/// Per-scene means over a split. Totals count every agent, ego included.
struct SplitSummary {
  std::size_t num_scenes = 0;
  double non_causal = 0.0;
  double direct = 0.0;
  double indirect = 0.0;
  double ambiguous = 0.0;
  double total = 0.0;
  bool operator==(const SplitSummary&) const = default;
};

inline SplitSummary summarize(std::span<const SceneRecord> records) {
  SplitSummary s;
  s.num_scenes = records.size();
  if (records.empty()) return s;
  for (const auto& r : records) {
    const auto c = count_categories(r.annotations);
    s.non_causal += static_cast<double>(c.non_causal);
    s.direct += static_cast<double>(c.direct);
    s.indirect += static_cast<double>(c.indirect);
    s.ambiguous += static_cast<double>(c.ambiguous);
    s.total += static_cast<double>(r.scene.num_agents());
  }
  const auto n = static_cast<double>(records.size());
  s.non_causal /= n;
  s.direct /= n;
  s.indirect /= n;
  s.ambiguous /= n;
  s.total /= n;
  return s;
}

inline std::string scene_id(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%06zu", index);
  return std::string(to_string(split)) + buf;
}

namespace detail {

struct Draft {
  std::vector<sim::AgentState> states;
  std::vector<sim::AgentParams> params;
  std::vector<sim::Obstacle> obstacles;
};

inline Vec2 in_disc(Rng& rng, double radius, double inner = 0.0) {
  const double u = rng.uniform();
  const double r = std::sqrt(inner * inner + u * (radius * radius - inner * inner));
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {r * std::cos(a), r * std::sin(a)};
}

inline bool clear_of(const Draft& d, Vec2 p, double separation) {
  for (const auto& s : d.states) {
    if (distance(s.position, p) < separation) return false;
  }
  return true;
}

inline void push_agent(Draft& d, const SplitSpec& spec, Rng& rng, Vec2 pos, Vec2 goal) {
  sim::AgentParams p = spec.agent;
  p.behavior = sim::GoalSeeking{};
  p.id = static_cast<std::uint32_t>(d.params.size());
  p.goal = goal;
  p.pref_speed = rng.uniform(spec.pref_speed_lo, spec.pref_speed_hi);
  sim::AgentState s;
  s.position = pos;
  const Vec2 to_goal = goal - pos;
  s.heading = abs_sq(to_goal) > 0.0 ? normalize(to_goal) : Vec2{1.0, 0.0};
  s.velocity = abs_sq(to_goal) > 0.0 ? p.pref_speed * s.heading : Vec2{};
  d.states.push_back(s);
  d.params.push_back(p);
}

/// Samples a position with `sample` until it clears the others; gives up
/// after a bounded number of tries.
template <class Sampler>
bool place(Draft& d, const SplitSpec& spec, Rng& rng, Sampler&& sample) {
  for (int tries = 0; tries < 200; ++tries) {
    const auto [pos, goal] = sample();
    if (clear_of(d, pos, spec.min_separation)) {
      push_agent(d, spec, rng, pos, goal);
      return true;
    }
  }
  return false;
}

inline Vec2 antipodal_goal(Rng& rng, Vec2 pos, double jitter) {
  return -pos + Vec2{rng.uniform(-jitter, jitter), rng.uniform(-jitter, jitter)};
}

inline bool populate_open_area(Draft& d, const SplitSpec& spec, Rng& rng, int n, double radius, double inner,
                               double ego_radius, double jitter) {
  for (int i = 0; i < n; ++i) {
    const bool ok = place(d, spec, rng, [&] {
      const Vec2 p = i == 0 && ego_radius >= 0.0 ? in_disc(rng, ego_radius) : in_disc(rng, radius, inner);
      return std::pair{p, antipodal_goal(rng, p, jitter)};
    });
    if (!ok) return false;
  }
  return true;
}

inline bool populate_street(Draft& d, const SplitSpec& spec, Rng& rng, int n, const Street& st) {
  const double half = st.width / 2.0;
  const double margin = spec.agent.radius + 0.1;
  d.obstacles.push_back({{0.0, half}, {st.length, half}});
  d.obstacles.push_back({{0.0, -half}, {st.length, -half}});
  for (int i = 0; i < n; ++i) {
    const bool ok = place(d, spec, rng, [&] {
      const bool ego = d.states.empty();
      const bool eastbound = ego || rng.bernoulli(0.5);
      const double x = ego ? rng.uniform(0.25, 0.4) * st.length : rng.uniform(0.5, 0.75 * st.length);
      const double y = rng.uniform(-half + margin, half - margin);
      const double gy = rng.uniform(-half + margin, half - margin);
      return std::pair{Vec2{x, y}, Vec2{eastbound ? st.length : 0.0, gy}};
    });
    if (!ok) return false;
  }
  return true;
}

/// Extra agents for the density split: some crossing close to the ego, some
/// walking behind it.
inline bool add_density_agents(Draft& d, const SplitSpec& spec, Rng& rng) {
  const Vec2 ego = d.states[kEgoIndex].position;
  const Vec2 fwd = d.states[kEgoIndex].heading;
  const Vec2 left = perp(fwd);
  for (int i = 0; i < spec.near_ego_agents; ++i) {
    const bool ok = place(d, spec, rng, [&] {
      const Vec2 p = ego + in_disc(rng, 5.0);
      return std::pair{p, ego + (ego - p) * 3.0 + Vec2{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)}};
    });
    if (!ok) return false;
  }
  for (int i = 0; i < spec.behind_ego_agents; ++i) {
    const bool ok = place(d, spec, rng, [&] {
      const double back = rng.uniform(1.5, 9.0);
      const double side = rng.uniform(-4.0, 4.0);
      const Vec2 p = ego - back * fwd + side * left;
      return std::pair{p, p + 20.0 * fwd + rng.uniform(-2.0, 2.0) * left};
    });
    if (!ok) return false;
  }
  return true;
}

/// Turns a fraction of the agents into followers standing just behind their
/// leader. Leaders always have a lower index, which bounds chain depth.
inline void assign_followers(Draft& d, const SplitSpec& spec, Rng& rng) {
  std::vector<int> depth(d.states.size(), 0);
  for (std::size_t i = 1; i < d.states.size(); ++i) {
    if (!rng.bernoulli(spec.follower_fraction)) continue;
    std::vector<std::size_t> leaders;
    for (std::size_t j = 0; j < i; ++j) {
      if (depth[j] < spec.max_chain && norm(d.states[j].velocity) > 0.0) leaders.push_back(j);
    }
    if (leaders.empty()) continue;
    const bool ego_leads = leaders.front() == kEgoIndex && rng.bernoulli(spec.ego_leader_prob);
    const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(leaders.size()) - 1);
    const std::size_t leader = ego_leads ? kEgoIndex : leaders[static_cast<std::size_t>(pick)];
    const Vec2 dir = d.states[leader].heading;
    const Vec2 offset = -rng.uniform(spec.follow_back_lo, spec.follow_back_hi) * dir + rng.uniform(-spec.follow_side, spec.follow_side) * perp(dir);
    const Vec2 pos = d.states[leader].position + offset;
    bool clear = true;
    for (std::size_t j = 0; j < d.states.size(); ++j) {
      if (j != i && distance(d.states[j].position, pos) < 2.0 * d.params[j].radius + 0.1) clear = false;
    }
    if (!clear) continue;
    d.states[i].position = pos;
    d.states[i].heading = dir;
    d.params[i].pref_speed = std::min(d.params[i].max_speed, d.params[leader].pref_speed + 0.2);
    d.states[i].velocity = d.params[leader].pref_speed * dir;
    d.params[i].goal = d.params[leader].goal;
    d.params[i].behavior = sim::Follower{d.params[leader].id, offset};
    depth[i] = depth[leader] + 1;
  }
}

inline void make_static(Draft& d, const Plaza& plaza, Rng& rng) {
  for (std::size_t i = 1; i < d.states.size(); ++i) {
    if (!std::holds_alternative<sim::GoalSeeking>(d.params[i].behavior)) continue;
    if (!rng.bernoulli(plaza.static_fraction)) continue;
    d.params[i].goal = d.states[i].position;
    d.states[i].velocity = {};
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    d.states[i].heading = {std::cos(a), std::sin(a)};
  }
}

inline bool any_overlap(const Draft& d) {
  for (std::size_t i = 0; i < d.states.size(); ++i) {
    for (std::size_t j = i + 1; j < d.states.size(); ++j) {
      if (distance(d.states[i].position, d.states[j].position) < d.params[i].radius + d.params[j].radius) return true;
    }
  }
  return false;
}

inline std::optional<Draft> draft_scene(const SplitSpec& spec, Rng& rng) {
  Draft d;
  const int jitter = spec.agent_jitter;
  const int base = static_cast<int>(std::lround(spec.target_agents));
  const int n = static_cast<int>(rng.uniform_int(base - jitter, base + jitter));
  bool ok = true;
  if (const auto* st = std::get_if<Street>(&spec.context)) {
    ok = populate_street(d, spec, rng, n, *st);
  } else if (const auto* p = std::get_if<Plaza>(&spec.context)) {
    ok = populate_open_area(d, spec, rng, n, p->radius, 0.0, -1.0, 1.0);
  } else {
    const auto& area = std::get<OpenArea>(spec.context);
    ok = populate_open_area(d, spec, rng, n, area.radius, area.inner_radius, area.ego_radius, area.goal_jitter);
  }
  if (!ok) return std::nullopt;
  if (!add_density_agents(d, spec, rng)) return std::nullopt;
  assign_followers(d, spec, rng);
  if (const auto* p = std::get_if<Plaza>(&spec.context)) make_static(d, *p, rng);
  if (any_overlap(d)) return std::nullopt;
  return d;
}

}  // namespace detail

/// One scene of a split. Deterministic in (spec.rng_seed, index).
inline SceneRecord generate_scene(const SplitSpec& spec, std::size_t index) {
  validate(spec);
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    const std::uint64_t seed = hash_combine({spec.rng_seed, static_cast<std::uint64_t>(index),
                                             static_cast<std::uint64_t>(attempt)});
    Rng rng(seed);
    auto draft = detail::draft_scene(spec, rng);
    if (!draft) continue;
    SceneRecord r;
    r.scene_id = scene_id(spec.split, index);
    r.split = spec.split;
    r.scene.initial = std::move(draft->states);
    r.scene.params = std::move(draft->params);
    r.scene.obstacles = std::move(draft->obstacles);
    r.scene.config = spec.config;
    r.scene.config.rng_seed = seed;
    auto ann = annotate_scene_full(r.scene, spec.thresholds);
    if (count_categories(ann.annotations).direct == 0) continue;
    r.trajectories = std::move(ann.factual.trajectories);
    r.annotations = std::move(ann.annotations);
    return r;
  }
  throw Error(ErrorCode::RetryExhausted,
              "scene " + std::to_string(index) + " rejected " + std::to_string(spec.max_attempts) + " times");
}

/// All scenes of a split, in index order regardless of `threads`.
inline std::vector<SceneRecord> generate_scenes(const SplitSpec& spec, unsigned threads = 1) {
  validate(spec);
  std::vector<SceneRecord> out(spec.num_scenes);
  parallel_for(spec.num_scenes, threads, [&](std::size_t i) { out[i] = generate_scene(spec, i); });
  return out;
}

struct GeneratedSplit {
  std::vector<SceneRecord> records;
  SplitSummary summary;
};

inline GeneratedSplit generate_split(const SplitSpec& spec, unsigned threads = 1) {
  GeneratedSplit g;
  g.records = generate_scenes(spec, threads);
  g.summary = summarize(g.records);
  return g;
}

}  // namespace causal_crowds
