#pragma once

// Paired factual / counterfactual simulation and the ground-truth causal
// annotations derived from it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "causal_crowds/error.hpp"
#include "causal_crowds/random.hpp"
#include "causal_crowds/scene.hpp"
#include "causal_crowds/sim/stepper.hpp"

namespace causal_crowds {

enum class Category { NonCausal, DirectCausal, IndirectCausal, Ambiguous };

constexpr std::string_view to_string(Category c) {
  switch (c) {
    case Category::NonCausal: return "non_causal";
    case Category::DirectCausal: return "direct";
    case Category::IndirectCausal: return "indirect";
    case Category::Ambiguous: return "ambiguous";
  }
  return "ambiguous";
}

inline Category category_from_string(std::string_view s) {
  if (s == "non_causal") return Category::NonCausal;
  if (s == "direct") return Category::DirectCausal;
  if (s == "indirect") return Category::IndirectCausal;
  if (s == "ambiguous") return Category::Ambiguous;
  throw Error(ErrorCode::ParseError, "unknown category '" + std::string(s) + "'");
}

struct CausalThresholds {
  double epsilon = 0.02;  // m, below: non-causal
  double eta = 0.1;       // m, above: causal
  bool operator==(const CausalThresholds&) const = default;
};

inline void validate(const CausalThresholds& t) {
  require(t.epsilon > 0.0 && t.epsilon < t.eta, "thresholds need 0 < epsilon < eta");
}

struct CausalAnnotation {
  std::uint32_t agent_id = 0;
  double effect = 0.0;
  Category category = Category::NonCausal;
  std::vector<bool> direct_mask;  // one entry per recorded step
  bool operator==(const CausalAnnotation&) const = default;
};

/// Agent ids removed in a counterfactual world. Never contains the ego.
struct RemovalSpec {
  std::vector<std::uint32_t> removed_agents;
};

inline void validate(const RemovalSpec& removal, const Scene& scene) {
  for (std::uint32_t id : removal.removed_agents) {
    require(id != scene.params[kEgoIndex].id, "the ego cannot be removed");
    bool known = false;
    for (const auto& p : scene.params) known = known || p.id == id;
    require(known, "removal references unknown agent " + std::to_string(id));
  }
}

/// Drops agents from a running world. Followers whose leader disappears keep
/// walking to the last point they were heading for.
inline sim::World remove_agents(const sim::World& world, std::span<const std::uint32_t> removed) {
  auto is_removed = [&](std::uint32_t id) {
    return std::find(removed.begin(), removed.end(), id) != removed.end();
  };
  sim::World out;
  out.memory = world.memory;
  for (std::size_t i = 0; i < world.states.size(); ++i) {
    if (is_removed(world.params[i].id)) continue;
    sim::AgentParams p = world.params[i];
    if (const auto* f = std::get_if<sim::Follower>(&p.behavior); f != nullptr && is_removed(f->target_id)) {
      p.goal = sim::target_point(i, world.states, world.params);
      p.behavior = sim::GoalSeeking{};
    }
    out.states.push_back(world.states[i]);
    out.params.push_back(p);
  }
  for (std::uint32_t id : removed) out.memory.forget(id);
  return out;
}

inline sim::RolloutResult simulate_factual(const Scene& scene) {
  return sim::rollout(scene.initial, scene.params, scene.obstacles, scene.config);
}

/// The counterfactual world with `removal` applied, starting from the same
/// initial conditions. With BranchPoint::AtHistoryEnd the factual history is
/// kept and the removal happens at the history/future boundary.
inline sim::RolloutResult simulate_counterfactual(const Scene& scene, const RemovalSpec& removal) {
  validate(removal, scene);
  const sim::SimConfig& config = scene.config;
  sim::World world = sim::make_world(scene.initial, scene.params, config);
  for (const auto& o : scene.obstacles) sim::validate(o);

  sim::RolloutResult result;
  int steps_left = config.total_steps;
  if (config.branch == sim::BranchPoint::AtHistoryEnd) {
    result.trajectories.positions.resize(world.states.size());
    sim::advance_world(result, std::move(world), scene.obstacles, config, config.history_steps);
    world = std::move(result.final_world);
    steps_left -= config.history_steps;
    // Keep only the surviving agents' history rows.
    std::vector<std::vector<Vec2>> kept;
    for (std::size_t i = 0; i < world.params.size(); ++i) {
      const auto id = world.params[i].id;
      if (std::find(removal.removed_agents.begin(), removal.removed_agents.end(), id) ==
          removal.removed_agents.end()) {
        kept.push_back(std::move(result.trajectories.positions[i]));
      }
    }
    result.trajectories.positions = std::move(kept);
    for (auto& ids : result.ego_perceived) {
      std::erase_if(ids, [&](std::uint32_t id) {
        return std::find(removal.removed_agents.begin(), removal.removed_agents.end(), id) !=
               removal.removed_agents.end();
      });
    }
  }
  world = remove_agents(world, removal.removed_agents);
  if (result.trajectories.positions.empty()) result.trajectories.positions.resize(world.states.size());
  sim::advance_world(result, std::move(world), scene.obstacles, config, steps_left);
  return result;
}

struct PairResult {
  sim::RolloutResult factual;
  sim::RolloutResult counterfactual;
};

inline PairResult simulate_pair(const Scene& scene, const RemovalSpec& removal) {
  return {simulate_factual(scene), simulate_counterfactual(scene, removal)};
}

/// Average point-wise Euclidean distance between two equally long paths.
inline double mean_pointwise_distance(std::span<const Vec2> a, std::span<const Vec2> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "trajectory lengths differ");
  if (a.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) sum += distance(a[k], b[k]);
  return sum / static_cast<double>(a.size());
}

/// The ego's predicted horizon: rows history_steps .. total_steps-1.
inline std::span<const Vec2> ego_future(const sim::Trajectories& t, const sim::SimConfig& config) {
  if (t.num_agents() == 0 || t.num_steps() != static_cast<std::size_t>(config.total_steps)) {
    throw Error(ErrorCode::LengthMismatch, "trajectory does not cover total_steps");
  }
  return std::span<const Vec2>(t.positions[kEgoIndex]).subspan(static_cast<std::size_t>(config.history_steps));
}

/// Ground-truth causal effect: distance between the ego futures of the two worlds.
inline double causal_effect(const sim::Trajectories& factual, const sim::Trajectories& counterfactual,
                            const sim::SimConfig& config) {
  if (factual.num_steps() != counterfactual.num_steps()) {
    throw Error(ErrorCode::LengthMismatch, "factual and counterfactual step counts differ");
  }
  return mean_pointwise_distance(ego_future(factual, config), ego_future(counterfactual, config));
}

/// mask[t] is true when `agent_id` was in the ego's perceived set during step t.
inline std::vector<bool> direct_mask_from(const sim::RolloutResult& factual, std::uint32_t agent_id) {
  std::vector<bool> mask;
  mask.reserve(factual.ego_perceived.size());
  for (const auto& ids : factual.ego_perceived) {
    mask.push_back(std::find(ids.begin(), ids.end(), agent_id) != ids.end());
  }
  return mask;
}

inline std::vector<bool> direct_influence_mask(const Scene& scene, std::uint32_t agent_id) {
  require(agent_id != scene.params[kEgoIndex].id, "mask is defined for neighbours only");
  return direct_mask_from(simulate_factual(scene), agent_id);
}

inline Category categorize(double effect, const std::vector<bool>& direct_mask, const CausalThresholds& t) {
  require(effect >= 0.0, "effect must be non-negative");
  if (effect < t.epsilon) return Category::NonCausal;
  if (effect <= t.eta) return Category::Ambiguous;
  const bool ever_direct = std::find(direct_mask.begin(), direct_mask.end(), true) != direct_mask.end();
  return ever_direct ? Category::DirectCausal : Category::IndirectCausal;
}

struct SceneAnnotation {
  sim::RolloutResult factual;
  std::vector<CausalAnnotation> annotations;  // ordered by agent id
  std::size_t rollouts = 0;
};

/// Singleton-removal annotation of every neighbour (1 + K rollouts).
inline SceneAnnotation annotate_scene_full(const Scene& scene, const CausalThresholds& thresholds) {
  validate(thresholds);
  SceneAnnotation out;
  out.factual = simulate_factual(scene);
  out.rollouts = 1;
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < scene.params.size(); ++i) {
    if (i != kEgoIndex) ids.push_back(scene.params[i].id);
  }
  std::sort(ids.begin(), ids.end());
  for (std::uint32_t id : ids) {
    const sim::RolloutResult cf = simulate_counterfactual(scene, RemovalSpec{{id}});
    ++out.rollouts;
    CausalAnnotation a;
    a.agent_id = id;
    a.effect = causal_effect(out.factual.trajectories, cf.trajectories, scene.config);
    a.direct_mask = direct_mask_from(out.factual, id);
    a.category = categorize(a.effect, a.direct_mask, thresholds);
    out.annotations.push_back(std::move(a));
  }
  return out;
}

inline std::vector<CausalAnnotation> annotate_scene(const Scene& scene, const CausalThresholds& thresholds) {
  return annotate_scene_full(scene, thresholds).annotations;
}

enum class SubsetSelection { Lexicographic, SeededRandom };

/// k non-causal agent ids: the k smallest, or a seeded random k-subset.
inline std::vector<std::uint32_t> noncausal_subset(std::span<const CausalAnnotation> annotations, std::size_t k,
                                                   SubsetSelection selection = SubsetSelection::Lexicographic,
                                                   std::uint64_t seed = 0) {
  std::vector<std::uint32_t> pool;
  for (const auto& a : annotations) {
    if (a.category == Category::NonCausal) pool.push_back(a.agent_id);
  }
  if (pool.size() < k) {
    throw Error(ErrorCode::InsufficientNonCausal,
                "need " + std::to_string(k) + " non-causal agents, scene has " + std::to_string(pool.size()));
  }
  std::sort(pool.begin(), pool.end());
  if (selection == SubsetSelection::SeededRandom) {
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) {  // partial Fisher-Yates
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                              static_cast<std::int64_t>(pool.size() - 1)));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
  } else {
    pool.resize(k);
  }
  return pool;
}

/// Causal effect of removing k non-causal agents jointly.
inline double joint_removal_effect(const Scene& scene, std::span<const CausalAnnotation> annotations, std::size_t k,
                                   SubsetSelection selection = SubsetSelection::Lexicographic,
                                   std::uint64_t seed = 0) {
  if (k == 0) return 0.0;
  const RemovalSpec removal{noncausal_subset(annotations, k, selection, seed)};
  const auto factual = simulate_factual(scene);
  const auto cf = simulate_counterfactual(scene, removal);
  return causal_effect(factual.trajectories, cf.trajectories, scene.config);
}

inline double joint_removal_effect(const Scene& scene, std::size_t k, const CausalThresholds& thresholds) {
  if (k == 0) return 0.0;
  const auto annotations = annotate_scene(scene, thresholds);
  return joint_removal_effect(scene, annotations, k);
}

}  // namespace causal_crowds
