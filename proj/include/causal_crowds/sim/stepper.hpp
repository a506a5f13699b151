#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "causal_crowds/random.hpp"
#include "causal_crowds/sim/orca.hpp"
#include "causal_crowds/sim/perception.hpp"
#include "causal_crowds/sim/types.hpp"

namespace causal_crowds::sim {

/// Full simulator state between steps.
struct World {
  std::vector<AgentState> states;
  std::vector<AgentParams> params;
  VisibilityMemory memory;
};

inline void validate_agents(std::span<const AgentState> states, std::span<const AgentParams> params) {
  require(states.size() == params.size(), "states and params differ in length");
  std::vector<std::uint32_t> ids;
  ids.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    validate(params[i]);
    const AgentState& s = states[i];
    require(std::isfinite(s.position.x) && std::isfinite(s.position.y) && std::isfinite(s.velocity.x) &&
                std::isfinite(s.velocity.y),
            "agent state must be finite");
    require(norm(s.velocity) <= params[i].max_speed + 1e-9, "agent speed exceeds max_speed");
    require(std::fabs(norm(s.heading) - 1.0) < 1e-9, "heading must be a unit vector");
    if (const auto* f = std::get_if<Follower>(&params[i].behavior)) {
      require(f->target_id != params[i].id, "an agent cannot follow itself");
    }
    ids.push_back(params[i].id);
  }
  std::sort(ids.begin(), ids.end());
  require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), "agent ids must be unique");
}

inline World make_world(std::span<const AgentState> states, std::span<const AgentParams> params,
                        const SimConfig& config) {
  validate(config);
  validate_agents(states, params);
  std::uint32_t capacity = 0;
  for (const AgentParams& p : params) capacity = std::max(capacity, p.id + 1);
  return World{{states.begin(), states.end()}, {params.begin(), params.end()},
               VisibilityMemory(capacity, config.visibility_window)};
}

namespace detail {

inline Vec2 velocity_toward(const Vec2& position, const Vec2& target, double pref_speed, double dt,
                            double tolerance) {
  const Vec2 d = target - position;
  const double dist = norm(d);
  if (dist <= tolerance) return {};
  const double speed = std::min(pref_speed, dist / dt);
  return d * (speed / dist);
}

inline std::optional<std::size_t> index_of(std::span<const AgentParams> params, std::uint32_t id) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].id == id) return i;
  }
  return std::nullopt;
}

}  // namespace detail

/// Point the agent is currently walking to: its goal, or the follow point.
/// A follower whose target is absent walks to its stored goal.
inline Vec2 target_point(std::size_t agent, std::span<const AgentState> states, std::span<const AgentParams> params) {
  if (const auto* f = std::get_if<Follower>(&params[agent].behavior)) {
    if (auto leader = detail::index_of(params, f->target_id)) return states[*leader].position + f->offset;
  }
  return params[agent].goal;
}

inline Vec2 preferred_velocity(std::size_t agent, std::span<const AgentState> states,
                               std::span<const AgentParams> params, const SimConfig& config) {
  return detail::velocity_toward(states[agent].position, target_point(agent, states, params),
                                 params[agent].pref_speed, config.dt, config.goal_tolerance);
}

/// Ordering key for an agent-agent constraint. Depends only on the seed and
/// the two ids, so removing a third agent never reorders the others.
inline std::uint64_t line_order_key(std::uint64_t seed, std::uint32_t ego_id, std::uint32_t other_id) {
  return hash_combine({seed, ego_id, other_id});
}

struct StepOutput {
  World world;
  /// perceived[i] = indices agent i reacted to during this step.
  std::vector<std::vector<std::size_t>> perceived;
};

/// Advances every agent by one dt. Each agent perceives once, from the
/// pre-step states; velocities are then re-planned `substeps` times against
/// the perceived agents, all agents simultaneously, with explicit Euler
/// integration over dt / substeps.
inline StepOutput step(const World& world, std::span<const Obstacle> obstacles, const SimConfig& config) {
  const std::size_t n = world.states.size();
  const double sub_dt = config.dt / config.substeps;

  StepOutput out{world, std::vector<std::vector<std::size_t>>(n)};
  std::vector<std::vector<std::size_t>>& perceived = out.perceived;
  for (std::size_t i = 0; i < n; ++i) {
    perceived[i] = visible_neighbors(i, world.states, world.params, world.memory);
    std::vector<std::pair<std::uint64_t, std::size_t>> order;
    for (std::size_t j : perceived[i]) {
      order.emplace_back(line_order_key(config.rng_seed, world.params[i].id, world.params[j].id), j);
    }
    std::sort(order.begin(), order.end());
    for (std::size_t k = 0; k < order.size(); ++k) perceived[i][k] = order[k].second;
  }
  // `perceived` rows are now in constraint order; restore ascending order on return.

  SimConfig sub_config = config;
  sub_config.dt = sub_dt;
  const std::span<const AgentParams> params = world.params;
  std::vector<AgentState>& states = out.world.states;
  std::vector<Vec2> new_velocity(n);
  std::vector<OrcaLine> lines;

  for (int sub = 0; sub < config.substeps; ++sub) {
    for (std::size_t i = 0; i < n; ++i) {
      const AgentState& me = states[i];
      const AgentParams& my = params[i];
      lines = obstacle_lines(me, my, obstacles, my.time_horizon);
      const std::size_t hard_count = lines.size();
      for (std::size_t j : perceived[i]) {
        lines.push_back(compute_orca_line(me, my, states[j], params[j], my.time_horizon, sub_dt, config.reciprocity));
      }
      const Vec2 v_pref = preferred_velocity(i, states, params, sub_config);
      new_velocity[i] = solve_velocity(lines, hard_count, v_pref, my.max_speed);
    }
    const std::vector<AgentState> before = states;
    for (std::size_t i = 0; i < n; ++i) {
      AgentState& s = states[i];
      s.velocity = new_velocity[i];
      s.position += new_velocity[i] * sub_dt;
      const double speed = norm(s.velocity);
      if (speed > config.heading_epsilon) {
        s.heading = s.velocity / speed;
      } else {
        // Stationary: face the point the agent wants to reach, if any.
        const Vec2 to_target = target_point(i, before, params) - s.position;
        if (norm(to_target) > 1e-9) s.heading = normalize(to_target);
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && in_view(world.states[i], params[i], world.states[j])) {
        out.world.memory.record(params[i].id, params[j].id);
      }
    }
    std::sort(perceived[i].begin(), perceived[i].end());
  }
  out.world.memory.advance();
  return out;
}

struct RolloutResult {
  /// Row t holds positions after step t (t = 0 .. total_steps-1).
  Trajectories trajectories;
  /// Ids the ego (index 0) perceived during each step.
  std::vector<std::vector<std::uint32_t>> ego_perceived;
  World final_world;
};

/// Runs `steps` further steps from `world`, appending to `result`.
inline void advance_world(RolloutResult& result, World world, std::span<const Obstacle> obstacles,
                          const SimConfig& config, int steps) {
  for (int t = 0; t < steps; ++t) {
    StepOutput out = step(world, obstacles, config);
    for (std::size_t i = 0; i < out.world.states.size(); ++i) {
      result.trajectories.positions[i].push_back(out.world.states[i].position);
    }
    std::vector<std::uint32_t> ids;
    if (!out.perceived.empty()) {
      for (std::size_t j : out.perceived[0]) ids.push_back(world.params[j].id);
    }
    result.ego_perceived.push_back(std::move(ids));
    world = std::move(out.world);
  }
  result.final_world = std::move(world);
}

/// Applies `step` total_steps times from the given initial conditions.
inline RolloutResult rollout(std::span<const AgentState> initial, std::span<const AgentParams> params,
                             std::span<const Obstacle> obstacles, const SimConfig& config) {
  for (const Obstacle& o : obstacles) validate(o);
  World world = make_world(initial, params, config);
  RolloutResult result;
  result.trajectories.positions.resize(initial.size());
  for (auto& row : result.trajectories.positions) row.reserve(static_cast<std::size_t>(config.total_steps));
  advance_world(result, std::move(world), obstacles, config, config.total_steps);
  return result;
}

}  // namespace causal_crowds::sim
