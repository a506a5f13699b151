#pragma once

#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "causal_crowds/error.hpp"
#include "causal_crowds/vec2.hpp"

namespace causal_crowds::sim {

struct AgentState {
  Vec2 position;
  Vec2 velocity;
  Vec2 heading{1.0, 0.0};  // unit vector
  bool operator==(const AgentState&) const = default;
};

struct GoalSeeking {
  bool operator==(const GoalSeeking&) const = default;
};

/// Walks toward `offset` relative to the followed agent's current position.
struct Follower {
  std::uint32_t target_id = 0;
  Vec2 offset;
  bool operator==(const Follower&) const = default;
};

using Behavior = std::variant<GoalSeeking, Follower>;

struct AgentParams {
  /// Stable identity. Survives counterfactual removal of other agents, so
  /// anything keyed on it (line ordering, visibility memory) is unaffected
  /// by who else is in the scene.
  std::uint32_t id = 0;
  double radius = 0.3;
  double max_speed = 2.0;
  double pref_speed = 1.2;
  Vec2 goal;
  double fov_half_angle = 105.0 * std::numbers::pi / 180.0;
  double neighbor_dist = 4.0;
  double time_horizon = 2.0;
  Behavior behavior = GoalSeeking{};
  bool operator==(const AgentParams&) const = default;
};

/// Half-plane constraint in velocity space. Permitted side is to the left of
/// the directed line: det(direction, v - point) >= 0.
struct OrcaLine {
  Vec2 point;
  Vec2 direction;
};

struct Obstacle {
  Vec2 a;
  Vec2 b;
  bool operator==(const Obstacle&) const = default;
};

/// Where a counterfactual world departs from the factual one.
enum class BranchPoint {
  FromStart,      // re-simulate the whole episode without the removed agents
  AtHistoryEnd,   // keep the factual history, remove agents from history_steps on
};

struct SimConfig {
  double dt = 0.4;
  int total_steps = 20;
  int history_steps = 8;
  int future_steps = 12;
  int visibility_window = 5;
  double reciprocity = 0.5;
  std::uint64_t rng_seed = 0;
  double heading_epsilon = 1e-3;
  double goal_tolerance = 0.1;
  /// ORCA velocity updates per recorded step (each integrates dt / substeps).
  /// Perception and visibility memory still update once per dt.
  int substeps = 4;
  BranchPoint branch = BranchPoint::FromStart;
  bool operator==(const SimConfig&) const = default;
};

inline constexpr double kCoincidentTolerance = 1e-9;

inline void validate(const SimConfig& c) {
  require(c.dt > 0.0, "dt must be positive");
  require(c.history_steps > 0 && c.future_steps > 0, "history and future steps must be positive");
  require(c.total_steps == c.history_steps + c.future_steps,
          "total_steps must equal history_steps + future_steps");
  require(c.visibility_window >= 1, "visibility_window must be >= 1");
  require(c.reciprocity > 0.0 && c.reciprocity <= 1.0, "reciprocity must be in (0, 1]");
  require(c.heading_epsilon > 0.0, "heading_epsilon must be positive");
  require(c.goal_tolerance >= 0.0, "goal_tolerance must be non-negative");
  require(c.substeps >= 1, "substeps must be >= 1");
}

inline void validate(const AgentParams& p) {
  require(p.radius > 0.0, "radius must be positive");
  require(p.pref_speed > 0.0 && p.pref_speed <= p.max_speed, "need 0 < pref_speed <= max_speed");
  require(p.fov_half_angle > 0.0 && p.fov_half_angle <= std::numbers::pi,
          "fov_half_angle must be in (0, pi]");
  require(p.neighbor_dist > 2.0 * p.radius, "neighbor_dist must exceed 2 * radius");
  require(p.time_horizon > 0.0, "time_horizon must be positive");
}

inline void validate(const Obstacle& o) {
  require(!(o.a == o.b), "obstacle endpoints must be distinct");
}

/// Positions per agent per recorded step: positions[agent][step].
struct Trajectories {
  std::vector<std::vector<Vec2>> positions;

  std::size_t num_agents() const { return positions.size(); }
  std::size_t num_steps() const { return positions.empty() ? 0 : positions.front().size(); }
  bool operator==(const Trajectories&) const = default;
};

}  // namespace causal_crowds::sim
