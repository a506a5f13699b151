#pragma once

#include <cstddef>
#include <vector>

#include "causal_crowds/sim/types.hpp"

namespace causal_crowds {

/// Initial conditions of one episode. Agent 0 is the ego; agent ids equal
/// their index in the full scene.
struct Scene {
  std::vector<sim::AgentState> initial;
  std::vector<sim::AgentParams> params;
  std::vector<sim::Obstacle> obstacles;
  sim::SimConfig config;

  std::size_t num_agents() const { return initial.size(); }
  bool operator==(const Scene&) const = default;
};

inline constexpr std::size_t kEgoIndex = 0;

}  // namespace causal_crowds
