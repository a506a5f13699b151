#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "causal_crowds/sim/types.hpp"

namespace causal_crowds::sim {

/// Per-agent record of when each other agent was last in view. Keyed by
/// agent id, so it stays valid when agents are removed from a scene.
class VisibilityMemory {
 public:
  static constexpr int kNever = std::numeric_limits<int>::min() / 2;

  VisibilityMemory() = default;
  VisibilityMemory(std::size_t id_capacity, int window)
      : window_(window), last_seen_(id_capacity, std::vector<int>(id_capacity, kNever)) {}

  int window() const { return window_; }
  int step() const { return step_; }
  std::size_t capacity() const { return last_seen_.size(); }

  /// True if `other` was seen by `observer` within the last `window` steps.
  bool remembers(std::uint32_t observer, std::uint32_t other) const {
    if (observer >= last_seen_.size() || other >= last_seen_.size()) return false;
    return last_seen_[observer][other] >= step_ - window_;
  }

  void record(std::uint32_t observer, std::uint32_t other) { last_seen_[observer][other] = step_; }

  void advance() { ++step_; }

  /// Drops everything recorded about (and by) `id`.
  void forget(std::uint32_t id) {
    if (id >= last_seen_.size()) return;
    for (auto& row : last_seen_) row[id] = kNever;
    std::fill(last_seen_[id].begin(), last_seen_[id].end(), kNever);
  }

  bool operator==(const VisibilityMemory&) const = default;

 private:
  int window_ = 1;
  int step_ = 0;
  std::vector<std::vector<int>> last_seen_;
};

/// Geometric test only: within neighbor_dist and inside the field of view
/// (both boundaries inclusive).
inline bool in_view(const AgentState& ego, const AgentParams& ego_params, const AgentState& other) {
  const Vec2 offset = other.position - ego.position;
  const double dist_sq = abs_sq(offset);
  if (dist_sq > ego_params.neighbor_dist * ego_params.neighbor_dist) return false;
  if (ego_params.fov_half_angle >= std::numbers::pi) return true;
  if (dist_sq == 0.0) return true;
  const double angle = std::atan2(std::fabs(det(ego.heading, offset)), dot(ego.heading, offset));
  return angle <= ego_params.fov_half_angle + 1e-12;
}

/// Indices of agents the ego currently perceives: those in view now plus
/// those seen within the memory window. Ascending order.
inline std::vector<std::size_t> visible_neighbors(std::size_t ego_index, std::span<const AgentState> states,
                                                  std::span<const AgentParams> params,
                                                  const VisibilityMemory& memory) {
  std::vector<std::size_t> visible;
  const AgentState& ego = states[ego_index];
  const AgentParams& ego_params = params[ego_index];
  for (std::size_t j = 0; j < states.size(); ++j) {
    if (j == ego_index) continue;
    if (in_view(ego, ego_params, states[j]) || memory.remembers(ego_params.id, params[j].id)) {
      visible.push_back(j);
    }
  }
  return visible;
}

}  // namespace causal_crowds::sim
