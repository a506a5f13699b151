#pragma once

#include <vector>

#include "causal_crowds/counterfactual.hpp"
#include "causal_crowds/dataset_io.hpp"
#include "causal_crowds/metrics.hpp"

namespace causal_crowds {

/// Extrapolates the ego's last observed displacement over the future horizon.
inline std::vector<Vec2> constant_velocity_future(const SceneRecord& r) {
  const auto& ego = r.trajectories.positions[kEgoIndex];
  const auto h = static_cast<std::size_t>(r.scene.config.history_steps);
  const Vec2 last = ego[h - 1];
  const Vec2 step = h >= 2 ? last - ego[h - 2] : r.scene.initial[kEgoIndex].velocity * r.scene.config.dt;
  std::vector<Vec2> out;
  for (int k = 1; k <= r.scene.config.future_steps; ++k) out.push_back(last + static_cast<double>(k) * step);
  return out;
}

/// Ignores neighbours, so every entry of a scene is the same path.
inline PredictionSet predict_constant_velocity(const SceneRecord& r, bool with_all_noncausal = true) {
  PredictionSet p;
  p.scene_id = r.scene_id;
  p.factual = constant_velocity_future(r);
  for (const auto& a : r.annotations) p.counterfactual[a.agent_id] = p.factual;
  if (with_all_noncausal) p.all_noncausal = p.factual;
  return p;
}

/// Outputs the simulated ego future of every world.
inline PredictionSet predict_oracle(const SceneRecord& r, bool with_all_noncausal = true) {
  PredictionSet p;
  p.scene_id = r.scene_id;
  p.factual = as_future(r);
  for (const auto& a : r.annotations) {
    const auto cf = simulate_counterfactual(r.scene, RemovalSpec{{a.agent_id}});
    const auto f = ego_future(cf.trajectories, r.scene.config);
    p.counterfactual[a.agent_id] = {f.begin(), f.end()};
  }
  if (with_all_noncausal) p.all_noncausal = truth_without_noncausal(r);
  return p;
}

}  // namespace causal_crowds
