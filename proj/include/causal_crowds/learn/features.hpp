#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "causal_crowds/counterfactual.hpp"
#include "causal_crowds/error.hpp"
#include "causal_crowds/scenario.hpp"
#include "causal_crowds/vec2.hpp"

namespace causal_crowds::learn {

inline constexpr int kHistory = 8;
inline constexpr int kFuture = 12;
inline constexpr int kMaxNeighbors = 8;
inline constexpr int kTrackFeatures = 2 * kHistory;           // one x, y per history step
inline constexpr int kNeighborFeatures = kTrackFeatures + 1;  // plus presence flag
inline constexpr int kInputDim = kTrackFeatures + kMaxNeighbors * kNeighborFeatures;
inline constexpr int kOutputDim = 2 * kFuture;

/// Ego-centric frame: origin at the ego's last observed position, x axis
/// along its last observed displacement.
struct Frame {
  Vec2 origin;
  Vec2 axis{1.0, 0.0};
  Vec2 to_local(Vec2 p) const {
    const Vec2 d = p - origin;
    return {dot(d, axis), dot(d, perp(axis))};
  }
  Vec2 to_world(Vec2 l) const { return origin + l.x * axis + l.y * perp(axis); }
};

inline void check_dimensions(const SceneRecord& r) {
  const auto& c = r.scene.config;
  if (c.history_steps != kHistory || c.future_steps != kFuture) {
    throw Error(ErrorCode::DimensionMismatch, "featurizer expects " + std::to_string(kHistory) + " history and " +
                                                  std::to_string(kFuture) + " future steps");
  }
}

inline Frame ego_frame(const SceneRecord& r) {
  check_dimensions(r);
  const auto& ego = r.trajectories.positions[kEgoIndex];
  Frame f;
  f.origin = ego[kHistory - 1];
  const Vec2 d = ego[kHistory - 1] - ego[kHistory - 2];
  f.axis = norm(d) > 1e-9 ? normalize(d) : r.scene.initial[kEgoIndex].heading;
  return f;
}

/// The record re-simulated without `removed`; its history is what a
/// predictor observes in that world. Annotations are dropped.
inline SceneRecord counterfactual_record(const SceneRecord& r, std::span<const std::uint32_t> removed) {
  SceneRecord out;
  out.scene_id = r.scene_id;
  out.split = r.split;
  out.scene = r.scene;
  if (removed.empty()) {
    out.trajectories = r.trajectories;
    return out;
  }
  const auto cf = simulate_counterfactual(r.scene, RemovalSpec{std::vector<std::uint32_t>(removed.begin(), removed.end())});
  out.trajectories = cf.trajectories;
  out.scene.initial.clear();
  out.scene.params.clear();
  for (std::size_t i = 0; i < r.scene.params.size(); ++i) {
    if (std::find(removed.begin(), removed.end(), r.scene.params[i].id) != removed.end()) continue;
    out.scene.initial.push_back(r.scene.initial[i]);
    out.scene.params.push_back(r.scene.params[i]);
  }
  return out;
}

/// Unnormalized input vector. Removed agents are dropped before the nearest
/// K_max neighbours are chosen; empty slots are zero with a zero flag.
inline Eigen::VectorXd raw_features(const SceneRecord& r, const Frame& f, std::span<const std::uint32_t> removed = {}) {
  check_dimensions(r);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(kInputDim);
  const auto& tr = r.trajectories.positions;
  for (int t = 0; t < kHistory; ++t) {
    const Vec2 l = f.to_local(tr[kEgoIndex][t]);
    x[2 * t] = l.x;
    x[2 * t + 1] = l.y;
  }
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t a = 0; a < tr.size(); ++a) {
    if (a == kEgoIndex) continue;
    if (std::find(removed.begin(), removed.end(), r.scene.params[a].id) != removed.end()) continue;
    order.emplace_back(distance(tr[a][kHistory - 1], f.origin), a);
  }
  std::sort(order.begin(), order.end());
  const auto slots = std::min<std::size_t>(order.size(), kMaxNeighbors);
  for (std::size_t s = 0; s < slots; ++s) {
    const auto a = order[s].second;
    const int base = kTrackFeatures + static_cast<int>(s) * kNeighborFeatures;
    for (int t = 0; t < kHistory; ++t) {
      const Vec2 l = f.to_local(tr[a][t]);
      x[base + 2 * t] = l.x;
      x[base + 2 * t + 1] = l.y;
    }
    x[base + kTrackFeatures] = 1.0;
  }
  return x;
}

/// Per-feature standardization. Neighbour slots share statistics and absent
/// slots stay exactly zero.
struct Normalizer {
  Eigen::VectorXd ego_mean = Eigen::VectorXd::Zero(kTrackFeatures);
  Eigen::VectorXd ego_std = Eigen::VectorXd::Ones(kTrackFeatures);
  Eigen::VectorXd nb_mean = Eigen::VectorXd::Zero(kTrackFeatures);
  Eigen::VectorXd nb_std = Eigen::VectorXd::Ones(kTrackFeatures);

  Eigen::VectorXd apply(const Eigen::VectorXd& raw) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(kInputDim);
    x.head(kTrackFeatures) = (raw.head(kTrackFeatures) - ego_mean).cwiseQuotient(ego_std);
    for (int s = 0; s < kMaxNeighbors; ++s) {
      const int base = kTrackFeatures + s * kNeighborFeatures;
      if (raw[base + kTrackFeatures] == 0.0) continue;
      x.segment(base, kTrackFeatures) = (raw.segment(base, kTrackFeatures) - nb_mean).cwiseQuotient(nb_std);
      x[base + kTrackFeatures] = 1.0;
    }
    return x;
  }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd v(4 * kTrackFeatures);
    v << ego_mean, ego_std, nb_mean, nb_std;
    return v;
  }

  static Normalizer unflatten(const Eigen::VectorXd& v) {
    if (v.size() != 4 * kTrackFeatures) throw Error(ErrorCode::DimensionMismatch, "normalizer size mismatch");
    Normalizer n;
    n.ego_mean = v.segment(0, kTrackFeatures);
    n.ego_std = v.segment(kTrackFeatures, kTrackFeatures);
    n.nb_mean = v.segment(2 * kTrackFeatures, kTrackFeatures);
    n.nb_std = v.segment(3 * kTrackFeatures, kTrackFeatures);
    return n;
  }

  bool operator==(const Normalizer& o) const {
    return ego_mean == o.ego_mean && ego_std == o.ego_std && nb_mean == o.nb_mean && nb_std == o.nb_std;
  }
};

inline Normalizer fit_normalizer(std::span<const Eigen::VectorXd> raws) {
  Normalizer n;
  Eigen::VectorXd ego_sum = Eigen::VectorXd::Zero(kTrackFeatures), ego_sq = ego_sum;
  Eigen::VectorXd nb_sum = ego_sum, nb_sq = ego_sum;
  double ego_n = 0.0, nb_n = 0.0;
  for (const auto& raw : raws) {
    ego_sum += raw.head(kTrackFeatures);
    ego_sq += raw.head(kTrackFeatures).cwiseAbs2();
    ego_n += 1.0;
    for (int s = 0; s < kMaxNeighbors; ++s) {
      const int base = kTrackFeatures + s * kNeighborFeatures;
      if (raw[base + kTrackFeatures] == 0.0) continue;
      nb_sum += raw.segment(base, kTrackFeatures);
      nb_sq += raw.segment(base, kTrackFeatures).cwiseAbs2();
      nb_n += 1.0;
    }
  }
  auto finish = [](const Eigen::VectorXd& sum, const Eigen::VectorXd& sq, double count, Eigen::VectorXd& mean,
                   Eigen::VectorXd& std) {
    if (count == 0.0) return;
    mean = sum / count;
    std = (sq / count - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt().cwiseMax(1e-6);
  };
  finish(ego_sum, ego_sq, ego_n, n.ego_mean, n.ego_std);
  finish(nb_sum, nb_sq, nb_n, n.nb_mean, n.nb_std);
  return n;
}

/// Constant-velocity continuation of the ego in its own frame.
inline Eigen::VectorXd cv_local(const SceneRecord& r, const Frame& f) {
  const auto& ego = r.trajectories.positions[kEgoIndex];
  const Vec2 step = f.to_local(ego[kHistory - 1]) - f.to_local(ego[kHistory - 2]);
  Eigen::VectorXd y(kOutputDim);
  for (int k = 0; k < kFuture; ++k) {
    y[2 * k] = (k + 1) * step.x;
    y[2 * k + 1] = (k + 1) * step.y;
  }
  return y;
}

inline Eigen::VectorXd future_local(const SceneRecord& r, const Frame& f) {
  check_dimensions(r);
  const auto& ego = r.trajectories.positions[kEgoIndex];
  Eigen::VectorXd y(kOutputDim);
  for (int k = 0; k < kFuture; ++k) {
    const Vec2 l = f.to_local(ego[kHistory + k]);
    y[2 * k] = l.x;
    y[2 * k + 1] = l.y;
  }
  return y;
}

inline std::vector<Vec2> to_world_path(const Eigen::VectorXd& local, const Frame& f) {
  std::vector<Vec2> out;
  for (int k = 0; k < kFuture; ++k) out.push_back(f.to_world({local[2 * k], local[2 * k + 1]}));
  return out;
}

}  // namespace causal_crowds::learn
