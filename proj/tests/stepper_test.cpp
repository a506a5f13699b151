#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "causal_crowds/random.hpp"
#include "causal_crowds/sim/stepper.hpp"

using namespace causal_crowds;
using namespace causal_crowds::sim;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

AgentParams params_for(std::uint32_t id, Vec2 goal, double pref_speed = 1.0) {
  AgentParams p;
  p.id = id;
  p.goal = goal;
  p.pref_speed = pref_speed;
  return p;
}

AgentState facing(Vec2 pos, Vec2 heading) {
  AgentState s;
  s.position = pos;
  s.heading = normalize(heading);
  return s;
}

// A crowd of agents heading to antipodal goals inside a disc.
struct Crowd {
  std::vector<AgentState> states;
  std::vector<AgentParams> params;
};

Crowd random_crowd(std::uint64_t seed, int n, double fov_half_angle) {
  Rng rng(seed);
  Crowd c;
  while (static_cast<int>(c.states.size()) < n) {
    const double r = 10.0 * std::sqrt(rng.uniform());
    const double phi = rng.uniform(0, 2 * std::numbers::pi);
    const Vec2 pos{r * std::cos(phi), r * std::sin(phi)};
    bool clear = true;
    for (const auto& s : c.states) clear = clear && distance(s.position, pos) >= 1.0;
    if (!clear) continue;
    const Vec2 goal = -pos + Vec2{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    AgentParams p = params_for(static_cast<std::uint32_t>(c.params.size()), goal, rng.uniform(0.8, 1.5));
    p.fov_half_angle = fov_half_angle;
    c.params.push_back(p);
    c.states.push_back(facing(pos, goal - pos));
  }
  return c;
}

}  // namespace

TEST(VisibleNeighborsTest, AheadVisibleBehindNot) {
  const std::vector<AgentState> states{facing({0, 0}, {1, 0}), facing({3, 0}, {1, 0}), facing({-3, 0}, {1, 0})};
  std::vector<AgentParams> params{params_for(0, {}), params_for(1, {}), params_for(2, {})};
  for (auto& p : params) p.neighbor_dist = 10.0;
  const VisibilityMemory memory(3, 5);
  EXPECT_EQ(visible_neighbors(0, states, params, memory), (std::vector<std::size_t>{1}));
}

TEST(VisibleNeighborsTest, FovBoundaryIsInclusive) {
  const Vec2 at_boundary{3.0 * std::cos(105 * kDeg), 3.0 * std::sin(105 * kDeg)};
  const Vec2 just_outside{3.0 * std::cos(105.01 * kDeg), 3.0 * std::sin(105.01 * kDeg)};
  const std::vector<AgentState> states{facing({0, 0}, {1, 0}), facing(at_boundary, {1, 0}),
                                       facing(just_outside, {1, 0})};
  std::vector<AgentParams> params{params_for(0, {}), params_for(1, {}), params_for(2, {})};
  for (auto& p : params) {
    p.neighbor_dist = 10.0;
    p.fov_half_angle = 105 * kDeg;
  }
  EXPECT_EQ(visible_neighbors(0, states, params, VisibilityMemory(3, 5)), (std::vector<std::size_t>{1}));
}

TEST(VisibleNeighborsTest, DistanceLimit) {
  const std::vector<AgentState> states{facing({0, 0}, {1, 0}), facing({4.0, 0}, {1, 0}), facing({4.01, 0}, {1, 0})};
  std::vector<AgentParams> params{params_for(0, {}), params_for(1, {}), params_for(2, {})};
  EXPECT_EQ(visible_neighbors(0, states, params, VisibilityMemory(3, 5)), (std::vector<std::size_t>{1}));
}

TEST(VisibleNeighborsTest, MemoryKeepsRecentlySeenAgentsForWindow) {
  // Agent 1 is seen, then the observer turns around; it remains perceived
  // for exactly `window` further steps.
  std::vector<AgentState> states{facing({0, 0}, {1, 0}), facing({2, 0}, {1, 0})};
  std::vector<AgentParams> params{params_for(0, {}), params_for(1, {})};
  VisibilityMemory memory(2, 3);
  memory.record(0, 1);
  memory.advance();
  states[0].heading = {-1, 0};
  for (int k = 1; k <= 3; ++k) {
    EXPECT_EQ(visible_neighbors(0, states, params, memory).size(), 1u) << "step " << k;
    memory.advance();
  }
  EXPECT_TRUE(visible_neighbors(0, states, params, memory).empty());
}

TEST(StepTest, SingleAgentMovesTowardGoal) {
  const std::vector<AgentState> s{facing({0, 0}, {1, 0})};
  const std::vector<AgentParams> p{params_for(0, {5, 0}, 1.0)};
  SimConfig config;
  const StepOutput out = step(make_world(s, p, config), {}, config);
  EXPECT_DOUBLE_EQ(out.world.states[0].position.x, 0.4);
  EXPECT_DOUBLE_EQ(out.world.states[0].position.y, 0.0);
  EXPECT_EQ(out.world.states[0].heading, Vec2(1, 0));
}

TEST(StepTest, AgentAtGoalHolds) {
  const std::vector<AgentState> s{facing({1, 2}, {0, 1})};
  const std::vector<AgentParams> p{params_for(0, {1, 2})};
  SimConfig config;
  const StepOutput out = step(make_world(s, p, config), {}, config);
  EXPECT_EQ(out.world.states[0].position, Vec2(1, 2));
  EXPECT_EQ(out.world.states[0].velocity, Vec2(0, 0));
}

TEST(StepTest, DoesNotOvershootGoal) {
  const std::vector<AgentState> s{facing({0, 0}, {1, 0})};
  const std::vector<AgentParams> p{params_for(0, {0.3, 0}, 1.5)};
  SimConfig config;
  const StepOutput out = step(make_world(s, p, config), {}, config);
  EXPECT_NEAR(out.world.states[0].position.x, 0.3, 1e-15);
}

TEST(StepTest, FollowerTracksOffsetPoint) {
  std::vector<AgentState> s{facing({0, 0}, {1, 0}), facing({-1, 0}, {1, 0})};
  std::vector<AgentParams> p{params_for(0, {10, 0}), params_for(1, {-10, 0})};
  p[1].behavior = Follower{0, {-1.0, 0.0}};
  SimConfig config;
  EXPECT_EQ(target_point(1, s, p), Vec2(-1, 0));
  s[0].position = {3, 0};
  EXPECT_EQ(target_point(1, s, p), Vec2(2, 0));
  // Without the leader the follower walks to its stored goal.
  const std::vector<AgentState> alone{s[1]};
  const std::vector<AgentParams> alone_params{p[1]};
  EXPECT_EQ(target_point(0, alone, alone_params), Vec2(-10, 0));
}

TEST(StepTest, HeadOnPairIsPointSymmetric) {
  for (double lateral : {0.0, 0.05}) {
    std::vector<AgentState> s{facing({-3, -lateral}, {1, 0}), facing({3, lateral}, {-1, 0})};
    std::vector<AgentParams> p{params_for(0, {3, -lateral}), params_for(1, {-3, lateral})};
    for (auto& q : p) q.fov_half_angle = std::numbers::pi;
    const RolloutResult r = rollout(s, p, {}, SimConfig{});
    const auto& a = r.trajectories.positions[0];
    const auto& b = r.trajectories.positions[1];
    bool swerved = false;
    for (std::size_t t = 0; t < a.size(); ++t) {
      EXPECT_NEAR(a[t].x, -b[t].x, 1e-9);
      EXPECT_NEAR(a[t].y, -b[t].y, 1e-9);
      swerved = swerved || std::fabs(a[t].y + lateral) > 0.05;
      EXPECT_GE(distance(a[t], b[t]), 0.95 * 0.6);
    }
    EXPECT_TRUE(swerved);
  }
}

TEST(RolloutTest, ZeroAgentsGiveEmptyTable) {
  const RolloutResult r = rollout({}, {}, {}, SimConfig{});
  EXPECT_EQ(r.trajectories.num_agents(), 0u);
  EXPECT_EQ(r.trajectories.num_steps(), 0u);
}

TEST(RolloutTest, SingleAgentWalksStraight) {
  const std::vector<AgentState> s{facing({0, 0}, {0, 1})};
  const std::vector<AgentParams> p{params_for(0, {0, 100}, 1.2)};
  const RolloutResult r = rollout(s, p, {}, SimConfig{});
  ASSERT_EQ(r.trajectories.num_steps(), 20u);
  for (std::size_t t = 0; t < 20; ++t) {
    EXPECT_NEAR(r.trajectories.positions[0][t].y, 1.2 * 0.4 * static_cast<double>(t + 1), 1e-12);
    EXPECT_EQ(r.trajectories.positions[0][t].x, 0.0);
  }
}

TEST(RolloutTest, RepeatedRunsAreBitIdentical) {
  const Crowd c = random_crowd(3, 14, 105 * kDeg);
  const RolloutResult a = rollout(c.states, c.params, {}, SimConfig{});
  const RolloutResult b = rollout(c.states, c.params, {}, SimConfig{});
  EXPECT_EQ(a.trajectories, b.trajectories);
  EXPECT_EQ(a.ego_perceived, b.ego_perceived);
}

TEST(RolloutTest, MirrorAcrossXAxisMirrorsRollout) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Crowd c = random_crowd(seed, 12, 105 * kDeg);
    Crowd m = c;
    for (auto& s : m.states) {
      s.position.y = -s.position.y;
      s.heading.y = -s.heading.y;
    }
    for (auto& p : m.params) p.goal.y = -p.goal.y;
    const std::vector<Obstacle> wall{{{-4, 9}, {4, 9.5}}};
    const std::vector<Obstacle> mirrored_wall{{{-4, -9}, {4, -9.5}}};
    const RolloutResult a = rollout(c.states, c.params, wall, SimConfig{});
    const RolloutResult b = rollout(m.states, m.params, mirrored_wall, SimConfig{});
    for (std::size_t i = 0; i < c.states.size(); ++i) {
      for (std::size_t t = 0; t < 20; ++t) {
        EXPECT_NEAR(a.trajectories.positions[i][t].x, b.trajectories.positions[i][t].x, 1e-9);
        EXPECT_NEAR(a.trajectories.positions[i][t].y, -b.trajectories.positions[i][t].y, 1e-9);
      }
    }
  }
}

TEST(RolloutTest, FullFovCrowdsStayApart) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Crowd c = random_crowd(100 + seed, 12, std::numbers::pi);
    const RolloutResult r = rollout(c.states, c.params, {}, SimConfig{});
    const auto& pos = r.trajectories.positions;
    for (std::size_t t = 0; t < 20; ++t) {
      for (std::size_t i = 0; i < pos.size(); ++i) {
        for (std::size_t j = i + 1; j < pos.size(); ++j) {
          ASSERT_GE(distance(pos[i][t], pos[j][t]), 0.95 * 0.6) << "seed " << seed << " t " << t;
        }
      }
    }
  }
}

TEST(RolloutTest, SpeedNeverExceedsMax) {
  const Crowd c = random_crowd(9, 16, 105 * kDeg);
  World w = make_world(c.states, c.params, SimConfig{});
  for (int t = 0; t < 20; ++t) {
    w = step(w, {}, SimConfig{}).world;
    for (std::size_t i = 0; i < w.states.size(); ++i) {
      EXPECT_LE(norm(w.states[i].velocity), w.params[i].max_speed + 1e-9);
      EXPECT_NEAR(norm(w.states[i].heading), 1.0, 1e-12);
    }
  }
}

TEST(RolloutTest, InvalidParamsRejected) {
  std::vector<AgentState> s{facing({0, 0}, {1, 0})};
  std::vector<AgentParams> p{params_for(0, {1, 0})};
  p[0].radius = 0.0;
  EXPECT_THROW(rollout(s, p, {}, SimConfig{}), Error);
  SimConfig bad;
  bad.total_steps = 19;
  p[0].radius = 0.3;
  EXPECT_THROW(rollout(s, p, {}, bad), Error);
}
