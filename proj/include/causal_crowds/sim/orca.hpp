#pragma once

// Optimal reciprocal collision avoidance: half-plane construction for agent
// pairs and static segments, plus the 2D linear programs that pick a velocity
// from the resulting constraint set. The LP follows the classic randomized
// incremental scheme (the caller fixes the constraint order).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "causal_crowds/error.hpp"
#include "causal_crowds/sim/types.hpp"
#include "causal_crowds/vec2.hpp"

namespace causal_crowds::sim {

inline constexpr double kLpEpsilon = 1e-10;

/// Signed distance of v inside the permitted half-plane (negative = violated).
inline double signed_margin(const OrcaLine& line, const Vec2& v) {
  return det(line.direction, v - line.point);
}

struct OrcaConstruction {
  OrcaLine line;
  /// Smallest change of relative velocity that leaves the truncated velocity
  /// obstacle. The line passes through ego velocity + reciprocity * u.
  Vec2 u;
};

inline OrcaConstruction orca_construction(const AgentState& ego, const AgentParams& ego_params,
                                          const AgentState& other, const AgentParams& other_params,
                                          double time_horizon, double dt, double reciprocity) {
  const Vec2 relative_position = other.position - ego.position;
  if (abs_sq(relative_position) <= kCoincidentTolerance * kCoincidentTolerance) {
    throw Error(ErrorCode::CoincidentAgents, "agents " + std::to_string(ego_params.id) + " and " +
                                                 std::to_string(other_params.id) + " coincide");
  }
  const Vec2 relative_velocity = ego.velocity - other.velocity;
  const double dist_sq = abs_sq(relative_position);
  const double combined_radius = ego_params.radius + other_params.radius;
  const double combined_radius_sq = combined_radius * combined_radius;

  OrcaLine line;
  Vec2 u;

  if (dist_sq > combined_radius_sq) {
    const double inv_horizon = 1.0 / time_horizon;
    // Vector from the cutoff circle centre to the relative velocity.
    const Vec2 w = relative_velocity - inv_horizon * relative_position;
    const double w_length_sq = abs_sq(w);
    const double w_dot_p = dot(w, relative_position);

    if (w_dot_p < 0.0 && w_dot_p * w_dot_p > combined_radius_sq * w_length_sq) {
      // Closest boundary point lies on the cutoff circle.
      const double w_length = std::sqrt(w_length_sq);
      const Vec2 unit_w = w / w_length;
      line.direction = Vec2(unit_w.y, -unit_w.x);
      u = (combined_radius * inv_horizon - w_length) * unit_w;
    } else {
      // Closest boundary point lies on one of the legs.
      const double leg = std::sqrt(dist_sq - combined_radius_sq);
      if (det(relative_position, w) > 0.0) {
        line.direction = Vec2(relative_position.x * leg - relative_position.y * combined_radius,
                              relative_position.x * combined_radius + relative_position.y * leg) /
                         dist_sq;
      } else {
        line.direction = -Vec2(relative_position.x * leg + relative_position.y * combined_radius,
                               -relative_position.x * combined_radius + relative_position.y * leg) /
                         dist_sq;
      }
      u = dot(relative_velocity, line.direction) * line.direction - relative_velocity;
    }
  } else {
    // Already overlapping: resolve within one time step.
    const double inv_dt = 1.0 / dt;
    const Vec2 w = relative_velocity - inv_dt * relative_position;
    const double w_length = norm(w);
    const Vec2 unit_w = w_length > kLpEpsilon ? w / w_length : -normalize(relative_position);
    line.direction = Vec2(unit_w.y, -unit_w.x);
    u = (combined_radius * inv_dt - w_length) * unit_w;
  }

  line.point = ego.velocity + reciprocity * u;
  return {line, u};
}

inline OrcaLine compute_orca_line(const AgentState& ego, const AgentParams& ego_params,
                                  const AgentState& other, const AgentParams& other_params,
                                  double time_horizon, double dt, double reciprocity) {
  return orca_construction(ego, ego_params, other, other_params, time_horizon, dt, reciprocity).line;
}

namespace detail {

// One directed edge of a segment obstacle, viewed as a two-vertex polygon.
struct ObstacleEdge {
  Vec2 p1;
  Vec2 p2;
  Vec2 dir1;  // unit direction p1 -> p2
  Vec2 dir2;  // unit direction p2 -> p1
};

inline double dist_sq_point_segment(const Vec2& a, const Vec2& b, const Vec2& c) {
  const double r = dot(c - a, b - a) / abs_sq(b - a);
  if (r < 0.0) return abs_sq(c - a);
  if (r > 1.0) return abs_sq(c - b);
  return abs_sq(c - (a + r * (b - a)));
}

}  // namespace detail

/// Half-planes keeping the agent clear of static segments for `time_horizon`.
/// Segments beyond time_horizon * max_speed + radius are ignored. Lines come
/// out ordered by distance to the segment (ties by obstacle index).
inline std::vector<OrcaLine> obstacle_lines(const AgentState& agent, const AgentParams& params,
                                            std::span<const Obstacle> obstacles, double time_horizon) {
  using detail::ObstacleEdge;
  const double range = time_horizon * params.max_speed + params.radius;
  const double range_sq = range * range;
  const Vec2& position = agent.position;

  struct Candidate {
    double dist_sq;
    std::size_t index;
    ObstacleEdge edge;
  };
  std::vector<Candidate> candidates;
  for (std::size_t k = 0; k < obstacles.size(); ++k) {
    const Obstacle& o = obstacles[k];
    const double left_of = det(o.a - position, o.b - o.a);
    ObstacleEdge edge;
    if (left_of < 0.0) {
      edge = {o.a, o.b, normalize(o.b - o.a), normalize(o.a - o.b)};
    } else if (left_of > 0.0) {
      edge = {o.b, o.a, normalize(o.a - o.b), normalize(o.b - o.a)};
    } else {
      continue;  // collinear with the segment
    }
    const double d = detail::dist_sq_point_segment(edge.p1, edge.p2, position);
    if (d < range_sq) candidates.push_back({d, k, edge});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& l, const Candidate& r) { return l.dist_sq < r.dist_sq; });

  const double inv_horizon = 1.0 / time_horizon;
  const double radius = params.radius;
  const double radius_sq = radius * radius;
  std::vector<OrcaLine> lines;

  for (const Candidate& candidate : candidates) {
    const ObstacleEdge& e = candidate.edge;
    // Both vertices of a lone segment are convex; vertex 1's neighbour is
    // vertex 2 and vice versa.
    Vec2 v1 = e.p1;
    Vec2 v2 = e.p2;
    Vec2 v1_dir = e.dir1;
    Vec2 v2_dir = e.dir2;
    const Vec2 rel1 = v1 - position;
    const Vec2 rel2 = v2 - position;

    bool covered = false;
    for (const OrcaLine& l : lines) {
      if (det(inv_horizon * rel1 - l.point, l.direction) - inv_horizon * radius >= -kLpEpsilon &&
          det(inv_horizon * rel2 - l.point, l.direction) - inv_horizon * radius >= -kLpEpsilon) {
        covered = true;
        break;
      }
    }
    if (covered) continue;

    const double dist_sq1 = abs_sq(rel1);
    const double dist_sq2 = abs_sq(rel2);
    const Vec2 obstacle_vector = v2 - v1;
    const double s = dot(-rel1, obstacle_vector) / abs_sq(obstacle_vector);
    const double dist_sq_line = abs_sq(-rel1 - s * obstacle_vector);

    if (s < 0.0 && dist_sq1 <= radius_sq) {
      lines.push_back({Vec2{}, normalize(Vec2(-rel1.y, rel1.x))});
      continue;
    }
    if (s > 1.0 && dist_sq2 <= radius_sq) {
      if (det(rel2, v2_dir) >= 0.0) lines.push_back({Vec2{}, normalize(Vec2(-rel2.y, rel2.x))});
      continue;
    }
    if (s >= 0.0 && s <= 1.0 && dist_sq_line <= radius_sq) {
      lines.push_back({Vec2{}, -v1_dir});
      continue;
    }

    Vec2 left_leg;
    Vec2 right_leg;
    bool single_vertex = false;
    if (s < 0.0 && dist_sq_line <= radius_sq) {
      // Viewed obliquely: the near vertex defines both legs.
      single_vertex = true;
      v2 = v1;
      v2_dir = v1_dir;
      const double leg1 = std::sqrt(dist_sq1 - radius_sq);
      left_leg = Vec2(rel1.x * leg1 - rel1.y * radius, rel1.x * radius + rel1.y * leg1) / dist_sq1;
      right_leg = Vec2(rel1.x * leg1 + rel1.y * radius, -rel1.x * radius + rel1.y * leg1) / dist_sq1;
    } else if (s > 1.0 && dist_sq_line <= radius_sq) {
      single_vertex = true;
      v1 = v2;
      v1_dir = v2_dir;
      const double leg2 = std::sqrt(dist_sq2 - radius_sq);
      left_leg = Vec2(rel2.x * leg2 - rel2.y * radius, rel2.x * radius + rel2.y * leg2) / dist_sq2;
      right_leg = Vec2(rel2.x * leg2 + rel2.y * radius, -rel2.x * radius + rel2.y * leg2) / dist_sq2;
    } else {
      const double leg1 = std::sqrt(dist_sq1 - radius_sq);
      left_leg = Vec2(rel1.x * leg1 - rel1.y * radius, rel1.x * radius + rel1.y * leg1) / dist_sq1;
      const double leg2 = std::sqrt(dist_sq2 - radius_sq);
      right_leg = Vec2(rel2.x * leg2 + rel2.y * radius, -rel2.x * radius + rel2.y * leg2) / dist_sq2;
    }

    // For a lone segment the left neighbour of vertex 1 is the other end, whose
    // outgoing direction is -v1_dir; likewise for vertex 2.
    const Vec2 left_neighbor_dir = single_vertex ? (v1 == e.p1 ? e.dir2 : e.dir1) : e.dir2;
    bool left_foreign = false;
    bool right_foreign = false;
    if (det(left_leg, -left_neighbor_dir) >= 0.0) {
      left_leg = -left_neighbor_dir;
      left_foreign = true;
    }
    if (det(right_leg, v2_dir) <= 0.0) {
      right_leg = v2_dir;
      right_foreign = true;
    }

    const Vec2 left_cutoff = inv_horizon * (v1 - position);
    const Vec2 right_cutoff = inv_horizon * (v2 - position);
    const Vec2 cutoff_vector = right_cutoff - left_cutoff;
    const Vec2& velocity = agent.velocity;

    const double t = single_vertex ? 0.5 : dot(velocity - left_cutoff, cutoff_vector) / abs_sq(cutoff_vector);
    const double t_left = dot(velocity - left_cutoff, left_leg);
    const double t_right = dot(velocity - right_cutoff, right_leg);

    if ((t < 0.0 && t_left < 0.0) || (single_vertex && t_left < 0.0 && t_right < 0.0)) {
      const Vec2 unit_w = normalize(velocity - left_cutoff);
      lines.push_back({left_cutoff + radius * inv_horizon * unit_w, Vec2(unit_w.y, -unit_w.x)});
      continue;
    }
    if (t > 1.0 && t_right < 0.0) {
      const Vec2 unit_w = normalize(velocity - right_cutoff);
      lines.push_back({right_cutoff + radius * inv_horizon * unit_w, Vec2(unit_w.y, -unit_w.x)});
      continue;
    }

    constexpr double inf = std::numeric_limits<double>::infinity();
    const double dist_sq_cutoff = (t < 0.0 || t > 1.0 || single_vertex)
                                      ? inf
                                      : abs_sq(velocity - (left_cutoff + t * cutoff_vector));
    const double dist_sq_left = t_left < 0.0 ? inf : abs_sq(velocity - (left_cutoff + t_left * left_leg));
    const double dist_sq_right =
        t_right < 0.0 ? inf : abs_sq(velocity - (right_cutoff + t_right * right_leg));

    if (dist_sq_cutoff <= dist_sq_left && dist_sq_cutoff <= dist_sq_right) {
      const Vec2 direction = -v1_dir;
      lines.push_back({left_cutoff + radius * inv_horizon * perp(direction), direction});
      continue;
    }
    if (dist_sq_left <= dist_sq_right) {
      if (left_foreign) continue;
      lines.push_back({left_cutoff + radius * inv_horizon * perp(left_leg), left_leg});
      continue;
    }
    if (right_foreign) continue;
    const Vec2 direction = -right_leg;
    lines.push_back({right_cutoff + radius * inv_horizon * perp(direction), direction});
  }
  return lines;
}

namespace detail {

// Optimum on line `line_no` subject to lines [0, line_no) and the speed disc.
inline bool linear_program1(std::span<const OrcaLine> lines, std::size_t line_no, double radius,
                            const Vec2& opt_velocity, bool direction_opt, Vec2& result) {
  const OrcaLine& line = lines[line_no];
  const double dot_product = dot(line.point, line.direction);
  const double discriminant = dot_product * dot_product + radius * radius - abs_sq(line.point);
  if (discriminant < 0.0) return false;  // speed disc misses the line entirely

  const double sqrt_discriminant = std::sqrt(discriminant);
  double t_left = -dot_product - sqrt_discriminant;
  double t_right = -dot_product + sqrt_discriminant;

  for (std::size_t i = 0; i < line_no; ++i) {
    const double denominator = det(line.direction, lines[i].direction);
    const double numerator = det(lines[i].direction, line.point - lines[i].point);
    if (std::fabs(denominator) <= kLpEpsilon) {
      if (numerator < 0.0) return false;  // parallel and excluded
      continue;
    }
    const double t = numerator / denominator;
    if (denominator >= 0.0) {
      t_right = std::min(t_right, t);
    } else {
      t_left = std::max(t_left, t);
    }
    if (t_left > t_right) return false;
  }

  if (direction_opt) {
    result = dot(opt_velocity, line.direction) > 0.0 ? line.point + t_right * line.direction
                                                     : line.point + t_left * line.direction;
  } else {
    const double t = dot(line.direction, opt_velocity - line.point);
    result = line.point + std::clamp(t, t_left, t_right) * line.direction;
  }
  return true;
}

/// Returns the index of the first line that could not be satisfied, or
/// lines.size() on success. `result` holds the best point found so far.
inline std::size_t linear_program2(std::span<const OrcaLine> lines, double radius,
                                   const Vec2& opt_velocity, bool direction_opt, Vec2& result) {
  if (direction_opt) {
    result = opt_velocity * radius;
  } else if (abs_sq(opt_velocity) > radius * radius) {
    result = normalize(opt_velocity) * radius;
  } else {
    result = opt_velocity;
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) > 0.0) {
      const Vec2 previous = result;
      if (!linear_program1(lines, i, radius, opt_velocity, direction_opt, result)) {
        result = previous;
        return i;
      }
    }
  }
  return lines.size();
}

/// Minimises the largest violation over lines [hard_count, n) while keeping
/// lines [0, hard_count) as hard constraints, starting from the partial
/// solution of linear_program2 that failed at `begin_line`.
inline void linear_program3(std::span<const OrcaLine> lines, std::size_t hard_count,
                            std::size_t begin_line, double radius, Vec2& result) {
  double distance = 0.0;
  for (std::size_t i = begin_line; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) > distance) {
      std::vector<OrcaLine> projected(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(hard_count));
      for (std::size_t j = hard_count; j < i; ++j) {
        OrcaLine line;
        const double determinant = det(lines[i].direction, lines[j].direction);
        if (std::fabs(determinant) <= kLpEpsilon) {
          if (dot(lines[i].direction, lines[j].direction) > 0.0) continue;  // same direction
          line.point = 0.5 * (lines[i].point + lines[j].point);
        } else {
          line.point = lines[i].point +
                       (det(lines[j].direction, lines[i].point - lines[j].point) / determinant) *
                           lines[i].direction;
        }
        line.direction = normalize(lines[j].direction - lines[i].direction);
        projected.push_back(line);
      }
      const Vec2 previous = result;
      if (linear_program2(projected, radius, Vec2(-lines[i].direction.y, lines[i].direction.x), true,
                          result) < projected.size()) {
        // Only reachable through round-off; the current point is already
        // feasible for the projected program.
        result = previous;
      }
      distance = det(lines[i].direction, lines[i].point - result);
    }
  }
}

}  // namespace detail

/// Closest point to `v_pref` inside every half-plane and the disc |v| <= v_max,
/// or nullopt when that region is empty.
inline std::optional<Vec2> solve_lp2(std::span<const OrcaLine> lines, const Vec2& v_pref, double v_max) {
  require(v_max > 0.0, "v_max must be positive");
  Vec2 result;
  if (detail::linear_program2(lines, v_max, v_pref, false, result) < lines.size()) return std::nullopt;
  return result;
}

/// Velocity in the speed disc minimising the largest half-plane violation.
/// The first `hard_count` lines are treated as hard constraints. Among
/// minimax ties the result depends on `v_start` and on line order (earlier
/// lines win).
inline Vec2 solve_lp3(std::span<const OrcaLine> lines, double v_max, std::size_t hard_count = 0,
                      const Vec2& v_start = {}) {
  require(v_max > 0.0, "v_max must be positive");
  Vec2 result;
  const std::size_t fail = detail::linear_program2(lines, v_max, v_start, false, result);
  if (fail < lines.size()) detail::linear_program3(lines, hard_count, fail, v_max, result);
  return result;
}

/// lp2 with lp3 fallback, as used by the stepper.
inline Vec2 solve_velocity(std::span<const OrcaLine> lines, std::size_t hard_count, const Vec2& v_pref,
                           double v_max) {
  Vec2 result;
  const std::size_t fail = detail::linear_program2(lines, v_max, v_pref, false, result);
  if (fail < lines.size()) detail::linear_program3(lines, hard_count, fail, v_max, result);
  return result;
}

/// Largest violation max_i(-signed_margin) over lines (<= 0 when feasible).
inline double max_penetration(std::span<const OrcaLine> lines, const Vec2& v) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const OrcaLine& l : lines) worst = std::max(worst, -signed_margin(l, v));
  return worst;
}

}  // namespace causal_crowds::sim
