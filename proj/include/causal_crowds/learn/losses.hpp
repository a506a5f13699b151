#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "causal_crowds/error.hpp"

namespace causal_crowds::learn {

struct LossConfig {
  double tau = 0.1;      // contrastive temperature
  double margin = 1e-3;  // ranking margin
  double alpha = 1000.0;  // weight of the causal term
};

inline void validate(const LossConfig& c) {
  require(c.tau > 0.0, "tau must be positive");
  require(c.margin > 0.0, "margin must be positive");
  require(c.alpha >= 0.0, "alpha must be non-negative");
}

inline constexpr double kMinEmbeddingNorm = 1e-12;

/// Cosine distance 1 − cos(a, b), in [0, 2].
inline double embedding_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na <= kMinEmbeddingNorm || nb <= kMinEmbeddingNorm) {
    throw Error(ErrorCode::ZeroNormEmbedding, "embedding norm too small for a cosine distance");
  }
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "embedding sizes differ");
  return std::clamp(1.0 - a.dot(b) / (na * nb), 0.0, 2.0);
}

struct DistanceGrad {
  double value;
  Eigen::VectorXd da, db;
};

inline DistanceGrad embedding_distance_grad(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na <= kMinEmbeddingNorm || nb <= kMinEmbeddingNorm) {
    throw Error(ErrorCode::ZeroNormEmbedding, "embedding norm too small for a cosine distance");
  }
  const double c = a.dot(b) / (na * nb);
  return {1.0 - c, -(b / (na * nb) - c * a / (na * na)), -(a / (na * nb) - c * b / (nb * nb))};
}

struct ContrastiveGrad {
  double value;
  double d_positive;
  std::vector<double> d_negatives;
};

/// −log(exp(d⁺/τ) / (exp(d⁺/τ) + Σ exp(d_k/τ))) with its partials.
inline ContrastiveGrad contrastive_loss_grad(double d_positive, std::span<const double> d_negatives, double tau) {
  require(tau > 0.0, "tau must be positive");
  ContrastiveGrad g{0.0, 0.0, std::vector<double>(d_negatives.size(), 0.0)};
  if (d_negatives.empty()) return g;
  double top = d_positive / tau;
  for (double d : d_negatives) top = std::max(top, d / tau);
  double sum = std::exp(d_positive / tau - top);
  for (double d : d_negatives) sum += std::exp(d / tau - top);
  g.value = -(d_positive / tau - top) + std::log(sum);
  g.d_positive = (std::exp(d_positive / tau - top) / sum - 1.0) / tau;
  for (std::size_t k = 0; k < d_negatives.size(); ++k) {
    g.d_negatives[k] = std::exp(d_negatives[k] / tau - top) / sum / tau;
  }
  return g;
}

inline double contrastive_loss(double d_positive, std::span<const double> d_negatives, double tau) {
  return contrastive_loss_grad(d_positive, d_negatives, tau).value;
}

/// Hinge max(0, d_i − d_j + m) for a pair with 𝓔_i < 𝓔_j.
inline double ranking_loss(double d_i, double d_j, double margin) { return std::max(0.0, d_i - d_j + margin); }

/// Partial of the ranking hinge with respect to d_i (the d_j partial is its negative).
inline double ranking_loss_slope(double d_i, double d_j, double margin) { return d_i - d_j + margin > 0.0 ? 1.0 : 0.0; }

inline double combined_loss(double task_loss, double causal_loss, double alpha) {
  return task_loss + alpha * causal_loss;
}

}  // namespace causal_crowds::learn
