#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "causal_crowds/dataset_io.hpp"
#include "causal_crowds/learn/features.hpp"
#include "causal_crowds/learn/losses.hpp"
#include "causal_crowds/learn/model.hpp"
#include "causal_crowds/metrics.hpp"
#include "causal_crowds/parallel.hpp"

namespace causal_crowds::learn {

enum class TrainMode { Baseline, Augment, Contrast, Ranking };

constexpr std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Baseline: return "baseline";
    case TrainMode::Augment: return "augment";
    case TrainMode::Contrast: return "contrast";
    case TrainMode::Ranking: return "ranking";
  }
  return "?";
}

inline TrainMode train_mode_from_string(std::string_view s) {
  for (auto m : {TrainMode::Baseline, TrainMode::Augment, TrainMode::Contrast, TrainMode::Ranking}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown training mode '" + std::string(s) + "'");
}

struct ToyModel {
  Params params;
  Normalizer normalizer;
  bool operator==(const ToyModel&) const = default;
};

inline ToyModel init_model(const Normalizer& n, std::uint64_t seed, const ModelDims& dims = {}) {
  return {init_params(dims, seed), n};
}

struct TrainConfig {
  TrainMode mode = TrainMode::Baseline;
  int epochs = 20;
  double learning_rate = 1e-2;
  double clip_norm = 5.0;
  std::size_t batch_size = 16;
  int pairs_per_scene = 4;
  std::uint64_t seed = 0;
  LossConfig loss;
  CausalThresholds thresholds;
  unsigned threads = 1;  // sample preparation only; results do not depend on it
};

inline void validate(const TrainConfig& c) {
  require(c.epochs >= 0, "epochs must be non-negative");
  require(c.learning_rate > 0.0, "learning rate must be positive");
  require(c.clip_norm > 0.0, "clip norm must be positive");
  require(c.batch_size > 0, "batch size must be positive");
  require(c.pairs_per_scene > 0, "pairs per scene must be positive");
  validate(c.loss);
  validate(c.thresholds);
}

/// A model input with the frame and constant-velocity baseline it was built in.
struct EncodedView {
  Frame frame;
  Eigen::VectorXd x;  // normalized
  Eigen::VectorXd cv;
};

inline EncodedView encode(const SceneRecord& r, const Normalizer& n) {
  const Frame f = ego_frame(r);
  return {f, n.apply(raw_features(r, f)), cv_local(r, f)};
}

struct NeighborSample {
  std::uint32_t id = 0;
  double effect = 0.0;
  Category category = Category::NonCausal;
  Eigen::VectorXd x;  // normalized input of the world without this neighbour
  Frame frame;
  Eigen::VectorXd cv;
};

struct SceneSample {
  const SceneRecord* record = nullptr;
  Frame frame;
  Eigen::VectorXd x;  // normalized factual input
  Eigen::VectorXd cv;
  Eigen::VectorXd target;
  std::vector<NeighborSample> neighbors;
  std::vector<std::uint32_t> noncausal;
};

inline Normalizer fit_normalizer(std::span<const SceneRecord> records) {
  std::vector<Eigen::VectorXd> raws;
  raws.reserve(records.size());
  for (const auto& r : records) raws.push_back(raw_features(r, ego_frame(r)));
  return fit_normalizer(std::span<const Eigen::VectorXd>(raws));
}

inline SceneSample make_sample(const SceneRecord& r, const Normalizer& n) {
  SceneSample s;
  s.record = &r;
  s.frame = ego_frame(r);
  s.x = n.apply(raw_features(r, s.frame));
  s.cv = cv_local(r, s.frame);
  s.target = future_local(r, s.frame);
  for (const auto& a : r.annotations) {
    const std::uint32_t removed[] = {a.agent_id};
    auto v = encode(counterfactual_record(r, removed), n);
    s.neighbors.push_back({a.agent_id, a.effect, a.category, std::move(v.x), v.frame, std::move(v.cv)});
    if (a.category == Category::NonCausal) s.noncausal.push_back(a.agent_id);
  }
  return s;
}

/// Builds samples on `threads` workers; the result does not depend on the
/// thread count.
inline std::vector<SceneSample> make_samples(std::span<const SceneRecord> records, const Normalizer& n,
                                             unsigned threads = 1) {
  std::vector<SceneSample> out(records.size());
  parallel_for(records.size(), threads, [&](std::size_t i) { out[i] = make_sample(records[i], n); });
  return out;
}

// A batch with all random choices already made, so the loss is a pure
// function of the parameters.

struct TaskItem {
  Eigen::VectorXd x, cv, target;
};

struct ContrastItem {
  Eigen::VectorXd x, cv;
  Eigen::VectorXd positive;
  std::vector<Eigen::VectorXd> negatives;
};

struct RankGroup {
  Eigen::VectorXd x, cv;
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs;  // (lower effect, higher effect)
};

struct BatchPlan {
  std::vector<TaskItem> task;
  std::vector<ContrastItem> contrast;
  std::vector<RankGroup> rank;
};

inline BatchPlan plan_batch(std::span<const SceneSample* const> batch, const TrainConfig& cfg, const Normalizer& n,
                            Rng& rng) {
  BatchPlan plan;
  for (const SceneSample* s : batch) {
    plan.task.push_back({s->x, s->cv, s->target});
    if (cfg.mode == TrainMode::Augment && !s->noncausal.empty()) {
      // Drop a random non-empty subset of the non-causal neighbours.
      std::vector<std::uint32_t> dropped;
      while (dropped.empty()) {
        for (auto id : s->noncausal) {
          if (rng.bernoulli(0.5)) dropped.push_back(id);
        }
      }
      plan.task.push_back({n.apply(raw_features(*s->record, s->frame, dropped)), s->cv, s->target});
    }
    if (cfg.mode == TrainMode::Contrast) {
      std::vector<const NeighborSample*> causal;
      ContrastItem item{s->x, s->cv, {}, {}};
      for (const auto& nb : s->neighbors) {
        if (nb.effect > cfg.thresholds.eta) causal.push_back(&nb);
        if (nb.effect < cfg.thresholds.epsilon) item.negatives.push_back(nb.x);
      }
      if (!causal.empty() && !item.negatives.empty()) {
        const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(causal.size()) - 1);
        item.positive = causal[static_cast<std::size_t>(pick)]->x;
        plan.contrast.push_back(std::move(item));
      }
    }
    if (cfg.mode == TrainMode::Ranking && s->neighbors.size() >= 2) {
      RankGroup g{s->x, s->cv, {}};
      const auto k = static_cast<std::int64_t>(s->neighbors.size());
      for (int tries = 0; tries < 8 * cfg.pairs_per_scene && static_cast<int>(g.pairs.size()) < cfg.pairs_per_scene;
           ++tries) {
        const auto i = static_cast<std::size_t>(rng.uniform_int(0, k - 1));
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, k - 1));
        const auto& a = s->neighbors[i];
        const auto& b = s->neighbors[j];
        if (std::fabs(a.effect - b.effect) <= cfg.loss.margin) continue;
        if (a.effect < b.effect) {
          g.pairs.emplace_back(a.x, b.x);
        } else {
          g.pairs.emplace_back(b.x, a.x);
        }
      }
      if (!g.pairs.empty()) plan.rank.push_back(std::move(g));
    }
  }
  return plan;
}

struct BatchLoss {
  double task = 0.0;
  double causal = 0.0;
  double total = 0.0;
};

/// Task MSE plus alpha times the mode's regularizer; adds the gradient to
/// `grad` when given.
inline BatchLoss loss_and_gradient(const Params& w, const BatchPlan& plan, const TrainConfig& cfg, Params* grad) {
  BatchLoss out;
  const Eigen::VectorXd none;
  if (!plan.task.empty()) {
    const double scale = 1.0 / (static_cast<double>(plan.task.size()) * kFuture);
    for (const auto& t : plan.task) {
      const Forward f = forward(w, t.x, t.cv);
      const Eigen::VectorXd err = f.y - t.target;
      out.task += err.squaredNorm() * scale;
      if (grad) backward(w, f, none, 2.0 * scale * err, *grad);
    }
  }
  const double alpha = cfg.loss.alpha;
  if (!plan.contrast.empty()) {
    const double scale = 1.0 / static_cast<double>(plan.contrast.size());
    for (const auto& c : plan.contrast) {
      const Forward f = forward(w, c.x, c.cv);
      const Forward fp = forward(w, c.positive, c.cv);
      const auto dpos = embedding_distance_grad(f.p, fp.p);
      std::vector<Forward> fn;
      std::vector<DistanceGrad> dneg;
      std::vector<double> dvals;
      for (const auto& x : c.negatives) {
        fn.push_back(forward(w, x, c.cv));
        dneg.push_back(embedding_distance_grad(f.p, fn.back().p));
        dvals.push_back(dneg.back().value);
      }
      const auto lg = contrastive_loss_grad(dpos.value, dvals, cfg.loss.tau);
      out.causal += lg.value * scale;
      if (!grad) continue;
      const double k = alpha * scale;
      Eigen::VectorXd dp_f = k * lg.d_positive * dpos.da;
      backward(w, fp, k * lg.d_positive * dpos.db, none, *grad);
      for (std::size_t i = 0; i < fn.size(); ++i) {
        dp_f += k * lg.d_negatives[i] * dneg[i].da;
        backward(w, fn[i], k * lg.d_negatives[i] * dneg[i].db, none, *grad);
      }
      backward(w, f, dp_f, none, *grad);
    }
  }
  if (!plan.rank.empty()) {
    std::size_t pairs = 0;
    for (const auto& g : plan.rank) pairs += g.pairs.size();
    const double scale = 1.0 / static_cast<double>(pairs);
    for (const auto& g : plan.rank) {
      const Forward f = forward(w, g.x, g.cv);
      Eigen::VectorXd dp_f = Eigen::VectorXd::Zero(f.p.size());
      for (const auto& [xi, xj] : g.pairs) {
        const Forward fi = forward(w, xi, g.cv);
        const Forward fj = forward(w, xj, g.cv);
        const auto di = embedding_distance_grad(f.p, fi.p);
        const auto dj = embedding_distance_grad(f.p, fj.p);
        out.causal += ranking_loss(di.value, dj.value, cfg.loss.margin) * scale;
        const double slope = ranking_loss_slope(di.value, dj.value, cfg.loss.margin);
        if (!grad || slope == 0.0) continue;
        const double k = alpha * scale * slope;
        dp_f += k * (di.da - dj.da);
        backward(w, fi, k * di.db, none, *grad);
        backward(w, fj, -k * dj.db, none, *grad);
      }
      if (grad) backward(w, f, dp_f, none, *grad);
    }
  }
  out.total = combined_loss(out.task, out.causal, alpha);
  return out;
}

struct EpochLog {
  int epoch = 0;
  double task_loss = 0.0;
  double causal_loss = 0.0;
  double ade = 0.0;
  double ace = 0.0;
};

struct SampleScores {
  double ade = 0.0;
  double ace = 0.0;
};

/// ADE of the factual prediction and ACE over all annotated neighbours,
/// averaged within scene and then across scenes.
inline SampleScores score_samples(const Params& w, std::span<const SceneSample> samples) {
  SampleScores s;
  std::size_t ace_scenes = 0;
  for (const auto& smp : samples) {
    const Eigen::VectorXd y = forward(w, smp.x, smp.cv).y;
    double dist = 0.0;
    for (int k = 0; k < kFuture; ++k) dist += (y.segment<2>(2 * k) - smp.target.segment<2>(2 * k)).norm();
    s.ade += dist / kFuture;
    if (smp.neighbors.empty()) continue;
    const auto path = to_world_path(y, smp.frame);
    double err = 0.0;
    for (const auto& nb : smp.neighbors) {
      const auto cf = to_world_path(forward(w, nb.x, nb.cv).y, nb.frame);
      err += std::fabs(mean_pointwise_distance(path, cf) - nb.effect);
    }
    s.ace += err / static_cast<double>(smp.neighbors.size());
    ++ace_scenes;
  }
  if (!samples.empty()) s.ade /= static_cast<double>(samples.size());
  if (ace_scenes > 0) s.ace /= static_cast<double>(ace_scenes);
  return s;
}

struct TrainResult {
  ToyModel model;
  std::vector<EpochLog> log;
};

/// Normalizer and encoded samples of a training split; reusable across
/// modes and seeds.
struct TrainingSet {
  Normalizer normalizer;
  std::vector<SceneSample> samples;
};

inline TrainingSet prepare_training_set(std::span<const SceneRecord> records, unsigned threads = 1) {
  require(!records.empty(), "training needs at least one scene");
  TrainingSet t;
  t.normalizer = fit_normalizer(records);
  t.samples = make_samples(records, t.normalizer, threads);
  return t;
}

inline TrainResult train_toy(const TrainingSet& set, const TrainConfig& cfg) {
  validate(cfg);
  require(!set.samples.empty(), "training needs at least one scene");
  TrainResult out;
  out.model = init_model(set.normalizer, cfg.seed);
  const auto& samples = set.samples;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Params& w = out.model.params;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(hash_combine({cfg.seed, static_cast<std::uint64_t>(epoch), 0xe90cull}));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const SceneSample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        batch.push_back(&samples[order[i]]);
      }
      const BatchPlan plan = plan_batch(batch, cfg, out.model.normalizer, rng);
      Params grad = Params::zeros(w.dims());
      const BatchLoss loss = loss_and_gradient(w, plan, cfg, &grad);
      Eigen::VectorXd g = grad.flatten();
      if (!std::isfinite(loss.total) || !g.allFinite()) {
        throw Error(ErrorCode::DivergedLoss, "loss diverged in epoch " + std::to_string(epoch));
      }
      const double gn = g.norm();
      if (gn > cfg.clip_norm) g *= cfg.clip_norm / gn;
      w = Params::unflatten(w.dims(), w.flatten() - cfg.learning_rate * g);
      log.task_loss += loss.task;
      log.causal_loss += loss.causal;
      ++batches;
    }
    log.task_loss /= static_cast<double>(batches);
    log.causal_loss /= static_cast<double>(batches);
    const auto scores = score_samples(w, samples);
    log.ade = scores.ade;
    log.ace = scores.ace;
    out.log.push_back(log);
  }
  return out;
}

inline TrainResult train_toy(std::span<const SceneRecord> records, const TrainConfig& cfg) {
  validate(cfg);
  require(!records.empty(), "training needs at least one scene");
  if (cfg.epochs == 0) return {init_model(fit_normalizer(records), cfg.seed), {}};
  return train_toy(prepare_training_set(records, cfg.threads), cfg);
}

inline std::string training_log_csv(std::span<const EpochLog> log) {
  std::string out = "epoch,task_loss,causal_loss,ade,ace\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + "," + format_number(e.task_loss) + "," + format_number(e.causal_loss) + "," +
           format_number(e.ade) + "," + format_number(e.ace) + "\n";
  }
  return out;
}

/// Factual, singleton-removal and all-non-causal-removal predictions. Each
/// counterfactual is predicted from the history observed in its own world.
inline PredictionSet predict_toy(const ToyModel& m, const SceneRecord& r) {
  if (m.params.dims().input != kInputDim || m.params.dims().output != kOutputDim) {
    throw Error(ErrorCode::DimensionMismatch, "model dimensions do not match the featurizer");
  }
  auto predict = [&](std::span<const std::uint32_t> removed) {
    const auto v = encode(counterfactual_record(r, removed), m.normalizer);
    return to_world_path(forward(m.params, v.x, v.cv).y, v.frame);
  };
  PredictionSet p;
  p.scene_id = r.scene_id;
  p.factual = predict({});
  for (const auto& a : r.annotations) {
    const std::uint32_t removed[] = {a.agent_id};
    p.counterfactual[a.agent_id] = predict(removed);
  }
  p.all_noncausal = predict(noncausal_ids(r.annotations));
  return p;
}

/// Rank correlation between embedding distance and true effect, pooled over
/// all annotated neighbours.
inline double embedding_effect_spearman(const ToyModel& m, std::span<const SceneRecord> records) {
  std::vector<double> d, e;
  for (const auto& smp : make_samples(records, m.normalizer)) {
    const Eigen::VectorXd p = forward(m.params, smp.x, smp.cv).p;
    for (const auto& nb : smp.neighbors) {
      d.push_back(embedding_distance(p, forward(m.params, nb.x, smp.cv).p));
      e.push_back(nb.effect);
    }
  }
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
      i = j + 1;
    }
    return r;
  };
  const auto rd = ranks(d), re = ranks(e);
  const double n = static_cast<double>(rd.size());
  if (n < 2) return 0.0;
  const double md = std::accumulate(rd.begin(), rd.end(), 0.0) / n;
  const double me = std::accumulate(re.begin(), re.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rd.size(); ++i) {
    sxy += (rd[i] - md) * (re[i] - me);
    sxx += (rd[i] - md) * (rd[i] - md);
    syy += (re[i] - me) * (re[i] - me);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Fraction of same-scene pairs with 𝓔_i + gap < 𝓔_j whose embedding
/// distances are ordered the same way.
inline double ordering_fraction(const ToyModel& m, std::span<const SceneRecord> records, double gap = 0.05) {
  std::size_t total = 0, ordered = 0;
  for (const auto& smp : make_samples(records, m.normalizer)) {
    const Eigen::VectorXd p = forward(m.params, smp.x, smp.cv).p;
    std::vector<double> d;
    for (const auto& nb : smp.neighbors) d.push_back(embedding_distance(p, forward(m.params, nb.x, smp.cv).p));
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t j = 0; j < d.size(); ++j) {
        if (smp.neighbors[i].effect + gap < smp.neighbors[j].effect) {
          ++total;
          if (d[i] < d[j]) ++ordered;
        }
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(ordered) / static_cast<double>(total);
}

}  // namespace causal_crowds::learn
