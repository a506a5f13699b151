#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "causal_crowds/learn/model_io.hpp"
#include "causal_crowds/learn/train.hpp"
#include "causal_crowds/predictors.hpp"

using namespace causal_crowds;
using namespace causal_crowds::learn;

namespace {

const std::vector<SceneRecord>& records() {
  static const auto r = generate_scenes(default_split_spec(Split::ID, 24, 71));
  return r;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

const ModelDims kSmall{kInputDim, 6, 5, 3, kOutputDim};

BatchPlan small_plan(TrainMode mode, const Normalizer& n, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.mode = mode;
  std::vector<const SceneSample*> batch;
  static std::vector<SceneSample> samples;
  samples = make_samples(std::span(records()).first(6), n);
  for (const auto& s : samples) batch.push_back(&s);
  Rng rng(seed);
  return plan_batch(batch, cfg, n, rng);
}

double relative_gradient_error(TrainMode mode) {
  const auto n = fit_normalizer(std::span<const SceneRecord>(records()));
  const BatchPlan plan = small_plan(mode, n, 5);
  TrainConfig cfg;
  cfg.mode = mode;
  Params w = init_params(kSmall, 3);
  Rng rng(9);
  for (Eigen::Index i = 0; i < w.Wd.size(); ++i) w.Wd.data()[i] = 0.1 * rng.normal();
  Params g = Params::zeros(kSmall);
  loss_and_gradient(w, plan, cfg, &g);
  const Eigen::VectorXd theta = w.flatten();
  const Eigen::VectorXd analytic = g.flatten();
  Eigen::VectorXd numeric(theta.size());
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const double lp = loss_and_gradient(Params::unflatten(kSmall, tp), plan, cfg, nullptr).total;
    const double lm = loss_and_gradient(Params::unflatten(kSmall, tm), plan, cfg, nullptr).total;
    numeric[i] = (lp - lm) / (2 * h);
  }
  return (analytic - numeric).norm() / std::max(1e-12, numeric.norm());
}

}  // namespace

TEST(EmbeddingDistance, Examples) {
  EXPECT_NEAR(embedding_distance(vec({1, 2}), vec({1, 2})), 0.0, 1e-15);
  EXPECT_NEAR(embedding_distance(vec({1, 2}), vec({-2, -4})), 2.0, 1e-15);
  EXPECT_NEAR(embedding_distance(vec({1, 0}), vec({0, 3})), 1.0, 1e-15);
  EXPECT_THROW(embedding_distance(vec({0, 0}), vec({1, 0})), Error);
}

TEST(EmbeddingDistance, ScaleInvariant) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd a(4), b(4);
    for (int i = 0; i < 4; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    const double s = rng.uniform(0.1, 10.0);
    EXPECT_NEAR(embedding_distance(a, b), embedding_distance(s * a, b), 1e-12);
    const double d = embedding_distance(a, b);
    EXPECT_GE(d, -1e-15);
    EXPECT_LE(d, 2.0 + 1e-15);
  }
}

TEST(Losses, ContrastiveExamples) {
  const double one[] = {0.5};
  EXPECT_NEAR(contrastive_loss(0.5, one, 0.1), std::log(2.0), 1e-12);
  const double zero[] = {0.0};
  EXPECT_NEAR(contrastive_loss(1.0, zero, 0.1), 4.5398899e-5, 1e-10);
  EXPECT_EQ(contrastive_loss(0.3, {}, 0.1), 0.0);
  // Stable when the logits are large.
  const double big[] = {2.0, 2.0};
  EXPECT_NEAR(contrastive_loss(2.0, big, 1e-3), std::log(3.0), 1e-12);
}

TEST(Losses, ContrastiveGradientMatchesDifference) {
  const double neg[] = {0.2, 0.7, 1.1};
  const auto g = contrastive_loss_grad(0.4, neg, 0.1);
  const double h = 1e-6;
  EXPECT_NEAR(g.d_positive, (contrastive_loss(0.4 + h, neg, 0.1) - contrastive_loss(0.4 - h, neg, 0.1)) / (2 * h), 1e-6);
  for (std::size_t k = 0; k < 3; ++k) {
    double up[3] = {0.2, 0.7, 1.1}, dn[3] = {0.2, 0.7, 1.1};
    up[k] += h;
    dn[k] -= h;
    EXPECT_NEAR(g.d_negatives[k], (contrastive_loss(0.4, up, 0.1) - contrastive_loss(0.4, dn, 0.1)) / (2 * h), 1e-6);
  }
}

TEST(Losses, RankingExamples) {
  EXPECT_EQ(ranking_loss(0.2, 0.5, 1e-3), 0.0);
  EXPECT_NEAR(ranking_loss(0.5, 0.2, 1e-3), 0.301, 1e-12);
  EXPECT_NEAR(ranking_loss(0.3, 0.3, 1e-3), 1e-3, 1e-15);
  EXPECT_EQ(ranking_loss_slope(0.2, 0.5, 1e-3), 0.0);
  EXPECT_EQ(ranking_loss_slope(0.5, 0.2, 1e-3), 1.0);
  EXPECT_NEAR(combined_loss(1.0, 0.002, 1000.0), 3.0, 1e-12);
}

TEST(Losses, ConfigValidation) {
  LossConfig c;
  EXPECT_NO_THROW(validate(c));
  c.tau = 0.0;
  EXPECT_THROW(validate(c), Error);
}

TEST(Features, Dimensions) {
  const auto& r = records().front();
  const Frame f = ego_frame(r);
  const auto x = raw_features(r, f);
  EXPECT_EQ(x.size(), kInputDim);
  // Last observed ego position is the origin.
  EXPECT_NEAR(x[2 * (kHistory - 1)], 0.0, 1e-12);
  EXPECT_NEAR(x[2 * (kHistory - 1) + 1], 0.0, 1e-12);
  SceneRecord bad = r;
  bad.scene.config.future_steps = 10;
  EXPECT_THROW(ego_frame(bad), Error);
}

TEST(Features, RemovedAgentVanishesAndSlotsStayZero) {
  const auto& r = records().front();
  const Frame f = ego_frame(r);
  std::vector<std::uint32_t> all;
  for (const auto& a : r.annotations) all.push_back(a.agent_id);
  const auto x = raw_features(r, f, all);
  EXPECT_TRUE(x.tail(kInputDim - kTrackFeatures).isZero(0.0));
  const auto n = fit_normalizer(std::span<const SceneRecord>(records()));
  EXPECT_TRUE(n.apply(x).tail(kInputDim - kTrackFeatures).isZero(0.0));
}

TEST(Features, NeighbourOrderIgnoresAgentIndexing) {
  // Swapping two non-ego agents in the record leaves the features unchanged.
  SceneRecord r = records().front();
  ASSERT_GE(r.scene.params.size(), 3u);
  const auto before = raw_features(r, ego_frame(r));
  std::swap(r.trajectories.positions[1], r.trajectories.positions[2]);
  std::swap(r.scene.params[1], r.scene.params[2]);
  EXPECT_EQ(raw_features(r, ego_frame(r)), before);
}

TEST(Features, LocalFrameRoundTrip) {
  const auto& r = records()[3];
  const Frame f = ego_frame(r);
  const auto path = to_world_path(future_local(r, f), f);
  for (int k = 0; k < kFuture; ++k) {
    EXPECT_NEAR(path[k].x, r.trajectories.positions[0][kHistory + k].x, 1e-9);
    EXPECT_NEAR(path[k].y, r.trajectories.positions[0][kHistory + k].y, 1e-9);
  }
}

TEST(Model, UntrainedModelIsConstantVelocity) {
  const auto n = fit_normalizer(std::span<const SceneRecord>(records()));
  const ToyModel m = init_model(n, 1);
  for (const auto& r : records()) {
    const auto p = predict_toy(m, r);
    const auto cv = constant_velocity_future(r);
    for (int k = 0; k < kFuture; ++k) {
      EXPECT_NEAR(p.factual[k].x, cv[k].x, 1e-9);
      EXPECT_NEAR(p.factual[k].y, cv[k].y, 1e-9);
    }
    EXPECT_EQ(p.counterfactual.size(), r.annotations.size());
  }
}

TEST(Model, ProjectionHeadUnusedByTaskLoss) {
  const auto n = fit_normalizer(std::span<const SceneRecord>(records()));
  const BatchPlan plan = small_plan(TrainMode::Baseline, n, 1);
  Params w = init_params(kSmall, 4);
  Params g = Params::zeros(kSmall);
  TrainConfig cfg;
  loss_and_gradient(w, plan, cfg, &g);
  EXPECT_TRUE(g.Wp.isZero(0.0));
  EXPECT_TRUE(g.bp.isZero(0.0));
  EXPECT_FALSE(g.Wd.isZero(0.0));
}

TEST(Model, GradientMatchesFiniteDifferences) {
  for (auto mode : {TrainMode::Baseline, TrainMode::Augment, TrainMode::Contrast, TrainMode::Ranking}) {
    EXPECT_LT(relative_gradient_error(mode), 1e-4) << to_string(mode);
  }
}

TEST(Model, RankingHingeIsFlatWhenOrdered) {
  // A pair already ordered beyond the margin contributes neither loss nor gradient.
  const auto n = fit_normalizer(std::span<const SceneRecord>(records()));
  const auto samples = make_samples(std::span(records()).first(1), n);
  const Params w = init_params(kSmall, 8);
  const auto& s = samples.front();
  ASSERT_GE(s.neighbors.size(), 2u);
  const Eigen::VectorXd p = forward(w, s.x, s.cv).p;
  const auto& a = s.neighbors[0];
  const auto& b = s.neighbors[1];
  const double da = embedding_distance(p, forward(w, a.x, s.cv).p);
  const double db = embedding_distance(p, forward(w, b.x, s.cv).p);
  BatchPlan plan;
  RankGroup grp{s.x, s.cv, {}};
  if (da < db) {
    grp.pairs.emplace_back(a.x, b.x);
  } else {
    grp.pairs.emplace_back(b.x, a.x);
  }
  plan.rank.push_back(grp);
  TrainConfig cfg;
  cfg.loss.margin = 0.0;
  Params g = Params::zeros(kSmall);
  const auto loss = loss_and_gradient(w, plan, cfg, &g);
  if (da != db) {
    EXPECT_EQ(loss.causal, 0.0);
    EXPECT_TRUE(g.flatten().isZero(0.0));
  }
}

TEST(Train, ZeroEpochsLeavesInitialModel) {
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  const auto res = train_toy(records(), cfg);
  EXPECT_TRUE(res.log.empty());
  EXPECT_EQ(res.model, init_model(fit_normalizer(std::span<const SceneRecord>(records())), 5));
}

TEST(Train, DeterministicAndLearns) {
  for (auto mode : {TrainMode::Baseline, TrainMode::Augment, TrainMode::Contrast, TrainMode::Ranking}) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.epochs = 4;
    cfg.seed = 11;
    const auto a = train_toy(records(), cfg);
    const auto b = train_toy(records(), cfg);
    EXPECT_EQ(a.model, b.model) << to_string(mode);
    ASSERT_EQ(a.log.size(), 4u);
    for (const auto& e : a.log) {
      EXPECT_TRUE(std::isfinite(e.ade) && std::isfinite(e.ace));
    }
  }
}

TEST(Train, BaselineFitsTrainingSetBetterThanConstantVelocity) {
  const auto set = prepare_training_set(records());
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 3;
  const auto res = train_toy(set, cfg);
  const double before = score_samples(init_model(set.normalizer, 3).params, set.samples).ade;
  EXPECT_LT(res.log.back().ade, before);
  EXPECT_EQ(res.model, train_toy(records(), cfg).model);
}

TEST(Train, DivergenceIsReported) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e300;
  EXPECT_THROW(
      {
        try {
          train_toy(records(), cfg);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::DivergedLoss);
          throw;
        }
      },
      Error);
}

TEST(Train, ModeNames) {
  for (auto mode : {TrainMode::Baseline, TrainMode::Augment, TrainMode::Contrast, TrainMode::Ranking}) {
    EXPECT_EQ(train_mode_from_string(to_string(mode)), mode);
  }
  EXPECT_THROW(train_mode_from_string("nope"), Error);
}

TEST(ModelIo, RoundTripIsExact) {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.mode = TrainMode::Ranking;
  const auto m = train_toy(records(), cfg).model;
  const auto text = serialize_model(m);
  EXPECT_EQ(parse_model(text), m);
  EXPECT_EQ(serialize_model(parse_model(text)), text);
}

TEST(ModelIo, RejectsBadFiles) {
  const auto text = serialize_model(init_model(Normalizer{}, 1));
  EXPECT_THROW(parse_model("garbage\n"), Error);
  std::string v2 = text;
  v2.replace(v2.find(" 1\n"), 3, " 2\n");
  EXPECT_THROW(parse_model(v2), Error);
  std::string dims = text;
  dims.replace(dims.find("dims 152"), 8, "dims 151");
  try {
    parse_model(dims);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  EXPECT_THROW(parse_model(text.substr(0, text.size() / 2)), Error);
}

TEST(Probes, SpearmanAndOrderingInRange) {
  const auto m = init_model(fit_normalizer(std::span<const SceneRecord>(records())), 2);
  const double rho = embedding_effect_spearman(m, records());
  EXPECT_GE(rho, -1.0);
  EXPECT_LE(rho, 1.0);
  const double frac = ordering_fraction(m, records());
  EXPECT_GE(frac, 0.0);
  EXPECT_LE(frac, 1.0);
}
