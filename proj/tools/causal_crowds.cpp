#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "causal_crowds/dataset_io.hpp"
#include "causal_crowds/learn/model_io.hpp"
#include "causal_crowds/learn/train.hpp"
#include "causal_crowds/metrics.hpp"
#include "causal_crowds/predictors.hpp"
#include "causal_crowds/scenario.hpp"

namespace fs = std::filesystem;
using namespace causal_crowds;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct GenerateArgs {
  std::string split = "id";
  std::size_t scenes = 100;
  std::uint64_t seed = 0;
  fs::path out;
  std::string branch = "from_start";
  double epsilon = 0.02;
  double eta = 0.1;
};

struct EvaluateArgs {
  fs::path data;
  fs::path predictions;
  fs::path out;
  std::string fig;
  std::size_t bootstrap = 2000;
};

struct TrainArgs {
  std::string mode = "baseline";
  fs::path data;
  int epochs = 20;
  std::uint64_t seed = 0;
  double lr = 1e-2;
  double clip = 5.0;
  std::size_t batch = 16;
  int pairs = 4;
  double tau = 0.1;
  double margin = 1e-3;
  double alpha = 1000.0;
  fs::path out = "model.txt";
  fs::path log;
  fs::path eval_ood;
};

struct PredictArgs {
  std::string model = "cv";
  fs::path data;
  fs::path out;
};

void print_summary(const SplitSummary& s) {
  std::printf("scenes      %zu\n", s.num_scenes);
  std::printf("non_causal  %.4f\n", s.non_causal);
  std::printf("direct      %.4f\n", s.direct);
  std::printf("indirect    %.4f\n", s.indirect);
  std::printf("ambiguous   %.4f\n", s.ambiguous);
  std::printf("total       %.4f\n", s.total);
}

int run_generate(const GenerateArgs& a, unsigned threads) {
  SplitSpec spec = default_split_spec(split_from_string(a.split), a.scenes, a.seed);
  spec.config.branch = io::branch_from(a.branch);
  spec.thresholds.epsilon = a.epsilon;
  spec.thresholds.eta = a.eta;
  validate(spec);
  const auto records = generate_scenes(spec, threads);
  const auto manifest = write_split(records, make_manifest(spec, records), a.out);
  print_summary(manifest.category_means);
  std::printf("digest      %s\n", manifest.digest.c_str());
  return kOk;
}

int run_evaluate(const EvaluateArgs& a, unsigned threads) {
  const auto split = read_split(a.data);
  const auto preds = read_predictions(a.predictions, split.records);
  const auto report = evaluate(split.records, preds, threads);
  const auto text = report_text(report);
  std::fputs(text.c_str(), stdout);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    io::write_file(a.out / "report.txt", text);
    io::write_file(a.out / "report.csv", report_csv(report));
  }
  if (a.fig == "joint") {
    const std::size_t ks[] = {0, 1, 2, 3};
    const auto curve = joint_curve(split.records, ks, split.manifest.thresholds, threads);
    const fs::path dir = a.out.empty() ? fs::path(".") : a.out;
    io::write_file(dir / "joint.csv", joint_curve_csv(curve));
    io::write_file(dir / "joint.svg", joint_curve_svg(curve, split.manifest.thresholds));
    for (const auto& p : curve) {
      std::printf("joint k=%zu mean_effect %.6f above_eta %.4f scenes %zu\n", p.k, p.mean_effect,
                  p.fraction_above_eta, p.scenes);
    }
    const auto b = bootstrap_mean_difference(curve[1].effects, curve[3].effects, a.bootstrap, 0.95, 0);
    std::printf("joint k=3 minus k=1 %.6f one-sided 95%% [%.6f, %.6f]\n", b.estimate, b.lower, b.upper);
  }
  return kOk;
}

int run_train(const TrainArgs& a, unsigned threads) {
  learn::TrainConfig cfg;
  cfg.mode = learn::train_mode_from_string(a.mode);
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  cfg.learning_rate = a.lr;
  cfg.clip_norm = a.clip;
  cfg.batch_size = a.batch;
  cfg.pairs_per_scene = a.pairs;
  cfg.loss = {a.tau, a.margin, a.alpha};
  cfg.threads = threads;
  learn::validate(cfg);
  const auto split = read_split(a.data);
  cfg.thresholds = split.manifest.thresholds;
  const auto result = learn::train_toy(split.records, cfg);
  learn::save_model(a.out, result.model);
  const fs::path log = a.log.empty() ? fs::path(a.out.string() + ".log.csv") : a.log;
  io::write_file(log, learn::training_log_csv(result.log));
  for (const auto& e : result.log) {
    std::printf("epoch %3d task %.6f causal %.6f ade %.6f ace %.6f\n", e.epoch, e.task_loss, e.causal_loss, e.ade,
                e.ace);
  }
  std::printf("model %s\nlog %s\n", a.out.c_str(), log.c_str());
  if (!a.eval_ood.empty()) {
    const auto ood = read_split(a.eval_ood);
    std::vector<PredictionSet> preds(ood.records.size());
    parallel_for(ood.records.size(), threads,
                 [&](std::size_t i) { preds[i] = learn::predict_toy(result.model, ood.records[i]); });
    const auto report = evaluate(ood.records, preds, threads);
    std::printf("ood %s\n", to_string(ood.manifest.split).data());
    std::fputs(report_text(report).c_str(), stdout);
  }
  return kOk;
}

int run_predict(const PredictArgs& a, unsigned threads) {
  const auto split = read_split(a.data);
  std::optional<learn::ToyModel> model;
  if (a.model != "cv" && a.model != "oracle") model = learn::load_model(a.model);
  std::vector<PredictionSet> preds(split.records.size());
  parallel_for(split.records.size(), threads, [&](std::size_t i) {
    const auto& r = split.records[i];
    if (a.model == "cv") {
      preds[i] = predict_constant_velocity(r);
    } else if (a.model == "oracle") {
      preds[i] = predict_oracle(r);
    } else {
      preds[i] = learn::predict_toy(*model, r);
    }
  });
  write_predictions(preds, a.out);
  std::size_t entries = 0;
  for (const auto& p : preds) entries += 1 + p.counterfactual.size();
  std::printf("scenes %zu entries %zu\n", preds.size(), entries);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual crowd simulation, causal annotation and evaluation."};
  app.require_subcommand(1);
  unsigned threads = 1;
  auto threads_opt = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "Worker threads (outputs do not depend on it)")
        ->envname("CAUSAL_CROWDS_THREADS")
        ->check(CLI::Range(1u, 1024u));
  };

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate and annotate a split");
  g->add_option("--split", gen.split, "id | ood_density | ood_context | ood_density_context")
      ->check(CLI::IsMember({"id", "ood_density", "ood_context", "ood_density_context"}));
  g->add_option("--scenes", gen.scenes, "Number of scenes")->check(CLI::Range(std::size_t{1}, std::size_t{10000000}));
  g->add_option("--seed", gen.seed, "Split seed");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--branch", gen.branch, "Counterfactual branch point: from_start | at_history_end")
      ->check(CLI::IsMember({"from_start", "at_history_end"}));
  g->add_option("--epsilon", gen.epsilon, "Non-causal threshold (m)");
  g->add_option("--eta", gen.eta, "Causal threshold (m)");
  threads_opt(g);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score a predictions file against a split");
  e->add_option("--data", ev.data, "Split directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--predictions", ev.predictions, "Predictions file")->required();
  e->add_option("--out", ev.out, "Directory for report.txt and report.csv");
  e->add_option("--fig", ev.fig, "Also emit a figure: joint")->check(CLI::IsMember({"joint"}));
  e->add_option("--bootstrap", ev.bootstrap, "Bootstrap resamples for --fig joint")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000000}));
  threads_opt(e);

  TrainArgs tr;
  auto* t = app.add_subcommand("train-toy", "Train the toy encoder/decoder");
  t->add_option("--mode", tr.mode, "baseline | augment | contrast | ranking")
      ->check(CLI::IsMember({"baseline", "augment", "contrast", "ranking"}));
  t->add_option("--data", tr.data, "Training split directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  t->add_option("--seed", tr.seed, "Initialization and sampling seed");
  t->add_option("--lr", tr.lr, "SGD step size")->check(CLI::PositiveNumber);
  t->add_option("--clip", tr.clip, "Gradient norm clip")->check(CLI::PositiveNumber);
  t->add_option("--batch", tr.batch, "Scenes per batch")->check(CLI::PositiveNumber);
  t->add_option("--pairs", tr.pairs, "Ranking pairs per scene")->check(CLI::PositiveNumber);
  t->add_option("--tau", tr.tau, "Contrastive temperature")->check(CLI::PositiveNumber);
  t->add_option("--margin", tr.margin, "Ranking margin")->check(CLI::PositiveNumber);
  t->add_option("--alpha", tr.alpha, "Causal loss weight")->check(CLI::NonNegativeNumber);
  t->add_option("--out", tr.out, "Model file");
  t->add_option("--log", tr.log, "Per-epoch log CSV (default: <out>.log.csv)");
  t->add_option("--eval-ood", tr.eval_ood, "Split directory to score after training")->check(CLI::ExistingDirectory);
  threads_opt(t);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict-toy", "Write predictions for a split");
  p->add_option("--model", pr.model, "cv | oracle | path to a trained model file");
  p->add_option("--data", pr.data, "Split directory")->required()->check(CLI::ExistingDirectory);
  p->add_option("--out", pr.out, "Predictions file")->required();
  threads_opt(p);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (g->parsed()) return run_generate(gen, threads);
    if (e->parsed()) return run_evaluate(ev, threads);
    if (t->parsed()) return run_train(tr, threads);
    if (p->parsed()) return run_predict(pr, threads);
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kFailure;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kFailure;
  }
  return kUsage;
}
