#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "causal_crowds/counterfactual.hpp"
#include "causal_crowds/dataset_io.hpp"
#include "causal_crowds/parallel.hpp"
#include "causal_crowds/random.hpp"
#include "causal_crowds/scenario.hpp"

namespace causal_crowds {

inline double ade(std::span<const Vec2> pred, std::span<const Vec2> truth) {
  if (pred.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "prediction and truth lengths differ");
  if (pred.empty()) throw Error(ErrorCode::LengthMismatch, "empty trajectory");
  return mean_pointwise_distance(pred, truth);
}

inline double fde(std::span<const Vec2> pred, std::span<const Vec2> truth) {
  if (pred.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "prediction and truth lengths differ");
  if (pred.empty()) throw Error(ErrorCode::LengthMismatch, "empty trajectory");
  return distance(pred.back(), truth.back());
}

/// Mean |Ê_i − 𝓔_i| over the annotated agents in scope, where Ê_i is the
/// distance between the factual and the agent-i-removed predictions. With a
/// category filter only that category counts; Ambiguous agents never enter a
/// filtered aggregate. Returns nullopt when no agent is in scope.
inline std::optional<double> ace(const PredictionSet& predictions, std::span<const CausalAnnotation> annotations,
                                 std::optional<Category> filter = std::nullopt) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& a : annotations) {
    if (filter && (a.category != *filter || a.category == Category::Ambiguous)) continue;
    const auto it = predictions.counterfactual.find(a.agent_id);
    if (it == predictions.counterfactual.end()) {
      throw Error(ErrorCode::MissingCounterfactual, "scene '" + predictions.scene_id + "' lacks a prediction without agent " +
                                                        std::to_string(a.agent_id));
    }
    const double estimate = mean_pointwise_distance(predictions.factual, it->second);
    sum += std::fabs(estimate - a.effect);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

/// Change in ADE when every non-causal agent is removed (signed).
inline double delta_noncausal(std::span<const Vec2> pred_factual, std::span<const Vec2> pred_removed,
                              std::span<const Vec2> truth_factual, std::span<const Vec2> truth_removed) {
  if (pred_removed.empty() || truth_removed.empty()) {
    throw Error(ErrorCode::MissingPair, "no prediction or truth for the perturbed scene");
  }
  return ade(pred_removed, truth_removed) - ade(pred_factual, truth_factual);
}

inline std::vector<std::uint32_t> noncausal_ids(std::span<const CausalAnnotation> annotations) {
  std::vector<std::uint32_t> ids;
  for (const auto& a : annotations) {
    if (a.category == Category::NonCausal) ids.push_back(a.agent_id);
  }
  return ids;
}

inline std::vector<Vec2> as_future(const SceneRecord& r) {
  const auto f = ego_future(r.trajectories, r.scene.config);
  return {f.begin(), f.end()};
}

/// Ego future once every non-causal agent is removed.
inline std::vector<Vec2> truth_without_noncausal(const SceneRecord& r) {
  const auto ids = noncausal_ids(r.annotations);
  if (ids.empty()) return as_future(r);
  const auto cf = simulate_counterfactual(r.scene, RemovalSpec{ids});
  const auto f = ego_future(cf.trajectories, r.scene.config);
  return {f.begin(), f.end()};
}

struct SceneMetrics {
  std::string scene_id;
  double ade = 0.0;
  double fde = 0.0;
  std::optional<double> ace, ace_nc, ace_dc, ace_ic, delta;
};

struct MetricsReport {
  std::size_t num_scenes = 0;
  double ade = 0.0;
  double fde = 0.0;
  std::optional<double> ace, ace_nc, ace_dc, ace_ic;
  std::optional<double> delta;      // signed mean
  std::optional<double> delta_abs;  // mean absolute
  double mean_effect = 0.0;         // ground truth, averaged like ace
  std::vector<SceneMetrics> scenes;
};

namespace detail {

struct Mean {
  double sum = 0.0;
  std::size_t n = 0;
  void add(std::optional<double> v) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  std::optional<double> get() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

}  // namespace detail

inline SceneMetrics score_scene(const SceneRecord& r, const PredictionSet& p, bool with_delta) {
  SceneMetrics m;
  m.scene_id = r.scene_id;
  const auto truth = as_future(r);
  m.ade = ade(p.factual, truth);
  m.fde = fde(p.factual, truth);
  m.ace = ace(p, r.annotations);
  m.ace_nc = ace(p, r.annotations, Category::NonCausal);
  m.ace_dc = ace(p, r.annotations, Category::DirectCausal);
  m.ace_ic = ace(p, r.annotations, Category::IndirectCausal);
  if (with_delta && !noncausal_ids(r.annotations).empty()) {
    if (!p.all_noncausal) {
      throw Error(ErrorCode::MissingPair, "scene '" + r.scene_id + "' lacks an all_noncausal prediction");
    }
    m.delta = delta_noncausal(p.factual, *p.all_noncausal, truth, truth_without_noncausal(r));
  }
  return m;
}

/// Scores predictions against a split. Per-scene values are averaged across
/// scenes; scenes without agents of a category do not enter that average.
/// Δ is reported when any prediction set carries an all_noncausal entry.
inline MetricsReport evaluate(std::span<const SceneRecord> records, std::span<const PredictionSet> predictions,
                              unsigned threads = 1) {
  std::unordered_map<std::string, const PredictionSet*> by_id;
  bool with_delta = false;
  for (const auto& p : predictions) {
    by_id.emplace(p.scene_id, &p);
    with_delta = with_delta || p.all_noncausal.has_value();
  }
  std::vector<const PredictionSet*> matched;
  for (const auto& r : records) {
    const auto it = by_id.find(r.scene_id);
    if (it == by_id.end()) throw Error(ErrorCode::UnknownScene, "no predictions for scene '" + r.scene_id + "'");
    matched.push_back(it->second);
  }
  std::vector<SceneMetrics> scored(records.size());
  parallel_for(records.size(), threads,
               [&](std::size_t i) { scored[i] = score_scene(records[i], *matched[i], with_delta); });
  MetricsReport rep;
  detail::Mean ade_m, fde_m, ace_m, nc_m, dc_m, ic_m, delta_m, delta_abs_m, effect_m;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto& m = scored[i];
    ade_m.add(m.ade);
    fde_m.add(m.fde);
    ace_m.add(m.ace);
    nc_m.add(m.ace_nc);
    dc_m.add(m.ace_dc);
    ic_m.add(m.ace_ic);
    delta_m.add(m.delta);
    if (m.delta) delta_abs_m.add(std::fabs(*m.delta));
    detail::Mean scene_effect;
    for (const auto& a : r.annotations) scene_effect.add(a.effect);
    effect_m.add(scene_effect.get());
    rep.scenes.push_back(std::move(m));
  }
  rep.num_scenes = records.size();
  rep.ade = ade_m.get().value_or(0.0);
  rep.fde = fde_m.get().value_or(0.0);
  rep.ace = ace_m.get();
  rep.ace_nc = nc_m.get();
  rep.ace_dc = dc_m.get();
  rep.ace_ic = ic_m.get();
  rep.delta = delta_m.get();
  rep.delta_abs = delta_abs_m.get();
  rep.mean_effect = effect_m.get().value_or(0.0);
  return rep;
}

inline std::string format_number(std::optional<double> v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

inline std::string report_text(const MetricsReport& r) {
  auto line = [](const char* key, std::optional<double> v) {
    char buf[64];
    if (v) {
      std::snprintf(buf, sizeof buf, "%-11s %.6f\n", key, *v);
    } else {
      std::snprintf(buf, sizeof buf, "%-11s n/a\n", key);
    }
    return std::string(buf);
  };
  std::string out = "scenes      " + std::to_string(r.num_scenes) + "\n";
  out += line("ade", r.ade);
  out += line("fde", r.fde);
  out += line("ace", r.ace);
  out += line("ace_nc", r.ace_nc);
  out += line("ace_dc", r.ace_dc);
  out += line("ace_ic", r.ace_ic);
  out += line("delta", r.delta);
  out += line("delta_abs", r.delta_abs);
  out += line("mean_effect", r.mean_effect);
  return out;
}

/// One row per scene plus a final ALL row; blank cells mean "not applicable".
inline std::string report_csv(const MetricsReport& r) {
  std::string out = "scene_id,ade,fde,ace,ace_nc,ace_dc,ace_ic,delta\n";
  auto row = [&](const std::string& id, double a, double f, std::optional<double> ace, std::optional<double> nc,
                 std::optional<double> dc, std::optional<double> ic, std::optional<double> delta) {
    out += id + "," + format_number(a) + "," + format_number(f) + "," + format_number(ace) + "," + format_number(nc) +
           "," + format_number(dc) + "," + format_number(ic) + "," + format_number(delta) + "\n";
  };
  for (const auto& s : r.scenes) row(s.scene_id, s.ade, s.fde, s.ace, s.ace_nc, s.ace_dc, s.ace_ic, s.delta);
  row("ALL", r.ade, r.fde, r.ace, r.ace_nc, r.ace_dc, r.ace_ic, r.delta);
  return out;
}

// Joint removal of non-causal agents.

struct JointPoint {
  std::size_t k = 0;
  double mean_effect = 0.0;
  double fraction_above_eta = 0.0;
  std::size_t scenes = 0;   // scenes with at least k non-causal agents
  std::size_t skipped = 0;  // scenes with fewer
  std::vector<double> effects;
};

inline std::vector<JointPoint> joint_curve(std::span<const SceneRecord> records, std::span<const std::size_t> ks,
                                           const CausalThresholds& thresholds, unsigned threads = 1) {
  std::vector<JointPoint> curve;
  for (std::size_t k : ks) {
    JointPoint pt;
    pt.k = k;
    std::vector<std::optional<double>> effects(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
      if (noncausal_ids(records[i].annotations).size() >= k) {
        effects[i] = joint_removal_effect(records[i].scene, records[i].annotations, k);
      }
    });
    for (const auto& e : effects) {
      if (e) {
        pt.effects.push_back(*e);
      } else {
        ++pt.skipped;
      }
    }
    pt.scenes = pt.effects.size();
    if (pt.scenes > 0) {
      double sum = 0.0;
      std::size_t above = 0;
      for (double e : pt.effects) {
        sum += e;
        if (e > thresholds.eta) ++above;
      }
      pt.mean_effect = sum / static_cast<double>(pt.scenes);
      pt.fraction_above_eta = static_cast<double>(above) / static_cast<double>(pt.scenes);
    }
    curve.push_back(std::move(pt));
  }
  return curve;
}

struct BootstrapInterval {
  double estimate = 0.0;
  double lower = 0.0;  // one-sided bounds at the requested level
  double upper = 0.0;
};

/// Bootstrap of mean(b) − mean(a), resampling each sample independently.
inline BootstrapInterval bootstrap_mean_difference(std::span<const double> a, std::span<const double> b,
                                                   std::size_t resamples, double level, std::uint64_t seed) {
  require(!a.empty() && !b.empty(), "bootstrap needs non-empty samples");
  require(resamples > 0 && level > 0.0 && level < 1.0, "bad bootstrap parameters");
  auto mean = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  Rng rng(seed);
  auto resample_mean = [&](std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      s += v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))];
    }
    return s / static_cast<double>(v.size());
  };
  std::vector<double> diffs(resamples);
  for (auto& d : diffs) {
    const double ma = resample_mean(a);
    d = resample_mean(b) - ma;
  }
  std::sort(diffs.begin(), diffs.end());
  auto quantile = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::clamp(q * static_cast<double>(resamples - 1), 0.0,
                                                         static_cast<double>(resamples - 1)));
    return diffs[idx];
  };
  return {mean(b) - mean(a), quantile(1.0 - level), quantile(level)};
}

inline std::string joint_curve_csv(std::span<const JointPoint> curve) {
  std::string out = "k,mean_effect,fraction_above_eta,scenes,skipped\n";
  for (const auto& p : curve) {
    out += std::to_string(p.k) + "," + format_number(p.mean_effect) + "," + format_number(p.fraction_above_eta) + "," +
           std::to_string(p.scenes) + "," + std::to_string(p.skipped) + "\n";
  }
  return out;
}

/// Standalone SVG line chart of mean joint effect and exceedance fraction over k.
inline std::string joint_curve_svg(std::span<const JointPoint> curve, const CausalThresholds& thresholds) {
  const double w = 480, h = 320, left = 60, right = 60, top = 30, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  std::size_t kmax = 1;
  double ymax = thresholds.eta * 1.2;
  for (const auto& p : curve) {
    kmax = std::max(kmax, p.k);
    ymax = std::max(ymax, p.mean_effect * 1.1);
  }
  auto x_of = [&](double k) { return left + pw * k / static_cast<double>(kmax); };
  auto y_eff = [&](double v) { return top + ph * (1.0 - v / ymax); };
  auto y_frac = [&](double v) { return top + ph * (1.0 - v); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top + ph) + "\" x2=\"" + num(left + pw) + "\" y2=\"" +
       num(top + ph) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" + num(top + ph) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(left + pw) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left + pw) + "\" y2=\"" +
       num(top + ph) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(left) + "\" y1=\"" + num(y_eff(thresholds.eta)) + "\" x2=\"" + num(left + pw) +
       "\" y2=\"" + num(y_eff(thresholds.eta)) + "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  for (std::size_t k = 0; k <= kmax; ++k) {
    s += "<text x=\"" + num(x_of(static_cast<double>(k))) + "\" y=\"" + num(top + ph + 18) +
         "\" font-size=\"12\" text-anchor=\"middle\">" + std::to_string(k) + "</text>\n";
  }
  s += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(h - 10) +
       "\" font-size=\"12\" text-anchor=\"middle\">non-causal agents removed (k)</text>\n";
  s += "<text x=\"14\" y=\"" + num(top + ph / 2) + "\" font-size=\"12\" fill=\"steelblue\" transform=\"rotate(-90 14 " +
       num(top + ph / 2) + ")\" text-anchor=\"middle\">mean effect (m), max " + num(ymax) + "</text>\n";
  s += "<text x=\"" + num(w - 14) + "\" y=\"" + num(top + ph / 2) +
       "\" font-size=\"12\" fill=\"darkorange\" transform=\"rotate(90 " + num(w - 14) + " " + num(top + ph / 2) +
       ")\" text-anchor=\"middle\">fraction above eta</text>\n";
  std::string eff, frac;
  for (const auto& p : curve) {
    const double x = x_of(static_cast<double>(p.k));
    eff += num(x) + "," + num(y_eff(p.mean_effect)) + " ";
    frac += num(x) + "," + num(y_frac(p.fraction_above_eta)) + " ";
    s += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y_eff(p.mean_effect)) + "\" r=\"3\" fill=\"steelblue\"/>\n";
    s += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y_frac(p.fraction_above_eta)) +
         "\" r=\"3\" fill=\"darkorange\"/>\n";
  }
  s += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"" + eff + "\"/>\n";
  s += "<polyline fill=\"none\" stroke=\"darkorange\" stroke-width=\"2\" points=\"" + frac + "\"/>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace causal_crowds
