#include "dfe/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dfe/keyvalue.hpp"

namespace dfe {

const char* weight_fit_name(WeightFit f) { return f == WeightFit::fixed ? "fixed" : "adaptive"; }

WeightFit parse_weight_fit(const std::string& name) {
  if (name == "fixed") return WeightFit::fixed;
  if (name == "adaptive") return WeightFit::adaptive;
  throw ConfigError("unknown weight fit '" + name + "' (expected fixed or adaptive)");
}

void EnsembleConfig::validate() const {
  if (!(w3d >= 0.0 && w2d >= 0.0) || std::abs(w3d + w2d - 1.0) > 1e-9) {
    throw ConfigError("ensemble: weights must be non-negative and sum to 1 (got w3d " +
                      format_double(w3d) + ", w2d " + format_double(w2d) + ")");
  }
  if (weight_fit == WeightFit::adaptive) adaptive_weight_grid(grid_step);
  if (frames_per_video < 1) throw ConfigError("ensemble: frames_per_video must be >= 1");
  if (clip_length < 2) throw ConfigError("ensemble: clip_length must be >= 2");
}

std::string VerdictTable::csv() const {
  std::string out = "video_id,p2d,p3d,fused,label,pred\n";
  for (const auto& r : rows) {
    out += r.video_id + "," + format_double(r.p2d) + "," + format_double(r.p3d) + "," +
           format_double(r.fused) + "," + std::to_string(r.label) + "," + std::to_string(r.pred) + "\n";
  }
  return out;
}

double aggregate_video(std::span<const double> probabilities) {
  if (probabilities.empty()) throw UsageError("aggregate_video: no probabilities");
  double sum = 0.0;
  for (const double p : probabilities) sum += p;
  return sum / static_cast<double>(probabilities.size());
}

VideoVerdict fuse(double p2d, double p3d, const EnsembleConfig& cfg) {
  cfg.validate();
  if (!(p2d >= 0.0 && p2d <= 1.0) || !(p3d >= 0.0 && p3d <= 1.0)) {
    throw UsageError("fuse: probabilities must lie in [0,1]");
  }
  VideoVerdict v;
  v.p2d = p2d;
  v.p3d = p3d;
  if (p2d == p3d) {
    v.fused = p2d;
  } else {
    v.fused = std::clamp(cfg.w3d * p3d + cfg.w2d * p2d, std::min(p2d, p3d), std::max(p2d, p3d));
  }
  v.pred = v.fused >= 0.5 ? 1 : 0;
  return v;
}

std::vector<double> adaptive_weight_grid(double step) {
  if (!(step > 0.0 && step <= 0.5)) throw ConfigError("ensemble: grid_step must lie in (0, 0.5]");
  const double steps = 0.5 / step;
  const double n = std::nearbyint(steps);
  if (std::abs(steps - n) > 1e-9) {
    throw ConfigError("ensemble: grid_step " + format_double(step) + " does not divide 0.5");
  }
  std::vector<double> grid;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    grid.push_back(0.5 + static_cast<double>(i) * step);
  }
  grid.push_back(1.0);
  return grid;
}

std::pair<double, double> fit_adaptive_weights(std::span<const ScoreRecord> val_2d,
                                               std::span<const ScoreRecord> val_3d,
                                               const EnsembleConfig& cfg) {
  const auto grid = adaptive_weight_grid(cfg.grid_step);
  if (val_2d.size() != val_3d.size()) {
    throw DataError("fit_adaptive_weights: " + std::to_string(val_2d.size()) + " 2D records vs " +
                    std::to_string(val_3d.size()) + " 3D records");
  }
  std::map<std::string, const ScoreRecord*> by_id;
  for (const auto& r : val_3d) {
    if (!by_id.emplace(r.video_id, &r).second) {
      throw DataError("fit_adaptive_weights: duplicate 3D video '" + r.video_id + "'");
    }
  }
  std::vector<std::pair<const ScoreRecord*, const ScoreRecord*>> pairs;
  bool real = false, fake = false;
  for (const auto& r : val_2d) {
    const auto it = by_id.find(r.video_id);
    if (it == by_id.end()) throw DataError("fit_adaptive_weights: video '" + r.video_id + "' has no 3D record");
    if (it->second->label != r.label) {
      throw DataError("fit_adaptive_weights: labels of '" + r.video_id + "' disagree");
    }
    pairs.emplace_back(&r, it->second);
    (r.label == 1 ? fake : real) = true;
  }
  if (!real || !fake) throw DataError("fit_adaptive_weights: validation records need both classes");

  double best_w = 1.0, best_loss = INFINITY;
  std::vector<ScoreRecord> fused(pairs.size());
  for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
    EnsembleConfig c = cfg;
    c.weight_fit = WeightFit::fixed;
    c.w3d = *it;
    c.w2d = 1.0 - *it;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const VideoVerdict v = fuse(pairs[i].first->probability, pairs[i].second->probability, c);
      fused[i] = {pairs[i].first->video_id, 0, 0.0, v.fused, pairs[i].first->label};
    }
    const double loss = logloss(fused);
    if (loss < best_loss - 1e-12) {
      best_loss = loss;
      best_w = *it;
    }
  }
  return {best_w, 1.0 - best_w};
}

std::vector<VideoVerdict> score_members(std::span<const FaceTrack> corpus, Split split,
                                        std::span<const NamedModel> models,
                                        const EnsembleConfig& cfg) {
  if (models.empty()) throw ConfigError("ensemble: no models requested");
  for (const auto& m : models) {
    if (!m.model) throw ConfigError("ensemble: model '" + m.name + "' has no checkpoint loaded");
  }
  std::vector<VideoVerdict> rows;
  for (const auto& tr : corpus) {
    if (tr.split != split) continue;
    VideoVerdict v;
    v.video_id = tr.video_id;
    v.label = tr.label;
    for (const auto& m : models) {
      if (m.branch == Branch::two_d) {
        std::vector<double> p;
        for (const auto& r : score_faces(*m.model, tr, cfg.frames_per_video)) p.push_back(r.probability);
        v.members.push_back(aggregate_video(p));
      } else {
        const double p = score_clip(*m.model, tr, cfg.clip_length).probability;
        v.members.push_back(aggregate_video(std::span<const double>(&p, 1)));
      }
    }
    rows.push_back(std::move(v));
  }
  std::sort(rows.begin(), rows.end(),
            [](const VideoVerdict& a, const VideoVerdict& b) { return a.video_id < b.video_id; });
  return rows;
}

namespace {

// (p2d, p3d) of one scored video; -1 marks an empty branch.
std::pair<double, double> branch_votes(const VideoVerdict& v, std::span<const NamedModel> models,
                                       VoteMode mode) {
  std::vector<double> two, three;
  for (std::size_t i = 0; i < models.size(); ++i) {
    (models[i].branch == Branch::two_d ? two : three).push_back(v.members.at(i));
  }
  const double p2 = two.empty() ? -1.0 : vote_3d(two, mode);
  const double p3 = three.empty() ? -1.0 : vote_3d(three, mode);
  return {p2, p3};
}

ModelMetrics metrics_of(const std::string& name, const std::vector<ScoreRecord>& recs, double clip) {
  return {name, auc(recs), logloss(recs, clip)};
}

}  // namespace

EnsembleResult combine_members(std::vector<VideoVerdict> scored, std::span<const NamedModel> models,
                               const EnsembleConfig& cfg, double prob_clip) {
  cfg.validate();
  EnsembleResult res;
  res.w3d = cfg.w3d;
  res.w2d = cfg.w2d;
  std::vector<ScoreRecord> fused, b2, b3;
  std::vector<std::vector<ScoreRecord>> member(models.size());
  for (auto& v : scored) {
    auto [p2, p3] = branch_votes(v, models, cfg.vote_mode);
    if (p2 < 0.0) p2 = p3;
    if (p3 < 0.0) p3 = p2;
    VideoVerdict f = fuse(p2, p3, cfg);
    v.p2d = f.p2d;
    v.p3d = f.p3d;
    v.fused = f.fused;
    v.pred = f.pred;
    fused.push_back({v.video_id, 0, 0.0, v.fused, v.label});
    b2.push_back({v.video_id, 0, 0.0, v.p2d, v.label});
    b3.push_back({v.video_id, 0, 0.0, v.p3d, v.label});
    for (std::size_t i = 0; i < models.size(); ++i) {
      member[i].push_back({v.video_id, 0, 0.0, v.members[i], v.label});
    }
  }
  res.report = evaluate_records(fused, prob_clip);
  for (std::size_t i = 0; i < models.size(); ++i) {
    res.report.per_model.push_back(metrics_of(models[i].name, member[i], prob_clip));
    res.members.push_back(models[i].name);
  }
  res.report.per_model.push_back(metrics_of("branch2d", b2, prob_clip));
  res.report.per_model.push_back(metrics_of("branch3d", b3, prob_clip));
  res.table.rows = std::move(scored);
  return res;
}

void fit_weights(std::span<const VideoVerdict> val_scored, std::span<const NamedModel> models,
                 EnsembleConfig& cfg) {
  std::vector<ScoreRecord> r2, r3;
  for (const auto& v : val_scored) {
    auto [p2, p3] = branch_votes(v, models, cfg.vote_mode);
    if (p2 < 0.0 || p3 < 0.0) return;  // one branch only: weights are irrelevant
    r2.push_back({v.video_id, 0, 0.0, p2, v.label});
    r3.push_back({v.video_id, 0, 0.0, p3, v.label});
  }
  const auto [w3, w2] = fit_adaptive_weights(r2, r3, cfg);
  cfg.w3d = w3;
  cfg.w2d = w2;
}

EnsembleResult evaluate_ensemble(std::span<const FaceTrack> corpus, Split split,
                                 std::span<const NamedModel> models, EnsembleConfig cfg) {
  cfg.validate();
  if (cfg.weight_fit == WeightFit::adaptive) {
    fit_weights(score_members(corpus, Split::val, models, cfg), models, cfg);
  }
  return combine_members(score_members(corpus, split, models, cfg), models, cfg);
}

}  // namespace dfe
