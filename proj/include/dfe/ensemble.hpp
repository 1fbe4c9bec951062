#pragma once

// Two-level fusion: per-video aggregation, an intra-branch vote, and a
// weighted 2D + 3D combination that favours the 3D branch.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dfe/graph.hpp"
#include "dfe/synthvid.hpp"
#include "dfe/trainer.hpp"
#include "dfe/zoo3d.hpp"

namespace dfe {

enum class WeightFit { fixed, adaptive };
const char* weight_fit_name(WeightFit f);
WeightFit parse_weight_fit(const std::string& name);

struct EnsembleConfig {
  double w3d = 0.6;
  double w2d = 0.4;
  VoteMode vote_mode = VoteMode::soft;
  WeightFit weight_fit = WeightFit::fixed;
  double grid_step = 0.05;
  std::size_t frames_per_video = 10;  // 2D faces per video
  std::size_t clip_length = 8;        // 3D centre clip

  void validate() const;
};

struct VideoVerdict {
  std::string video_id;
  double p2d = 0.0;
  double p3d = 0.0;
  double fused = 0.0;
  int label = 0;  // ground truth
  int pred = 0;   // fused >= 0.5
  std::vector<double> members;  // per-model video probabilities, model order
};

struct VerdictTable {
  std::vector<VideoVerdict> rows;
  std::string csv() const;  // video_id,p2d,p3d,fused,label,pred
};

// Arithmetic mean of per-face (or per-clip) probabilities.
double aggregate_video(std::span<const double> probabilities);

// fused = w3d*p3d + w2d*p2d, kept inside [min(p2d,p3d), max(p2d,p3d)];
// pred = 1 iff fused >= 0.5. video_id and label are left for the caller.
VideoVerdict fuse(double p2d, double p3d, const EnsembleConfig& cfg);

// {0.5, 0.5 + step, ..., 1.0}; 0.5 / step must be a whole number.
std::vector<double> adaptive_weight_grid(double step);

// Grid search of w3d minimizing validation LogLoss of the fused video
// probabilities. Scanned from w3d = 1.0 down so equal losses keep the larger
// 3D weight. Returns (w3d, w2d).
std::pair<double, double> fit_adaptive_weights(std::span<const ScoreRecord> val_2d,
                                               std::span<const ScoreRecord> val_3d,
                                               const EnsembleConfig& cfg);

struct NamedModel {
  std::string name;
  const Model<float>* model = nullptr;
  Branch branch = Branch::two_d;
};

struct EnsembleResult {
  MetricsReport report;  // fused metrics; per_model holds every member, then branch2d / branch3d
  VerdictTable table;
  double w3d = 0.0;
  double w2d = 0.0;
  std::vector<std::string> members;
};

// Per-video member probabilities of one split: 2D members average the faces
// of sample_frames(T, k), 3D members score the centre clip.
std::vector<VideoVerdict> score_members(std::span<const FaceTrack> corpus, Split split,
                                        std::span<const NamedModel> models,
                                        const EnsembleConfig& cfg);

// Branch votes and fusion over previously scored members. A missing branch
// takes the other's probability, so a single-branch ensemble reproduces that
// branch exactly.
EnsembleResult combine_members(std::vector<VideoVerdict> scored, std::span<const NamedModel> models,
                               const EnsembleConfig& cfg, double prob_clip = 1e-7);
void fit_weights(std::span<const VideoVerdict> val_scored, std::span<const NamedModel> models,
                 EnsembleConfig& cfg);

// Full pipeline on `split`. Adaptive fitting, when configured, uses the val split.
EnsembleResult evaluate_ensemble(std::span<const FaceTrack> corpus, Split split,
                                 std::span<const NamedModel> models, EnsembleConfig cfg);

}  // namespace dfe
