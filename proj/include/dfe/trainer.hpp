#pragma once

// Adam, the LogLoss objective, rank AUC and the training loop for both
// branches.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dfe/augment.hpp"
#include "dfe/graph.hpp"
#include "dfe/synthvid.hpp"

namespace dfe {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-5;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double prob_clip = 1e-7;
  // Class-weighted loss, each class contributing half of the total weight.
  bool balanced = false;
  bool augment = true;
  bool cutmix = false;
  double cutmix_probability = 0.5;  // per batch
  // 2D: faces drawn per training video per epoch, out of the sampled frames.
  std::size_t faces_per_video = 10;
  std::size_t frames_per_video = 10;  // sample_frames k, train and eval
  // 3D: clip length; one random-offset clip per training video per epoch.
  std::size_t clip_length = 8;

  void validate() const;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::uint64_t t = 0;
};

// One bias-corrected Adam update of every tensor in `params`. The state is
// sized on first use; later calls must pass the same shapes.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
               AdamState<T>& state, const TrainConfig& cfg);
template <typename T>
void adam_step(Model<T>& model, const Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg);

struct ScoreRecord {
  std::string video_id;
  std::size_t index = 0;  // face or frame index
  double score = 0.0;     // raw, pre-sigmoid
  double probability = 0.5;
  int label = 0;
};

ScoreRecord make_record(std::string video_id, std::size_t index, double score, int label);
// From a probability directly (aggregated or fused values); score = logit(p).
ScoreRecord record_from_probability(std::string video_id, double p, int label);

struct ModelMetrics {
  std::string name;
  double auc = 0.0;
  double logloss = 0.0;
};

struct MetricsReport {
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  std::vector<ModelMetrics> per_model;
};

// -(1/N) sum [y log p + (1-y) log(1-p)], p clipped to [clip, 1-clip].
double logloss(std::span<const ScoreRecord> records, double prob_clip = 1e-7);
// Fraction of (real, fake) pairs with p_fake > p_real, ties counting one half.
// Rank-based; equal to the pairwise enumeration exactly.
double auc(std::span<const ScoreRecord> records);
MetricsReport evaluate_records(std::span<const ScoreRecord> records, double prob_clip = 1e-7);

// Mean BCE of raw scores against soft labels y in [0,1], with optional per
// sample weights (empty = 1). grad receives dL/dscore = w (sigmoid(s) - y) / sum(w);
// the clip only bounds the reported value.
double bce_with_logits(std::span<const float> scores, std::span<const float> labels,
                       std::span<const float> weights, double prob_clip, std::vector<float>* grad);

enum class Branch { two_d, three_d };
const char* branch_name(Branch b);
Branch parse_branch(const std::string& name);

// Network inputs, normalized with (x - 0.5) / 0.5.
Tensor<float> face_input(const FaceTrack& track, std::size_t frame);
// [3,L,S,S] from frames offset .. offset+L-1.
Tensor<float> clip_input(const FaceTrack& track, std::size_t offset, std::size_t length);
// Eval-time anchor: (T - L) / 2, 0 when the track is shorter than the clip.
std::size_t center_offset(std::size_t frames, std::size_t length);

// Per-face probabilities of the frames chosen by sample_frames(T, k).
std::vector<ScoreRecord> score_faces(const Model<float>& model, const FaceTrack& track,
                                     std::size_t k);
// Centre-anchored clip probability.
ScoreRecord score_clip(const Model<float>& model, const FaceTrack& track, std::size_t length);

struct HistoryRow {
  std::size_t epoch = 0;
  double train_logloss = 0.0;
  double val_logloss = 0.0;
  double val_auc = 0.0;
};

struct History {
  std::vector<HistoryRow> rows;
  std::string csv() const;  // epoch,train_logloss,val_logloss,val_auc
};

struct TrainResult {
  Model<float> model;  // parameters of the best-validation epoch
  History history;
  std::size_t best_epoch = 0;
  double best_val_logloss = 0.0;
};

using EpochCallback = std::function<void(const HistoryRow&)>;

// Mini-batch Adam on LogLoss. Requires train and val tracks of both classes.
// 2D: examples are faces; 3D: examples are clips, optionally CutMixed.
// Validation scores each val video (mean face probability, or the centre
// clip) and keeps the epoch with the lowest video-level LogLoss.
TrainResult train(Model<float> model, std::span<const FaceTrack> corpus, Branch branch,
                  const TrainConfig& cfg, const AugPolicy& aug, const EpochCallback& on_epoch = {});

// Video-level records of one split: 2D mean face probability or 3D centre clip.
std::vector<ScoreRecord> score_split(const Model<float>& model, std::span<const FaceTrack> corpus,
                                     Split split, Branch branch, const TrainConfig& cfg);

}  // namespace dfe
