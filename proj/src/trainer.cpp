#include "dfe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dfe/kernels.hpp"
#include "dfe/keyvalue.hpp"

namespace dfe {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0,1)");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (!(prob_clip > 0.0 && prob_clip < 0.5)) fail("prob_clip must lie in (0, 0.5)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (frames_per_video < 1) fail("frames_per_video must be >= 1");
  if (faces_per_video < 1 || faces_per_video > frames_per_video) {
    fail("faces_per_video must lie in [1, frames_per_video]");
  }
  if (clip_length < 2) fail("clip_length must be >= 2");
  if (!(cutmix_probability >= 0.0 && cutmix_probability <= 1.0)) {
    fail("cutmix_probability must lie in [0,1]");
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
               AdamState<T>& state, const TrainConfig& cfg) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty() && state.t == 0) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.m[i].shape() != grads[i].shape()) {
      throw DimensionError("adam_step: tensor " + std::to_string(i) + " has parameter " +
                           shape_str(params[i]->shape()) + " but gradient " +
                           shape_str(grads[i].shape()));
    }
  }
  state.t += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->data();
    const T* g = grads[i].data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t k = 0; k < grads[i].numel(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double mhat = mk / bc1, vhat = vk / bc2;
      p[k] = static_cast<T>(p[k] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

template <typename T>
void adam_step(Model<T>& model, const Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  std::vector<Tensor<T>*> ptrs;
  ptrs.reserve(model.params.size());
  for (auto& p : model.params) ptrs.push_back(&p.value);
  adam_step<T>(std::span<Tensor<T>* const>(ptrs), std::span<const Tensor<T>>(grads.params), state,
               cfg);
}

template void adam_step<float>(std::span<Tensor<float>* const>, std::span<const Tensor<float>>,
                               AdamState<float>&, const TrainConfig&);
template void adam_step<double>(std::span<Tensor<double>* const>, std::span<const Tensor<double>>,
                                AdamState<double>&, const TrainConfig&);
template void adam_step<float>(Model<float>&, const Gradients<float>&, AdamState<float>&,
                               const TrainConfig&);
template void adam_step<double>(Model<double>&, const Gradients<double>&, AdamState<double>&,
                                const TrainConfig&);

ScoreRecord make_record(std::string video_id, std::size_t index, double score, int label) {
  return {std::move(video_id), index, score, sigmoid(score), label};
}

ScoreRecord record_from_probability(std::string video_id, double p, int label) {
  return {std::move(video_id), 0, std::log(p) - std::log1p(-p), p, label};
}

namespace {

void check_labels(std::span<const ScoreRecord> records, const char* op) {
  for (const auto& r : records) {
    if (r.label != 0 && r.label != 1) {
      throw UsageError(std::string(op) + ": label of '" + r.video_id + "' is not 0 or 1");
    }
  }
}

}  // namespace

double logloss(std::span<const ScoreRecord> records, double prob_clip) {
  if (records.empty()) throw UsageError("logloss: no records");
  check_labels(records, "logloss");
  double sum = 0.0;
  for (const auto& r : records) {
    const double p = std::clamp(r.probability, prob_clip, 1.0 - prob_clip);
    sum += r.label == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return -sum / static_cast<double>(records.size());
}

double auc(std::span<const ScoreRecord> records) {
  check_labels(records, "auc");
  std::uint64_t n1 = 0;
  for (const auto& r : records) n1 += static_cast<std::uint64_t>(r.label);
  const std::uint64_t n0 = records.size() - n1;
  if (n0 == 0 || n1 == 0) {
    throw UndefinedMetricError("auc: needs at least one real and one fake record (got " +
                               std::to_string(n0) + " real, " + std::to_string(n1) + " fake)");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].probability < records[b].probability;
  });
  // Sum of doubled mid-ranks of the fakes; a tie group at positions [i, j)
  // shares the mid-rank (i + 1 + j) / 2.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && records[order[j]].probability == records[order[i]].probability) ++j;
    std::uint64_t fakes = 0;
    for (std::size_t k = i; k < j; ++k) fakes += static_cast<std::uint64_t>(records[order[k]].label);
    twice_rank_sum += fakes * (i + 1 + j);
    i = j;
  }
  const std::uint64_t twice_u = twice_rank_sum - n1 * (n1 + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * n0 * n1);
}

MetricsReport evaluate_records(std::span<const ScoreRecord> records, double prob_clip) {
  MetricsReport m;
  m.logloss = logloss(records, prob_clip);
  m.auc = auc(records);
  for (const auto& r : records) (r.label == 1 ? m.n_fake : m.n_real) += 1;
  return m;
}

double bce_with_logits(std::span<const float> scores, std::span<const float> labels,
                       std::span<const float> weights, double prob_clip, std::vector<float>* grad) {
  if (scores.empty()) throw UsageError("bce_with_logits: empty batch");
  expect_dim("bce_with_logits", "labels", labels.size(), scores.size());
  if (!weights.empty()) expect_dim("bce_with_logits", "weights", weights.size(), scores.size());
  double wsum = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double p = std::clamp(sigmoid<double>(scores[i]), prob_clip, 1.0 - prob_clip);
    const double y = labels[i];
    sum += w * -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    wsum += w;
  }
  if (!(wsum > 0.0)) throw UsageError("bce_with_logits: weights sum to zero");
  if (grad) {
    grad->resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      (*grad)[i] = static_cast<float>(w * (sigmoid<double>(scores[i]) - labels[i]) / wsum);
    }
  }
  return sum / wsum;
}

const char* branch_name(Branch b) { return b == Branch::two_d ? "2d" : "3d"; }

Branch parse_branch(const std::string& name) {
  if (name == "2d") return Branch::two_d;
  if (name == "3d") return Branch::three_d;
  throw UsageError("unknown branch '" + name + "' (expected 2d or 3d)");
}

namespace {

void normalize_inplace(float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = (x[i] - 0.5f) / 0.5f;
}

Tensor<float> raw_clip(const FaceTrack& track, std::size_t offset, std::size_t length) {
  if (track.crops.empty()) throw DataError(track.video_id + ": track has no frames");
  const std::size_t s = track.size, plane = s * s, T = track.crops.size();
  Tensor<float> clip({3, length, s, s});
  std::vector<float> frame(3 * plane);
  for (std::size_t i = 0; i < length; ++i) {
    image_to_tensor(track.crops[(offset + i) % T], frame.data());
    for (std::size_t c = 0; c < 3; ++c) {
      std::copy_n(frame.data() + c * plane, plane, clip.data() + (c * length + i) * plane);
    }
  }
  return clip;
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

Tensor<float> face_input(const FaceTrack& track, std::size_t frame) {
  if (frame >= track.crops.size()) throw UsageError(track.video_id + ": frame index out of range");
  Tensor<float> t = image_to_tensor(track.crops[frame]);
  normalize_inplace(t.data(), t.numel());
  return t;
}

Tensor<float> clip_input(const FaceTrack& track, std::size_t offset, std::size_t length) {
  Tensor<float> t = raw_clip(track, offset, length);
  normalize_inplace(t.data(), t.numel());
  return t;
}

std::size_t center_offset(std::size_t frames, std::size_t length) {
  return frames > length ? (frames - length) / 2 : 0;
}

std::vector<ScoreRecord> score_faces(const Model<float>& model, const FaceTrack& track,
                                     std::size_t k) {
  const auto idx = sample_frames(track.crops.size(), k);
  const std::size_t s = track.size;
  Tensor<float> batch({idx.size(), 3, s, s});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor<float> f = face_input(track, idx[i]);
    std::copy(f.storage().begin(), f.storage().end(), batch.data() + i * f.numel());
  }
  const Tensor<float> out = model.forward(batch);
  std::vector<ScoreRecord> recs;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    recs.push_back(make_record(track.video_id, idx[i], out[i], track.label));
  }
  return recs;
}

ScoreRecord score_clip(const Model<float>& model, const FaceTrack& track, std::size_t length) {
  const std::size_t offset = center_offset(track.crops.size(), length);
  Tensor<float> clip = clip_input(track, offset, length);
  return make_record(track.video_id, offset, model.forward(clip.reshaped({1, 3, length, track.size, track.size}))[0],
                     track.label);
}

std::vector<ScoreRecord> score_split(const Model<float>& model, std::span<const FaceTrack> corpus,
                                     Split split, Branch branch, const TrainConfig& cfg) {
  std::vector<ScoreRecord> out;
  for (const auto& tr : corpus) {
    if (tr.split != split) continue;
    if (branch == Branch::two_d) {
      const auto faces = score_faces(model, tr, cfg.frames_per_video);
      std::vector<double> p;
      for (const auto& r : faces) p.push_back(r.probability);
      out.push_back(record_from_probability(tr.video_id, mean(p), tr.label));
    } else {
      out.push_back(score_clip(model, tr, cfg.clip_length));
    }
  }
  return out;
}

std::string History::csv() const {
  std::string out = "epoch,train_logloss,val_logloss,val_auc\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_logloss) + "," +
           format_double(r.val_logloss) + "," + format_double(r.val_auc) + "\n";
  }
  return out;
}

namespace {

struct Example {
  const FaceTrack* track;
  std::size_t frame;  // 2D face index or 3D clip offset
};

void need_both_classes(std::span<const FaceTrack* const> tracks, const char* split) {
  bool real = false, fake = false;
  for (const auto* t : tracks) (t->label == 1 ? fake : real) = true;
  if (!real || !fake) {
    throw UsageError(std::string("train: the ") + split + " split needs real and fake videos");
  }
}

}  // namespace

TrainResult train(Model<float> model, std::span<const FaceTrack> corpus, Branch branch,
                  const TrainConfig& cfg, const AugPolicy& aug, const EpochCallback& on_epoch) {
  cfg.validate();
  aug.validate();
  std::vector<const FaceTrack*> train_set, val_set;
  for (const auto& t : corpus) {
    if (t.split == Split::train) train_set.push_back(&t);
    if (t.split == Split::val) val_set.push_back(&t);
  }
  need_both_classes(train_set, "train");
  need_both_classes(val_set, "val");
  const std::size_t s = train_set.front()->size;
  for (const auto* t : train_set) {
    if (t->size != s || t->crops.empty()) throw DataError("train: tracks disagree on crop size");
  }

  float class_weight[2] = {1.0f, 1.0f};
  if (cfg.balanced) {
    std::size_t n[2] = {0, 0};
    for (const auto* t : train_set) ++n[t->label];
    for (int c = 0; c < 2; ++c) {
      class_weight[c] = static_cast<float>(static_cast<double>(train_set.size()) / (2.0 * n[c]));
    }
  }

  const AugPolicy policy = cfg.augment ? aug : AugPolicy::identity();
  Rng rng(derive_seed(cfg.seed, 0x7a11));
  AdamState<float> state;
  TrainResult result;
  result.model = model;
  result.best_val_logloss = INFINITY;

  const std::size_t L = cfg.clip_length;
  const std::size_t sample_numel = branch == Branch::two_d ? 3 * s * s : 3 * L * s * s;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<Example> examples;
    for (const auto* t : train_set) {
      const std::size_t T = t->crops.size();
      if (branch == Branch::two_d) {
        std::vector<std::size_t> idx = sample_frames(T, cfg.frames_per_video);
        for (std::size_t i = 0; i < cfg.faces_per_video; ++i) {
          std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
          examples.push_back({t, idx[i]});
        }
      } else {
        const std::size_t offsets = T > L ? T - L + 1 : 1;
        examples.push_back({t, static_cast<std::size_t>(uniform_index(rng, offsets))});
      }
    }
    for (std::size_t i = examples.size(); i > 1; --i) {
      std::swap(examples[i - 1], examples[uniform_index(rng, i)]);
    }

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, examples.size() - start);
      Shape shape = branch == Branch::two_d ? Shape{b, 3, s, s} : Shape{b, 3, L, s, s};
      Tensor<float> x(shape);
      std::vector<float> labels(b), weights(b);
      for (std::size_t i = 0; i < b; ++i) {
        const Example& e = examples[start + i];
        Tensor<float> in = branch == Branch::two_d
                               ? augment_frame(image_to_tensor(e.track->crops[e.frame]), policy, rng)
                               : augment_clip(raw_clip(*e.track, e.frame, L), policy, rng);
        std::copy(in.storage().begin(), in.storage().end(), x.data() + i * sample_numel);
        labels[i] = static_cast<float>(e.track->label);
        weights[i] = class_weight[e.track->label];
      }
      if (branch == Branch::three_d && cfg.cutmix && b >= 2 &&
          bernoulli(rng, cfg.cutmix_probability)) {
        // Donor of sample i is sample i+1 of the same batch.
        Tensor<float> donor(shape);
        std::vector<float> donor_labels(b), donor_weights(b);
        for (std::size_t i = 0; i < b; ++i) {
          const std::size_t j = (i + 1) % b;
          std::copy_n(x.data() + j * sample_numel, sample_numel, donor.data() + i * sample_numel);
          donor_labels[i] = labels[j];
          donor_weights[i] = weights[j];
        }
        CutMixResult mix = cutmix(x, donor, labels, donor_labels, rng);
        x = std::move(mix.mixed);
        labels = std::move(mix.labels);
        for (std::size_t i = 0; i < b; ++i) {
          weights[i] = static_cast<float>(mix.lambda * weights[i] + (1.0 - mix.lambda) * donor_weights[i]);
        }
      }

      Tape<float> tape;
      const Tensor<float> out = model.forward(x, &tape);
      std::vector<float> grad;
      const double loss = bce_with_logits(out.values(), labels,
                                          cfg.balanced ? std::span<const float>(weights)
                                                       : std::span<const float>(),
                                          cfg.prob_clip, &grad);
      ++step;
      if (!std::isfinite(loss) || !all_finite(out)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + " (" + model.arch + ", lr " +
                              format_double(cfg.learning_rate) + ", batch " + std::to_string(b) + ")");
      }
      loss_sum += loss * static_cast<double>(b);
      const Gradients<float> g = model.backward(tape, Tensor<float>(out.shape(), std::move(grad)));
      adam_step(model, g, state, cfg);
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_logloss = loss_sum / static_cast<double>(examples.size());
    const auto val = score_split(model, corpus, Split::val, branch, cfg);
    row.val_logloss = logloss(val, cfg.prob_clip);
    row.val_auc = auc(val);
    if (!std::isfinite(row.val_logloss)) {
      throw DivergenceError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.rows.push_back(row);
    if (on_epoch) on_epoch(row);
    if (row.val_logloss < result.best_val_logloss) {
      result.best_val_logloss = row.val_logloss;
      result.best_epoch = epoch;
      result.model = model;
    }
  }
  return result;
}

}  // namespace dfe
