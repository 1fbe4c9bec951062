#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "dfe/checkpoint.hpp"
#include "dfe/errors.hpp"
#include "dfe/trainer.hpp"
#include "oracles.hpp"

using namespace dfe;

namespace {

std::vector<ScoreRecord> records(const std::vector<double>& p, const std::vector<int>& y) {
  std::vector<ScoreRecord> r;
  for (std::size_t i = 0; i < p.size(); ++i) r.push_back(record_from_probability("v" + std::to_string(i), p[i], y[i]));
  return r;
}

FaceTrack toy_track(const std::string& id, int label, Split split, std::uint8_t level, std::mt19937_64& g) {
  FaceTrack t;
  t.video_id = id;
  t.label = label;
  t.split = split;
  t.size = 8;
  for (int f = 0; f < 4; ++f) {
    Image img{8, 8, 3, std::vector<std::uint8_t>(8 * 8 * 3)};
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(level + g() % 16);
    t.crops.push_back(img);
    t.artifact_box.push_back({0, 0, 8, 8});
  }
  return t;
}

std::vector<FaceTrack> toy_corpus() {
  std::mt19937_64 g(3);
  return {toy_track("a", 0, Split::train, 40, g), toy_track("b", 1, Split::train, 190, g),
          toy_track("c", 0, Split::val, 40, g), toy_track("d", 1, Split::val, 190, g)};
}

Model<float> toy_model(std::uint64_t seed, std::size_t clip = 0) {
  if (clip == 0) {
    ModelBuilder b("toy", {3, 8, 8}, seed);
    std::size_t y = b.conv2d("conv", ModelBuilder::input(), 3, 8, {3, 3}, {1, 1}, {1, 1});
    y = b.activation("relu", y, Activation::relu);
    y = b.global_pool("pool", y);
    return b.finish(b.dense("head", y, 8, 1));
  }
  ModelBuilder b("toy3d", {3, clip, 8, 8}, seed);
  std::size_t y = b.conv3d("conv", ModelBuilder::input(), 3, 4, {2, 3, 3}, {1, 1, 1}, {0, 1, 1});
  y = b.activation("relu", y, Activation::relu);
  y = b.global_pool("pool", y);
  return b.finish(b.dense("head", y, 4, 1));
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("auc examples and pairwise equality") {
    CHECK(auc(records({0.1, 0.9, 0.4}, {0, 1, 1})) == 1.0);
    CHECK(auc(records({0.3, 0.3, 0.3, 0.3}, {0, 1, 0, 1})) == 0.5);
    CHECK(auc(records({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1})) == 0.0);
    CHECK_THROWS_AS(auc(records({0.2, 0.3}, {1, 1})), UndefinedMetricError);
    std::mt19937_64 g(1);
    for (int inst = 0; inst < 60; ++inst) {
      const std::size_t n = 2 + g() % 400;
      std::vector<double> p(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        // Coarse levels force plenty of ties.
        p[i] = inst % 2 ? static_cast<double>(g() % 7) / 8.0 + 0.0625 : (static_cast<double>(g() >> 11) + 1.0) * 0x1.0p-54;
        y[i] = static_cast<int>(g() % 2);
      }
      y[0] = 0;
      y[1] = 1;
      const auto r = records(p, y);
      CHECK(auc(r) == oracle::pairwise_auc(p, y));
      // Rank statistic: a strictly increasing transform keeps it.
      std::vector<double> q(n);
      for (std::size_t i = 0; i < n; ++i) q[i] = p[i] * p[i] * p[i];
      CHECK(auc(records(q, y)) == auc(r));
    }
  }

  TEST_CASE("logloss") {
    const ScoreRecord half = make_record("v", 0, 0.0, 1);
    CHECK(half.probability == 0.5);
    CHECK(logloss(std::span<const ScoreRecord>(&half, 1)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const auto perfect = records({1.0, 0.0}, {1, 0});
    CHECK(logloss(perfect) == doctest::Approx(-std::log1p(-1e-7)).epsilon(1e-9));
    CHECK_THROWS_AS(logloss(std::span<const ScoreRecord>{}), UsageError);
    std::mt19937_64 g(2);
    std::vector<double> p(200);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
      p[i] = static_cast<double>(g() >> 11) * 0x1.0p-53;
      y[i] = static_cast<int>(g() % 2);
    }
    const auto r = records(p, y);
    CHECK(std::abs(logloss(r) - oracle::direct_logloss(p, y)) <= 1e-12);
    // More confidence in a correct prediction lowers the loss; a cube changes it.
    auto better = p;
    better[0] = y[0] == 1 ? (1.0 + p[0]) / 2.0 : p[0] / 2.0;
    CHECK(logloss(records(better, y)) < logloss(r));
    std::vector<double> q(200);
    for (std::size_t i = 0; i < 200; ++i) q[i] = p[i] * p[i] * p[i];
    CHECK(logloss(records(q, y)) != logloss(r));
  }

  TEST_CASE("evaluate_records counts classes") {
    const MetricsReport m = evaluate_records(records({0.1, 0.9, 0.4}, {0, 1, 1}));
    CHECK(m.n_real == 1);
    CHECK(m.n_fake == 2);
    CHECK(m.auc == 1.0);
    CHECK(m.logloss > 0.0);
  }

  TEST_CASE("adam: zero gradient, first step, quadratic, degenerate betas") {
    TrainConfig c;
    Tensor<double> theta({1}, 0.7);
    Tensor<double>* ps[] = {&theta};
    AdamState<double> st;
    const Tensor<double> zero({1}, 0.0);
    adam_step<double>(ps, std::span<const Tensor<double>>(&zero, 1), st, c);
    CHECK(theta[0] == 0.7);
    CHECK(st.t == 1);

    Tensor<double> a({1}, 0.0);
    Tensor<double>* pa[] = {&a};
    AdamState<double> sa;
    const Tensor<double> one({1}, 1.0);
    adam_step<double>(pa, std::span<const Tensor<double>>(&one, 1), sa, c);
    CHECK(a[0] == doctest::Approx(-1e-5 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(sa.m[0].shape() == Shape{1});

    TrainConfig q;
    q.learning_rate = 0.1;
    Tensor<double> x({1}, 1.0);
    Tensor<double>* px[] = {&x};
    AdamState<double> sx;
    double prev = 1.0;
    std::size_t increases_after_burn_in = 0;
    for (int i = 0; i < 100; ++i) {
      const Tensor<double> g({1}, 2.0 * x[0]);
      adam_step<double>(px, std::span<const Tensor<double>>(&g, 1), sx, q);
      if (i >= 10 && std::abs(x[0]) > prev) ++increases_after_burn_in;
      prev = std::abs(x[0]);
    }
    CHECK(sx.t == 100);
    CHECK(std::abs(x[0]) < 0.01);
    INFO("non-decreasing steps after burn-in: " << increases_after_burn_in);

    TrainConfig d;
    d.beta1 = d.beta2 = 0.0;
    d.epsilon = 3.0;
    d.learning_rate = 0.5;
    Tensor<double> z({1}, 0.0);
    Tensor<double>* pz[] = {&z};
    AdamState<double> sz;
    const Tensor<double> gz({1}, -2.0);
    adam_step<double>(pz, std::span<const Tensor<double>>(&gz, 1), sz, d);
    CHECK(z[0] == doctest::Approx(-0.5 * -2.0 / (2.0 + 3.0)).epsilon(1e-14));

    const Tensor<double> wrong({2}, 0.0);
    CHECK_THROWS_AS(adam_step<double>(pz, std::span<const Tensor<double>>(&wrong, 1), sz, d), DimensionError);
  }

  TEST_CASE("bce_with_logits: value and gradient oracles") {
    std::mt19937_64 g(4);
    std::vector<float> s(7), y(7), w(7);
    for (std::size_t i = 0; i < 7; ++i) {
      s[i] = static_cast<float>(static_cast<double>(g() % 1000) / 100.0 - 5.0);
      y[i] = static_cast<float>(g() % 5) / 4.0f;
      w[i] = 0.5f + static_cast<float>(g() % 3);
    }
    std::vector<float> grad;
    const double loss = bce_with_logits(s, y, w, 1e-7, &grad);
    double want = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(s[i])));
      want -= w[i] * (y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
      wsum += w[i];
    }
    CHECK(loss == doctest::Approx(want / wsum).epsilon(1e-6));
    for (std::size_t i = 0; i < 7; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(s[i])));
      CHECK(grad[i] == doctest::Approx(w[i] * (p - y[i]) / wsum).epsilon(1e-5));
    }
    CHECK_THROWS_AS(bce_with_logits({}, {}, {}, 1e-7, nullptr), UsageError);
  }

  TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.beta1 = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.prob_clip = 0.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.epsilon = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("inputs, offsets and history csv") {
    const auto corpus = toy_corpus();
    CHECK(face_input(corpus[0], 1).shape() == Shape{3, 8, 8});
    CHECK(clip_input(corpus[0], 1, 3).shape() == Shape{3, 3, 8, 8});
    CHECK(center_offset(32, 8) == 12);
    CHECK(center_offset(4, 8) == 0);
    History h;
    h.rows.push_back({1, 0.5, 0.25, 0.75});
    CHECK(h.csv() == "epoch,train_logloss,val_logloss,val_auc\n1,0.5,0.25,0.75\n");
  }

  TEST_CASE("one epoch smoke and determinism") {
    const auto corpus = toy_corpus();
    TrainConfig c;
    c.epochs = 1;
    c.faces_per_video = 2;
    c.frames_per_video = 4;
    c.seed = 5;
    std::size_t calls = 0;
    const TrainResult r = train(toy_model(1), corpus, Branch::two_d, c, AugPolicy{}, [&](const HistoryRow&) { ++calls; });
    CHECK(r.history.rows.size() == 1);
    CHECK(calls == 1);
    CHECK(std::isfinite(r.history.rows[0].train_logloss));
    CHECK(std::isfinite(r.history.rows[0].val_logloss));
    const TrainResult again = train(toy_model(1), corpus, Branch::two_d, c, AugPolicy{});
    CHECK(again.history.csv() == r.history.csv());
    CHECK(encode_checkpoint(model_parameters(again.model)) == encode_checkpoint(model_parameters(r.model)));
  }

  TEST_CASE("separable toy: train logloss below 0.1 within 200 steps at lr 1e-3") {
    const auto corpus = toy_corpus();
    TrainConfig c;
    c.learning_rate = 1e-3;
    c.epochs = 200;  // one step per epoch
    c.batch_size = 8;
    c.faces_per_video = 4;
    c.frames_per_video = 4;
    c.augment = false;
    const TrainResult r = train(toy_model(2), corpus, Branch::two_d, c, AugPolicy{});
    CHECK(r.history.rows.back().train_logloss < 0.1);
    CHECK(r.best_val_logloss <= r.history.rows.front().val_logloss);
    CHECK(r.history.rows[r.best_epoch - 1].val_logloss == r.best_val_logloss);
  }

  TEST_CASE("3D training with CutMix and balanced weights") {
    auto corpus = toy_corpus();
    std::mt19937_64 g(8);
    corpus.push_back(toy_track("e", 1, Split::train, 180, g));
    TrainConfig c;
    c.epochs = 3;
    c.clip_length = 3;
    c.batch_size = 3;
    c.cutmix = true;
    c.cutmix_probability = 1.0;
    c.balanced = true;
    c.learning_rate = 1e-3;
    const TrainResult r = train(toy_model(3, 3), corpus, Branch::three_d, c, AugPolicy{});
    CHECK(r.history.rows.size() == 3);
    for (const auto& row : r.history.rows) CHECK(std::isfinite(row.train_logloss));
    const auto val = score_split(r.model, corpus, Split::val, Branch::three_d, c);
    CHECK(val.size() == 2);
  }

  TEST_CASE("training errors") {
    auto corpus = toy_corpus();
    TrainConfig c;
    c.epochs = 1;
    c.frames_per_video = 4;
    c.faces_per_video = 1;
    std::vector<FaceTrack> no_val(corpus.begin(), corpus.begin() + 2);
    CHECK_THROWS_AS(train(toy_model(1), no_val, Branch::two_d, c, AugPolicy{}), UsageError);
    Model<float> bad = toy_model(1);
    for (auto& v : bad.params.back().value.values()) v = NAN;
    CHECK_THROWS_AS(train(bad, corpus, Branch::two_d, c, AugPolicy{}), DivergenceError);
  }
}
