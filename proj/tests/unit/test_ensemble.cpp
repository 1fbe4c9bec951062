#include <cmath>
#include <random>

#include "doctest.h"
#include "dfe/ensemble.hpp"
#include "dfe/errors.hpp"

using namespace dfe;

namespace {

std::vector<ScoreRecord> recs(const std::vector<double>& p, const std::vector<int>& y) {
  std::vector<ScoreRecord> r;
  for (std::size_t i = 0; i < p.size(); ++i) {
    r.push_back(record_from_probability("v" + std::to_string(100 + i), p[i], y[i]));
  }
  return r;
}

EnsembleConfig weights(double w3d) {
  EnsembleConfig c;
  c.w3d = w3d;
  c.w2d = 1.0 - w3d;
  return c;
}

FaceTrack track(const std::string& id, int label, Split split, std::uint8_t level, std::mt19937_64& g) {
  FaceTrack t;
  t.video_id = id;
  t.label = label;
  t.split = split;
  t.size = 8;
  for (int f = 0; f < 6; ++f) {
    Image img{8, 8, 3, std::vector<std::uint8_t>(8 * 8 * 3)};
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(level + g() % 64);
    t.crops.push_back(img);
    t.artifact_box.push_back({0, 0, 8, 8});
  }
  return t;
}

Model<float> model2d(std::uint64_t seed) {
  ModelBuilder b("m2", {3, 8, 8}, seed);
  std::size_t y = b.conv2d("conv", ModelBuilder::input(), 3, 4, {3, 3}, {1, 1}, {1, 1});
  y = b.global_pool("pool", y);
  return b.finish(b.dense("head", y, 4, 1));
}

Model<float> model3d(std::uint64_t seed) {
  ModelBuilder b("m3", {3, 4, 8, 8}, seed);
  std::size_t y = b.conv3d("conv", ModelBuilder::input(), 3, 4, {3, 3, 3}, {1, 1, 1}, {0, 1, 1});
  y = b.global_pool("pool", y);
  return b.finish(b.dense("head", y, 4, 1));
}

std::vector<VideoVerdict> scored(const std::vector<std::vector<double>>& members, const std::vector<int>& y) {
  std::vector<VideoVerdict> v(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    v[i].video_id = "v" + std::to_string(100 + i);
    v[i].label = y[i];
    for (const auto& m : members) v[i].members.push_back(m[i]);
  }
  return v;
}

}  // namespace

TEST_SUITE("ensemble") {
  TEST_CASE("aggregate_video") {
    const double one[] = {0.3};
    CHECK(aggregate_video(one) == 0.3);
    const double two[] = {0.0, 1.0};
    CHECK(aggregate_video(two) == 0.5);
    std::mt19937_64 g(1);
    double ten[10], sum = 0.0;
    for (double& v : ten) sum += (v = static_cast<double>(g() >> 11) * 0x1.0p-53);
    CHECK(aggregate_video(ten) == sum / 10.0);
    CHECK_THROWS_AS(aggregate_video(std::span<const double>{}), UsageError);
  }

  TEST_CASE("fuse examples") {
    CHECK(fuse(0.2, 0.8, weights(0.6)).fused == doctest::Approx(0.56).epsilon(1e-15));
    CHECK(fuse(0.2, 0.8, weights(1.0)).fused == 0.8);
    for (const double w : {0.5, 0.6, 0.85, 1.0}) CHECK(fuse(0.37, 0.37, weights(w)).fused == 0.37);
    CHECK(fuse(0.5, 0.5, weights(0.6)).pred == 1);
    CHECK(fuse(0.4, 0.45, weights(0.6)).pred == 0);
    EnsembleConfig bad = weights(0.6);
    bad.w2d = 0.5;
    CHECK_THROWS_AS(fuse(0.2, 0.8, bad), ConfigError);
    CHECK_THROWS_AS(fuse(0.2, 0.8, weights(-0.1)), ConfigError);
    CHECK_THROWS_AS(fuse(1.2, 0.8, weights(0.6)), UsageError);
  }

  TEST_CASE("fuse is monotone and stays between the branches") {
    std::mt19937_64 g(2);
    auto u = [&] { return static_cast<double>(g() >> 11) * 0x1.0p-53; };
    for (int i = 0; i < 2000; ++i) {
      const EnsembleConfig c = weights(u());
      const double a = u(), b = u(), d = u() * (1.0 - std::max(a, b));
      const double f = fuse(a, b, c).fused;
      CHECK(f >= std::min(a, b));
      CHECK(f <= std::max(a, b));
      CHECK(fuse(a + d, b, c).fused >= f);
      CHECK(fuse(a, b + d, c).fused >= f);
    }
  }

  TEST_CASE("adaptive grid") {
    CHECK(adaptive_weight_grid(0.25) == std::vector<double>{0.5, 0.75, 1.0});
    const auto g = adaptive_weight_grid(0.05);
    CHECK(g.size() == 11);
    CHECK(g.front() == 0.5);
    CHECK(g.back() == 1.0);
    CHECK_THROWS_AS(adaptive_weight_grid(0.3), ConfigError);
    CHECK_THROWS_AS(adaptive_weight_grid(0.0), ConfigError);
  }

  TEST_CASE("adaptive fitting") {
    std::mt19937_64 g(3);
    std::vector<int> y(40);
    std::vector<double> perfect(40), noise(40);
    for (std::size_t i = 0; i < 40; ++i) {
      y[i] = static_cast<int>(i % 2);
      perfect[i] = y[i] ? 1.0 - 1e-9 : 1e-9;
      noise[i] = static_cast<double>(g() >> 11) * 0x1.0p-53;
    }
    EnsembleConfig c;
    CHECK(fit_adaptive_weights(recs(noise, y), recs(perfect, y), c).first == 1.0);
    CHECK(fit_adaptive_weights(recs(noise, y), recs(noise, y), c).first == 1.0);
    // A perfect 2D branch still cannot push w3d below one half.
    const auto w = fit_adaptive_weights(recs(perfect, y), recs(noise, y), c);
    CHECK(w.first == 0.5);
    CHECK(w.second == 0.5);
    for (int i = 0; i < 30; ++i) {
      std::vector<double> a(40), b(40);
      for (std::size_t k = 0; k < 40; ++k) {
        a[k] = static_cast<double>(g() >> 11) * 0x1.0p-53;
        b[k] = static_cast<double>(g() >> 11) * 0x1.0p-53;
      }
      const auto r = fit_adaptive_weights(recs(a, y), recs(b, y), c);
      CHECK(r.first >= 0.5);
      CHECK(r.first + r.second == doctest::Approx(1.0));
    }
    auto shifted = recs(noise, y);
    shifted[3].video_id = "other";
    CHECK_THROWS_AS(fit_adaptive_weights(shifted, recs(noise, y), c), DataError);
    CHECK_THROWS_AS(fit_adaptive_weights(recs({0.1}, {0}), recs({0.1}, {0}), c), DataError);
  }

  TEST_CASE("combine_members: identical streams make weights irrelevant") {
    std::mt19937_64 g(4);
    std::vector<double> p(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      p[i] = static_cast<double>(g() >> 11) * 0x1.0p-53;
      y[i] = static_cast<int>(g() % 2);
    }
    const NamedModel ms[] = {{"a", nullptr, Branch::two_d}, {"b", nullptr, Branch::three_d}};
    const auto base = combine_members(scored({p, p}, y), ms, weights(0.6));
    for (const double w : {0.5, 0.9, 1.0}) {
      const auto r = combine_members(scored({p, p}, y), ms, weights(w));
      CHECK(r.report.auc == base.report.auc);
      CHECK(r.report.logloss == base.report.logloss);
      CHECK(r.table.csv() == base.table.csv());
    }
    // Members, then branch2d and branch3d.
    REQUIRE(base.report.per_model.size() == 4);
    CHECK(base.report.per_model[2].name == "branch2d");
    CHECK(base.report.per_model[3].name == "branch3d");
  }

  TEST_CASE("combine_members: votes inside a branch") {
    const NamedModel ms[] = {{"x", nullptr, Branch::three_d}, {"y", nullptr, Branch::three_d},
                             {"z", nullptr, Branch::two_d}};
    EnsembleConfig c = weights(0.6);
    const auto r = combine_members(scored({{0.2, 0.9}, {0.8, 0.3}, {0.5, 0.5}}, {0, 1}), ms, c);
    CHECK(r.table.rows[0].p3d == 0.5);
    CHECK(r.table.rows[1].p3d == doctest::Approx(0.6));
    CHECK(r.table.rows[0].fused == doctest::Approx(0.5));
    c.vote_mode = VoteMode::hard;
    const auto h = combine_members(scored({{0.2, 0.9}, {0.8, 0.3}, {0.5, 0.5}}, {0, 1}), ms, c);
    CHECK(h.table.rows[0].p3d == 0.5);
  }

  TEST_CASE("pipeline on tracks: single branch reproduces itself, adaptive, determinism") {
    std::mt19937_64 g(5);
    std::vector<FaceTrack> corpus;
    const Split splits[] = {Split::val, Split::test};
    int n = 0;
    for (const Split s : splits)
      for (int i = 0; i < 6; ++i) corpus.push_back(track(video_id_for(n++), i % 2, s, i % 2 ? 150 : 40, g));
    const Model<float> m2 = model2d(1), m3 = model3d(2);
    EnsembleConfig c;
    c.frames_per_video = 4;
    c.clip_length = 4;
    TrainConfig tc;
    tc.frames_per_video = 4;
    tc.clip_length = 4;

    const NamedModel only2[] = {{"m2", &m2, Branch::two_d}};
    const auto r2 = evaluate_ensemble(corpus, Split::test, only2, c);
    const auto s2 = evaluate_records(score_split(m2, corpus, Split::test, Branch::two_d, tc));
    CHECK(r2.report.auc == s2.auc);
    CHECK(r2.report.logloss == s2.logloss);
    for (const auto& row : r2.table.rows) CHECK(row.fused == row.p2d);

    const NamedModel only3[] = {{"m3", &m3, Branch::three_d}};
    const auto r3 = evaluate_ensemble(corpus, Split::test, only3, c);
    const auto s3 = evaluate_records(score_split(m3, corpus, Split::test, Branch::three_d, tc));
    CHECK(r3.report.auc == s3.auc);
    CHECK(r3.report.logloss == s3.logloss);

    const NamedModel both[] = {{"m2", &m2, Branch::two_d}, {"m3", &m3, Branch::three_d}};
    const auto f = evaluate_ensemble(corpus, Split::test, both, c);
    CHECK(f.table.rows.size() == 6);
    CHECK(f.table.csv() == evaluate_ensemble(corpus, Split::test, both, c).table.csv());
    CHECK(f.table.csv().starts_with("video_id,p2d,p3d,fused,label,pred\n"));
    c.weight_fit = WeightFit::adaptive;
    c.grid_step = 0.25;
    const auto a = evaluate_ensemble(corpus, Split::test, both, c);
    CHECK(a.w3d >= 0.5);
    CHECK(a.w3d + a.w2d == 1.0);

    const NamedModel missing[] = {{"gone", nullptr, Branch::two_d}};
    CHECK_THROWS_AS(evaluate_ensemble(corpus, Split::test, missing, c), ConfigError);
    CHECK_THROWS_AS(evaluate_ensemble(corpus, Split::test, std::span<const NamedModel>{}, c), ConfigError);
  }
}
