#include <cmath>
#include <random>

#include "doctest.h"
#include "dfe/kernels.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace dfe;

namespace {

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("conv2d matches the loop reference") {
    std::mt19937_64 rng(11);
    for (int it = 0; it < 30; ++it) {
      const std::size_t C = pick(rng, 1, 3), K = pick(rng, 1, 4), H = pick(rng, 3, 9), W = pick(rng, 3, 9);
      const std::size_t kh = pick(rng, 1, 3), kw = pick(rng, 1, 3), s = pick(rng, 1, 2), p = pick(rng, 0, 1);
      const auto x = oracle::random_tensor<double>({2, C, H, W}, rng);
      const auto k = oracle::random_tensor<double>({K, C, kh, kw}, rng);
      const auto got = conv2d(x, k, {s, s}, {p, p});
      CHECK(max_abs_diff(got, oracle::conv2d(x, k, s, s, p, p)) < 1e-12);
      const auto gotf = conv2d(x.cast<float>(), k.cast<float>(), {s, s}, {p, p});
      CHECK(max_abs_diff(gotf, oracle::conv2d(x, k, s, s, p, p).cast<float>()) < 1e-5);
    }
  }

  TEST_CASE("conv3d matches the loop reference") {
    std::mt19937_64 rng(12);
    for (int it = 0; it < 30; ++it) {
      const std::size_t C = pick(rng, 1, 3), K = pick(rng, 1, 3), T = pick(rng, 2, 5), H = pick(rng, 3, 7);
      const std::size_t kt = pick(rng, 1, 3), kh = pick(rng, 1, 3), st = pick(rng, 1, 2), p = pick(rng, 0, 1);
      if (kt > T + 2 * p) continue;
      const auto x = oracle::random_tensor<double>({1, C, T, H, H}, rng);
      const auto k = oracle::random_tensor<double>({K, C, kt, kh, kh}, rng);
      const auto got = conv3d(x, k, {st, 1, 2}, {p, p, 1});
      CHECK(max_abs_diff(got, oracle::conv3d(x, k, st, 1, 2, p, p, 1)) < 1e-12);
    }
  }

  TEST_CASE("kt = 1 conv3d equals frame-wise conv2d bit for bit") {
    std::mt19937_64 rng(13);
    const auto x = oracle::random_tensor<float>({1, 3, 4, 8, 8}, rng);
    const auto k = oracle::random_tensor<float>({5, 3, 1, 3, 3}, rng);
    const auto out = conv3d(x, k, {1, 1, 1}, {0, 1, 1});
    const auto k2 = k.reshaped({5, 3, 3, 3});
    for (std::size_t t = 0; t < 4; ++t) {
      Tensor<float> frame({1, 3, 8, 8});
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 64; ++i) frame[c * 64 + i] = x[(c * 4 + t) * 64 + i];
      const auto o2 = conv2d(frame, k2, {1, 1}, {1, 1});
      for (std::size_t c = 0; c < 5; ++c)
        for (std::size_t i = 0; i < 64; ++i) REQUIRE(o2[c * 64 + i] == out[(c * 4 + t) * 64 + i]);
    }
  }

  TEST_CASE("conv2plus1d is a spatial conv3d then a temporal conv3d") {
    std::mt19937_64 rng(14);
    const auto x = oracle::random_tensor<double>({1, 2, 5, 6, 6}, rng);
    const auto ws = oracle::random_tensor<double>({4, 2, 1, 3, 3}, rng);
    const auto wt = oracle::random_tensor<double>({3, 4, 3, 1, 1}, rng);
    auto mid = oracle::conv3d(x, ws, 1, 2, 2, 0, 1, 1);
    for (auto& v : mid.storage()) v = std::max(v, 0.0);
    const auto want = oracle::conv3d(mid, wt, 1, 1, 1, 1, 0, 0);
    const auto got = conv2plus1d(x, ws, wt, {1, 2, 2}, {1, 1, 1}, Activation::relu);
    CHECK(max_abs_diff(got, want) < 1e-12);
  }

  TEST_CASE("depthwise and dense match the loop reference") {
    std::mt19937_64 rng(15);
    for (int it = 0; it < 20; ++it) {
      const std::size_t C = pick(rng, 1, 5), s = pick(rng, 1, 2), p = pick(rng, 0, 1);
      const auto x = oracle::random_tensor<double>({2, C, 7, 7}, rng);
      const auto k = oracle::random_tensor<double>({C, 1, 3, 3}, rng);
      CHECK(max_abs_diff(depthwise_conv2d(x, k, {s, s}, {p, p}), oracle::depthwise(x, k, s, p)) < 1e-12);
      const auto a = oracle::random_tensor<double>({3, 7}, rng);
      const auto w = oracle::random_tensor<double>({7, C}, rng);
      const auto b = oracle::random_tensor<double>({C}, rng);
      CHECK(max_abs_diff(dense(a, w, b), oracle::dense(a, w, b)) < 1e-12);
    }
  }

  TEST_CASE("pooling matches the loop reference") {
    std::mt19937_64 rng(16);
    for (int it = 0; it < 20; ++it) {
      const auto x = oracle::random_tensor<double>({1, 2, 4, 7, 7}, rng);
      const std::size_t wt = pick(rng, 1, 2), wh = pick(rng, 1, 3), s = pick(rng, 1, 2);
      for (const bool mx : {true, false}) {
        const auto got = pool(x, mx ? PoolKind::max : PoolKind::avg, {wt, wh, wh}, {wt, s, s}).output;
        CHECK(max_abs_diff(got, oracle::pool3d(x, mx, wt, wh, wh, wt, s, s)) < 1e-12);
      }
    }
  }

  TEST_CASE("padded positions never win a max pool; avg divides by the full window") {
    Tensor<double> x({1, 1, 2, 2}, std::vector<double>{-1.0, -2.0, -3.0, -4.0});
    const auto mx = pool(x, PoolKind::max, {1, 3, 3}, {1, 1, 1}, {0, 1, 1});
    for (const double v : mx.output.storage()) CHECK(v < 0.0);
    const auto av = pool(x, PoolKind::avg, {1, 3, 3}, {1, 1, 1}, {0, 1, 1});
    CHECK(av.output[0] == doctest::Approx(-10.0 / 9.0));
  }

  TEST_CASE("activations at known points") {
    Tensor<double> x({4}, std::vector<double>{-2.0, 0.0, 0.5, 3.0});
    const auto s = activation(x, Activation::sigmoid);
    CHECK(s[1] == 0.5);
    CHECK(s[3] == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
    const auto r = activation(x, Activation::relu);
    CHECK(r[0] == 0.0);
    CHECK(r[2] == 0.5);
    const auto w = activation(x, Activation::swish);
    CHECK(w[0] == doctest::Approx(-2.0 / (1.0 + std::exp(2.0))));
    CHECK(sigmoid(-1000.0) == 0.0);
    CHECK(sigmoid(1000.0f) == 1.0f);
  }

  TEST_CASE("upsample, global pool, attention multiply, concat") {
    Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const auto u = upsample_nearest(x, 2.0);
    CHECK(u.shape() == Shape{1, 1, 4, 4});
    CHECK(u[0] == 1);
    CHECK(u[3] == 2);
    CHECK(u[15] == 4);
    CHECK_THROWS_AS(upsample_nearest(x, 1.5), ConfigError);
    CHECK(global_avg_pool(x)[0] == 2.5);
    Tensor<double> f({1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    Tensor<double> m({1, 1, 2, 2}, std::vector<double>{0, 0.5, 1, 0.25});
    const auto a = attention_mul(f, m);
    CHECK(a[1] == 1.0);
    CHECK(a[5] == 3.0);
    CHECK(a[7] == 2.0);
    const auto c = concat_channels<double>({&x, &f});
    CHECK(c.shape() == Shape{1, 3, 2, 2});
    CHECK(c[4] == 1.0);
  }

  TEST_CASE("shape errors name the axis") {
    Tensor<float> x({1, 3, 4, 4});
    Tensor<float> k({2, 2, 3, 3});
    try {
      conv2d(x, k, {1, 1}, {0, 0});
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("channel") != std::string::npos);
    }
    Tensor<float> big({2, 3, 7, 7});
    CHECK_THROWS_AS(conv2d(x, big, {1, 1}, {0, 0}), DimensionError);
  }

  TEST_CASE("gradients agree with central differences") {
    for (const auto& e : gradcheck::run_suite(7, 5)) {
      INFO(e.name);
      CHECK(e.checked > 0);
      CHECK(e.worst <= 1e-5);
    }
  }
}
