#include <cmath>
#include <random>

#include "doctest.h"
#include "dfe/attention2d.hpp"
#include "dfe/graph.hpp"
#include "oracles.hpp"

using namespace dfe;

namespace {

// Scalar model: dense D -> 1 with every weight `w`, zero bias.
Model<float> sum_model(std::size_t d, float w) {
  ModelBuilder b("sum", {d}, 1);
  const std::size_t y = b.dense("head", ModelBuilder::input(), d, 1);
  Model<float> m = b.finish(y);
  m.find("sum.head.weight")->value.fill(w);
  return m;
}

}  // namespace

TEST_SUITE("graph") {
  TEST_CASE("loss = sum(input) has an all-ones input gradient") {
    const Model<double> m = sum_model(5, 1.0f).cast<double>();
    std::mt19937_64 rng(1);
    const auto x = oracle::random_tensor<double>({1, 5}, rng);
    Tape<double> tape;
    const auto y = m.forward(x, &tape);
    double s = 0.0;
    for (const double v : x.storage()) s += v;
    CHECK(y[0] == doctest::Approx(s));
    const auto g = m.backward(tape, 1.0);
    for (const double v : g.input.storage()) CHECK(v == 1.0);
  }

  TEST_CASE("loss = sigmoid(w x) at w = 0, x = 1 has dL/dw = 1/4") {
    ModelBuilder b("sig", {1}, 1);
    std::size_t y = b.dense("head", ModelBuilder::input(), 1, 1);
    y = b.activation("act", y, Activation::sigmoid);
    Model<double> m = b.finish(y).cast<double>();
    m.find("sig.head.weight")->value.fill(0.0);
    Tape<double> tape;
    const auto out = m.forward(Tensor<double>({1, 1}, 1.0), &tape);
    CHECK(out[0] == 0.5);
    const auto g = m.backward(tape, 1.0);
    CHECK(g["sig.head.weight"][0] == 0.25);
    CHECK(g["sig.head.bias"][0] == 0.25);
  }

  TEST_CASE("gradients of a value used twice are summed") {
    ModelBuilder b("twice", {1, 2, 2}, 1);
    std::size_t y = b.add("add", ModelBuilder::input(), ModelBuilder::input());
    y = b.global_pool("pool", y);
    y = b.dense("head", y, 1, 1);
    Model<float> m = b.finish(y);
    m.find("twice.head.weight")->value.fill(1.0f);
    Tape<float> tape;
    m.forward(Tensor<float>({1, 1, 2, 2}, 1.0f), &tape);
    const auto g = m.backward(tape, 1.0f);
    for (const float v : g.input.storage()) CHECK(v == doctest::Approx(0.5f));
  }

  TEST_CASE("gradient shapes equal parameter shapes") {
    Attention2DConfig cfg;
    cfg.input_size = 16;
    const Model<float> m = build_attention2d(cfg, 3);
    std::mt19937_64 rng(2);
    Tape<float> tape;
    m.forward(oracle::random_tensor<float>({1, 3, 16, 16}, rng), &tape);
    const auto g = m.backward(tape, 1.0f);
    REQUIRE(g.params.size() == m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      CHECK(g.names[i] == m.params[i].name);
      CHECK(g.params[i].shape() == m.params[i].value.shape());
    }
    CHECK(g.input.shape() == Shape{1, 3, 16, 16});
  }

  TEST_CASE("backward before forward is a state error") {
    const Model<float> m = sum_model(3, 1.0f);
    Tape<float> tape;
    CHECK_THROWS_AS(m.backward(tape, 1.0f), StateError);
    CHECK_THROWS_AS(tape.piecewise_signature(), StateError);
    const Model<float> other = sum_model(3, 2.0f);
    other.forward(Tensor<float>({1, 3}), &tape);
    CHECK_THROWS_AS(m.backward(tape, 1.0f), StateError);
  }

  TEST_CASE("tape holds one value per node") {
    const Model<float> m = sum_model(4, 1.0f);
    Tape<float> tape;
    m.forward(Tensor<float>({2, 4}, 1.0f), &tape);
    CHECK(tape.size() == m.nodes.size());
    CHECK_THROWS_AS(m.backward(tape, 1.0f), UsageError);  // batch of 2: not a scalar sink
    const auto g = m.backward(tape, Tensor<float>({2, 1}, 1.0f));
    CHECK(g.params[0].shape() == Shape{4, 1});
  }

  TEST_CASE("input extents are checked and named") {
    const Model<float> m = sum_model(4, 1.0f);
    CHECK_THROWS_AS(m.forward(Tensor<float>({1, 5})), DimensionError);
    CHECK_THROWS_AS(m.forward(Tensor<float>({4})), DimensionError);
  }

  TEST_CASE("validate rejects dangling nodes and bad parameter shapes") {
    ModelBuilder b("bad", {2}, 1);
    b.dense("a", ModelBuilder::input(), 2, 1);
    const std::size_t y = b.dense("b", ModelBuilder::input(), 2, 1);
    CHECK_THROWS_AS(b.finish(y), ConfigError);

    Model<float> m = sum_model(3, 1.0f);
    m.params[1].value = Tensor<float>({2});
    CHECK_THROWS_AS(m.validate(), ConfigError);
  }

  TEST_CASE("Glorot-uniform init stays inside its bound and is seeded") {
    ModelBuilder b("init", {3, 8, 8}, 42);
    std::size_t y = b.conv2d("conv", ModelBuilder::input(), 3, 6, {3, 3}, {1, 1}, {1, 1});
    y = b.global_pool("pool", y);
    y = b.dense("head", y, 6, 1);
    const Model<float> m = b.finish(y);
    const double a = std::sqrt(6.0 / (3 * 9 + 6 * 9));
    double mx = 0.0;
    for (const float v : m.find("init.conv.weight")->value.storage()) mx = std::max(mx, std::abs(double(v)));
    CHECK(mx <= a);
    CHECK(mx > 0.8 * a);
    for (const float v : m.find("init.conv.bias")->value.storage()) CHECK(v == 0.0f);

    ModelBuilder b2("init", {3, 8, 8}, 42);
    std::size_t y2 = b2.conv2d("conv", ModelBuilder::input(), 3, 6, {3, 3}, {1, 1}, {1, 1});
    y2 = b2.global_pool("pool", y2);
    y2 = b2.dense("head", y2, 6, 1);
    CHECK(b2.finish(y2).params[0].value == m.params[0].value);
  }

  TEST_CASE("piecewise signature follows ReLU signs") {
    ModelBuilder b("pw", {2}, 1);
    std::size_t y = b.activation("relu", ModelBuilder::input(), Activation::relu);
    y = b.dense("head", y, 2, 1);
    const Model<float> m = b.finish(y);
    Tape<float> t1, t2, t3;
    m.forward(Tensor<float>({1, 2}, std::vector<float>{1.0f, -1.0f}), &t1);
    m.forward(Tensor<float>({1, 2}, std::vector<float>{2.0f, -3.0f}), &t2);
    m.forward(Tensor<float>({1, 2}, std::vector<float>{-1.0f, -1.0f}), &t3);
    CHECK(t1.piecewise_signature() == t2.piecewise_signature());
    CHECK(t1.piecewise_signature() != t3.piecewise_signature());
  }

  TEST_CASE("float and double twins agree") {
    Attention2DConfig cfg;
    cfg.input_size = 16;
    const Model<float> m = build_attention2d(cfg, 5);
    std::mt19937_64 rng(3);
    const auto x = oracle::random_tensor<float>({2, 3, 16, 16}, rng);
    const auto yf = m.forward(x);
    const auto yd = m.cast<double>().forward(x.cast<double>());
    for (std::size_t i = 0; i < 2; ++i) CHECK(yf[i] == doctest::Approx(yd[i]).epsilon(1e-4));
  }
}
