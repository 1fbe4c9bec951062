#pragma once

// Static layer graphs with a gradient tape.
//
// A Model is a list of LayerNodes in topological order. Node inputs refer to
// value ids: value 0 is the model input and value i+1 is the output of node i,
// so every edge points backwards and the graph is acyclic by construction.
// forward() optionally records every value on a Tape; backward() replays the
// tape in reverse, visiting each recorded node exactly once.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dfe/kernels.hpp"
#include "dfe/tensor.hpp"

namespace dfe {

enum class LayerKind {
  conv2d,
  conv3d,
  conv2plus1d,
  depthwise2d,
  dense,
  pool,
  activation,
  upsample,
  attention_mul,
  add,
  concat,
  global_pool,
};

const char* layer_kind_name(LayerKind kind);

struct LayerHyper {
  Extent3 kernel{1, 1, 1};  // conv kernel / pool window
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
  Activation activation = Activation::none;  // activation nodes; conv2plus1d intermediate
  PoolKind pool = PoolKind::max;
  std::size_t factor = 1;  // upsample
  bool bias = true;        // conv/dense nodes carry a trailing bias parameter
};

struct LayerNode {
  std::string name;
  LayerKind kind;
  std::vector<std::size_t> inputs;  // value ids
  std::vector<std::size_t> params;  // indices into Model::params
  LayerHyper hyper;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

template <typename T>
class Model;

template <typename T>
class Tape {
 public:
  bool empty() const { return values_.empty(); }
  // Number of recorded nodes (the input value is not a node).
  std::size_t size() const { return values_.empty() ? 0 : values_.size() - 1; }
  const Tensor<T>& value(std::size_t id) const { return values_.at(id); }
  void clear() {
    values_.clear();
    aux_.clear();
    owner_ = nullptr;
  }

  // Hash of every discrete branch decision taken by the forward pass (ReLU
  // signs, max-pool winners). Two passes with equal signatures lie on the same
  // smooth piece of a piecewise-smooth network.
  std::uint64_t piecewise_signature() const;

 private:
  friend class Model<T>;
  std::vector<Tensor<T>> values_;
  std::vector<std::vector<std::int64_t>> aux_;
  const Model<T>* owner_ = nullptr;
};

template <typename T>
struct Gradients {
  std::vector<std::string> names;
  std::vector<Tensor<T>> params;  // aligned with Model::params
  Tensor<T> input;

  const Tensor<T>& operator[](const std::string& name) const;
};

template <typename T>
class Model {
 public:
  std::string arch;          // prefix of every parameter name
  Shape input_shape;         // per-sample shape, without the batch axis
  std::vector<LayerNode> nodes;
  std::vector<Parameter<T>> params;
  std::size_t output = 0;                   // value id of the sink
  std::optional<std::size_t> attention_map;  // value id of the sigmoid attention map

  // batch: [N, input_shape...]
  Tensor<T> forward(const Tensor<T>& batch, Tape<T>* tape = nullptr) const;
  Gradients<T> backward(const Tape<T>& tape, const Tensor<T>& output_grad) const;
  // Single-element sink only.
  Gradients<T> backward(const Tape<T>& tape, T loss_grad) const;

  std::size_t parameter_count() const;
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;

  // Structural checks: edges point backwards, parameter shapes agree with the
  // node kind, and exactly one node output (the sink) is left unconsumed.
  void validate() const;

  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.arch = arch;
    m.input_shape = input_shape;
    m.nodes = nodes;
    m.output = output;
    m.attention_map = attention_map;
    m.params.reserve(params.size());
    for (const auto& p : params) m.params.push_back({p.name, p.value.template cast<U>()});
    return m;
  }

 private:
  void check_batch(const Tensor<T>& batch) const;
};

// Builds float models with Glorot-uniform weights, U(-a, a) with
// a = sqrt(6 / (fan_in + fan_out)) and fan = channels x kernel volume, drawn
// in parameter-creation order from a seeded engine. Biases start at zero.
class ModelBuilder {
 public:
  ModelBuilder(std::string arch, Shape input_shape, std::uint64_t seed);

  static constexpr std::size_t input() { return 0; }

  std::size_t conv2d(const std::string& name, std::size_t in, std::size_t cin, std::size_t cout,
                     Extent2 kernel, Extent2 stride, Extent2 padding, bool bias = true);
  std::size_t conv3d(const std::string& name, std::size_t in, std::size_t cin, std::size_t cout,
                     Extent3 kernel, Extent3 stride, Extent3 padding, bool bias = true);
  // spatial kernel (1,kh,kw) to `mid` channels, then temporal kernel (kt,1,1).
  std::size_t conv2plus1d(const std::string& name, std::size_t in, std::size_t cin,
                          std::size_t mid, std::size_t cout, Extent3 kernel, Extent3 stride,
                          Extent3 padding, Activation mid_activation, bool bias = true);
  std::size_t depthwise2d(const std::string& name, std::size_t in, std::size_t channels,
                          Extent2 kernel, Extent2 stride, Extent2 padding, bool bias = true);
  std::size_t dense(const std::string& name, std::size_t in, std::size_t din, std::size_t dout);
  std::size_t pool(const std::string& name, std::size_t in, PoolKind kind, Extent3 window,
                   Extent3 stride, Extent3 padding = {0, 0, 0});
  std::size_t activation(const std::string& name, std::size_t in, Activation kind);
  std::size_t upsample(const std::string& name, std::size_t in, std::size_t factor);
  std::size_t attention_mul(const std::string& name, std::size_t features, std::size_t map);
  std::size_t add(const std::string& name, std::size_t a, std::size_t b);
  std::size_t concat(const std::string& name, std::vector<std::size_t> inputs);
  std::size_t global_pool(const std::string& name, std::size_t in);

  void mark_attention_map(std::size_t value) { model_.attention_map = value; }

  // Finalizes with `output` as the sink and runs Model::validate.
  Model<float> finish(std::size_t output);

 private:
  std::size_t add_node(LayerNode node);
  std::size_t add_param(const std::string& name, Shape shape, std::size_t fan_in,
                        std::size_t fan_out);
  std::size_t add_bias(const std::string& name, std::size_t n);

  Model<float> model_;
  std::mt19937_64 rng_;
};

}  // namespace dfe
