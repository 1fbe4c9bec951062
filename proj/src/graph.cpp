#include "dfe/graph.hpp"

#include <cmath>
#include <cstring>

namespace dfe {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::conv2plus1d: return "conv2plus1d";
    case LayerKind::depthwise2d: return "depthwise2d";
    case LayerKind::dense: return "dense";
    case LayerKind::pool: return "pool";
    case LayerKind::activation: return "activation";
    case LayerKind::upsample: return "upsample";
    case LayerKind::attention_mul: return "attention-mul";
    case LayerKind::add: return "add";
    case LayerKind::concat: return "concat";
    case LayerKind::global_pool: return "global-pool";
  }
  return "?";
}

namespace {

Extent2 spatial(Extent3 e) { return {e.h, e.w}; }

template <typename T>
void accumulate(Tensor<T>& dst, Tensor<T>&& src) {
  if (dst.empty()) {
    dst = std::move(src);
    return;
  }
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;
  void byte(std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  void word(std::uint64_t w) {
    for (int i = 0; i < 8; ++i) byte(static_cast<std::uint8_t>(w >> (8 * i)));
  }
};

template <typename T>
void hash_signs(Fnv& f, const Tensor<T>& t) {
  std::uint8_t acc = 0;
  std::size_t bits = 0;
  for (const T v : t.values()) {
    acc = static_cast<std::uint8_t>((acc << 1) | (v > T(0) ? 1 : 0));
    if (++bits == 8) {
      f.byte(acc);
      acc = 0;
      bits = 0;
    }
  }
  f.byte(acc);
}

}  // namespace

template <typename T>
std::uint64_t Tape<T>::piecewise_signature() const {
  if (empty() || owner_ == nullptr) throw StateError("piecewise_signature: empty tape");
  Fnv f;
  const auto& nodes = owner_->nodes;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const LayerNode& node = nodes[i];
    f.word(i);
    if (node.kind == LayerKind::activation && node.hyper.activation == Activation::relu) {
      hash_signs(f, values_[node.inputs[0]]);
    } else if (node.kind == LayerKind::pool && node.hyper.pool == PoolKind::max) {
      for (const auto a : aux_[i]) f.word(static_cast<std::uint64_t>(a));
    } else if (node.kind == LayerKind::conv2plus1d && node.hyper.activation == Activation::relu) {
      const auto& ws = owner_->params[node.params[0]].value;
      const Tensor<T> z = conv3d(values_[node.inputs[0]], ws, {1, node.hyper.stride.h, node.hyper.stride.w},
                                 {0, node.hyper.padding.h, node.hyper.padding.w});
      hash_signs(f, z);
    }
  }
  return f.h;
}

template <typename T>
const Tensor<T>& Gradients<T>::operator[](const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return params[i];
  }
  throw UsageError("no gradient for parameter '" + name + "'");
}

template <typename T>
void Model<T>::check_batch(const Tensor<T>& batch) const {
  if (batch.rank() != input_shape.size() + 1) {
    throw DimensionError(arch + ": expected rank " + std::to_string(input_shape.size() + 1) +
                         " batch " + shape_str(input_shape) + " with leading N, got " +
                         shape_str(batch.shape()));
  }
  static const char* names5[] = {"C", "T", "H", "W"};
  static const char* names4[] = {"C", "H", "W"};
  for (std::size_t a = 0; a < input_shape.size(); ++a) {
    if (batch.dim(a + 1) != input_shape[a]) {
      const char* axis = "?";
      if (input_shape.size() == 4) axis = names5[a];
      else if (input_shape.size() == 3) axis = names4[a];
      throw DimensionError(arch + ": input axis " + axis + " has extent " +
                           std::to_string(batch.dim(a + 1)) + ", expected " +
                           std::to_string(input_shape[a]));
    }
  }
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch, Tape<T>* tape) const {
  check_batch(batch);
  std::vector<Tensor<T>> values;
  values.reserve(nodes.size() + 1);
  values.push_back(batch);
  std::vector<std::vector<std::int64_t>> aux(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const LayerNode& node = nodes[i];
    const auto& h = node.hyper;
    const Tensor<T>& x = values[node.inputs[0]];
    auto param = [&](std::size_t k) -> const Tensor<T>& { return params[node.params[k]].value; };
    Tensor<T> y;
    switch (node.kind) {
      case LayerKind::conv2d:
        y = conv2d(x, param(0), spatial(h.stride), spatial(h.padding));
        if (h.bias) add_channel_bias(y, param(1));
        break;
      case LayerKind::conv3d:
        y = conv3d(x, param(0), h.stride, h.padding);
        if (h.bias) add_channel_bias(y, param(1));
        break;
      case LayerKind::conv2plus1d:
        y = conv2plus1d(x, param(0), param(1), h.stride, h.padding, h.activation);
        if (h.bias) add_channel_bias(y, param(2));
        break;
      case LayerKind::depthwise2d:
        y = depthwise_conv2d(x, param(0), spatial(h.stride), spatial(h.padding));
        if (h.bias) add_channel_bias(y, param(1));
        break;
      case LayerKind::dense:
        y = dense(x, param(0), param(1));
        break;
      case LayerKind::pool: {
        auto r = pool(x, h.pool, h.kernel, h.stride, h.padding);
        y = std::move(r.output);
        aux[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::activation:
        y = activation(x, h.activation);
        break;
      case LayerKind::upsample:
        y = upsample_nearest(x, static_cast<double>(h.factor));
        break;
      case LayerKind::attention_mul:
        y = attention_mul(x, values[node.inputs[1]]);
        break;
      case LayerKind::add:
        y = dfe::add(x, values[node.inputs[1]]);
        break;
      case LayerKind::concat: {
        std::vector<const Tensor<T>*> ins;
        for (const auto id : node.inputs) ins.push_back(&values[id]);
        y = concat_channels(ins);
        break;
      }
      case LayerKind::global_pool:
        y = global_avg_pool(x);
        break;
    }
    values.push_back(std::move(y));
  }
  Tensor<T> out = values[output];
  if (tape) {
    tape->values_ = std::move(values);
    tape->aux_ = std::move(aux);
    tape->owner_ = this;
  }
  return out;
}

template <typename T>
Gradients<T> Model<T>::backward(const Tape<T>& tape, const Tensor<T>& output_grad) const {
  if (tape.empty()) throw StateError(arch + ": backward called before forward");
  if (tape.owner_ != this || tape.values_.size() != nodes.size() + 1) {
    throw StateError(arch + ": tape was recorded by a different model");
  }
  const auto& values = tape.values_;
  if (output_grad.shape() != values[output].shape()) {
    throw DimensionError(arch + ": loss gradient shape " + shape_str(output_grad.shape()) +
                         " does not match output " + shape_str(values[output].shape()));
  }
  std::vector<Tensor<T>> vgrad(values.size());
  vgrad[output] = output_grad;
  Gradients<T> g;
  g.names.reserve(params.size());
  g.params.reserve(params.size());
  for (const auto& p : params) {
    g.names.push_back(p.name);
    g.params.emplace_back(p.value.shape());
  }
  auto add_param = [&](std::size_t idx, Tensor<T>&& t) {
    Tensor<T>& dst = g.params[idx];
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += t[i];
  };
  std::size_t visited = 0;
  for (std::size_t i = nodes.size(); i-- > 0;) {
    ++visited;
    const LayerNode& node = nodes[i];
    Tensor<T>& dy = vgrad[i + 1];
    if (dy.empty()) continue;  // does not reach the sink
    const auto& h = node.hyper;
    const std::size_t in0 = node.inputs[0];
    const Tensor<T>& x = values[in0];
    auto param = [&](std::size_t k) -> const Tensor<T>& { return params[node.params[k]].value; };
    switch (node.kind) {
      case LayerKind::conv2d: {
        if (h.bias) add_param(node.params[1], channel_bias_grad(dy));
        auto cg = conv2d_backward(x, param(0), dy, spatial(h.stride), spatial(h.padding));
        add_param(node.params[0], std::move(cg.kernel));
        accumulate(vgrad[in0], std::move(cg.input));
        break;
      }
      case LayerKind::conv3d: {
        if (h.bias) add_param(node.params[1], channel_bias_grad(dy));
        auto cg = conv3d_backward(x, param(0), dy, h.stride, h.padding);
        add_param(node.params[0], std::move(cg.kernel));
        accumulate(vgrad[in0], std::move(cg.input));
        break;
      }
      case LayerKind::conv2plus1d: {
        if (h.bias) add_param(node.params[2], channel_bias_grad(dy));
        auto cg = conv2plus1d_backward(x, param(0), param(1), dy, h.stride, h.padding,
                                       h.activation);
        add_param(node.params[0], std::move(cg.spatial_kernel));
        add_param(node.params[1], std::move(cg.temporal_kernel));
        accumulate(vgrad[in0], std::move(cg.input));
        break;
      }
      case LayerKind::depthwise2d: {
        if (h.bias) add_param(node.params[1], channel_bias_grad(dy));
        auto cg = depthwise_conv2d_backward(x, param(0), dy, spatial(h.stride), spatial(h.padding));
        add_param(node.params[0], std::move(cg.kernel));
        accumulate(vgrad[in0], std::move(cg.input));
        break;
      }
      case LayerKind::dense: {
        auto dg = dense_backward(x, param(0), dy);
        add_param(node.params[0], std::move(dg.weight));
        add_param(node.params[1], std::move(dg.bias));
        accumulate(vgrad[in0], std::move(dg.input));
        break;
      }
      case LayerKind::pool:
        accumulate(vgrad[in0], pool_backward(x.shape(), dy, h.pool, h.kernel, h.stride,
                                             h.padding, tape.aux_[i]));
        break;
      case LayerKind::activation:
        accumulate(vgrad[in0], activation_backward(x, values[i + 1], dy, h.activation));
        break;
      case LayerKind::upsample:
        accumulate(vgrad[in0], upsample_nearest_backward(dy, h.factor));
        break;
      case LayerKind::attention_mul: {
        auto ag = attention_mul_backward(x, values[node.inputs[1]], dy);
        accumulate(vgrad[in0], std::move(ag.features));
        accumulate(vgrad[node.inputs[1]], std::move(ag.map));
        break;
      }
      case LayerKind::add: {
        Tensor<T> copy = dy;
        accumulate(vgrad[in0], std::move(copy));
        accumulate(vgrad[node.inputs[1]], std::move(dy));
        break;
      }
      case LayerKind::concat: {
        std::vector<Shape> shapes;
        for (const auto id : node.inputs) shapes.push_back(values[id].shape());
        auto parts = concat_channels_backward(shapes, dy);
        for (std::size_t k = 0; k < parts.size(); ++k) {
          accumulate(vgrad[node.inputs[k]], std::move(parts[k]));
        }
        break;
      }
      case LayerKind::global_pool:
        accumulate(vgrad[in0], global_avg_pool_backward(x.shape(), dy));
        break;
    }
    dy = Tensor<T>();  // release
  }
  if (visited != nodes.size()) throw StateError("backward: tape traversal incomplete");
  g.input = vgrad[0].empty() ? Tensor<T>(values[0].shape()) : std::move(vgrad[0]);
  return g;
}

template <typename T>
Gradients<T> Model<T>::backward(const Tape<T>& tape, T loss_grad) const {
  if (tape.empty()) throw StateError(arch + ": backward called before forward");
  const Tensor<T>& out = tape.value(output);
  if (out.numel() != 1) {
    throw UsageError(arch + ": scalar loss gradient needs a single-element sink, output is " +
                     shape_str(out.shape()));
  }
  return backward(tape, Tensor<T>(out.shape(), loss_grad));
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

template <typename T>
Parameter<T>* Model<T>::find(const std::string& name) {
  for (auto& p : params) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
const Parameter<T>* Model<T>::find(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
void Model<T>::validate() const {
  const auto fail = [&](const LayerNode& n, const std::string& why) {
    throw ConfigError(arch + ": node '" + n.name + "' (" + layer_kind_name(n.kind) + "): " + why);
  };
  std::vector<int> consumed(nodes.size() + 1, 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const LayerNode& n = nodes[i];
    if (n.inputs.empty()) fail(n, "no inputs");
    for (const auto id : n.inputs) {
      if (id > i) fail(n, "input refers forward (cycle)");
      consumed[id] = 1;
    }
    std::size_t want_inputs = 1;
    if (n.kind == LayerKind::attention_mul || n.kind == LayerKind::add) want_inputs = 2;
    if (n.kind != LayerKind::concat && n.inputs.size() != want_inputs) fail(n, "wrong input count");
    auto shape_of = [&](std::size_t k) -> const Shape& {
      if (k >= n.params.size() || n.params[k] >= params.size()) fail(n, "missing parameter");
      return params[n.params[k]].value.shape();
    };
    const auto& h = n.hyper;
    const std::size_t nb = h.bias ? 1 : 0;
    switch (n.kind) {
      case LayerKind::conv2d: {
        const Shape& k = shape_of(0);
        if (n.params.size() != 1 + nb || k.size() != 4 || k[2] != h.kernel.h || k[3] != h.kernel.w) {
          fail(n, "kernel shape disagrees with hyper-parameters");
        }
        if (h.bias && shape_of(1) != Shape{k[0]}) fail(n, "bias length");
        break;
      }
      case LayerKind::conv3d: {
        const Shape& k = shape_of(0);
        if (n.params.size() != 1 + nb || k.size() != 5 || k[2] != h.kernel.t ||
            k[3] != h.kernel.h || k[4] != h.kernel.w) {
          fail(n, "kernel shape disagrees with hyper-parameters");
        }
        if (h.bias && shape_of(1) != Shape{k[0]}) fail(n, "bias length");
        break;
      }
      case LayerKind::conv2plus1d: {
        const Shape& s = shape_of(0);
        const Shape& t = shape_of(1);
        if (n.params.size() != 2 + nb || s.size() != 5 || t.size() != 5 || s[2] != 1 ||
            s[3] != h.kernel.h || s[4] != h.kernel.w || t[1] != s[0] || t[2] != h.kernel.t ||
            t[3] != 1 || t[4] != 1) {
          fail(n, "factor shapes disagree with hyper-parameters");
        }
        if (h.bias && shape_of(2) != Shape{t[0]}) fail(n, "bias length");
        break;
      }
      case LayerKind::depthwise2d: {
        const Shape& k = shape_of(0);
        if (n.params.size() != 1 + nb || k.size() != 4 || k[1] != 1) fail(n, "kernel must be [C,1,kh,kw]");
        if (h.bias && shape_of(1) != Shape{k[0]}) fail(n, "bias length");
        break;
      }
      case LayerKind::dense: {
        const Shape& w = shape_of(0);
        if (n.params.size() != 2 || w.size() != 2 || shape_of(1) != Shape{w[1]}) {
          fail(n, "weight [D,K] and bias [K] expected");
        }
        break;
      }
      default:
        if (!n.params.empty()) fail(n, "takes no parameters");
    }
  }
  if (nodes.empty()) return;
  if (output == 0 || output > nodes.size()) throw ConfigError(arch + ": sink is not a node output");
  std::size_t sinks = 0;
  for (std::size_t v = 1; v <= nodes.size(); ++v) {
    if (!consumed[v]) {
      ++sinks;
      if (v != output) throw ConfigError(arch + ": dangling node '" + nodes[v - 1].name + "'");
    }
  }
  if (sinks != 1) throw ConfigError(arch + ": graph must have exactly one sink");
}

ModelBuilder::ModelBuilder(std::string arch, Shape input_shape, std::uint64_t seed)
    : rng_(seed) {
  model_.arch = std::move(arch);
  model_.input_shape = std::move(input_shape);
}

std::size_t ModelBuilder::add_node(LayerNode node) {
  model_.nodes.push_back(std::move(node));
  return model_.nodes.size();
}

std::size_t ModelBuilder::add_param(const std::string& name, Shape shape, std::size_t fan_in,
                                    std::size_t fan_out) {
  Tensor<float> t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : t.values()) v = static_cast<float>(dist(rng_));
  model_.params.push_back({model_.arch + "." + name, std::move(t)});
  return model_.params.size() - 1;
}

std::size_t ModelBuilder::add_bias(const std::string& name, std::size_t n) {
  model_.params.push_back({model_.arch + "." + name, Tensor<float>({n})});
  return model_.params.size() - 1;
}

namespace {
void require_positive(const std::string& op, std::size_t v, const char* what) {
  if (v == 0) throw ConfigError(op + ": " + what + " must be positive");
}
}  // namespace

std::size_t ModelBuilder::conv2d(const std::string& name, std::size_t in, std::size_t cin,
                                 std::size_t cout, Extent2 kernel, Extent2 stride,
                                 Extent2 padding, bool bias) {
  require_positive(name, cin, "input channels");
  require_positive(name, cout, "output channels");
  const std::size_t vol = kernel.h * kernel.w;
  LayerNode n{name, LayerKind::conv2d, {in}, {}, {}};
  n.hyper.kernel = {1, kernel.h, kernel.w};
  n.hyper.stride = {1, stride.h, stride.w};
  n.hyper.padding = {0, padding.h, padding.w};
  n.hyper.bias = bias;
  n.params.push_back(add_param(name + ".weight", {cout, cin, kernel.h, kernel.w}, cin * vol, cout * vol));
  if (bias) n.params.push_back(add_bias(name + ".bias", cout));
  return add_node(std::move(n));
}

std::size_t ModelBuilder::conv3d(const std::string& name, std::size_t in, std::size_t cin,
                                 std::size_t cout, Extent3 kernel, Extent3 stride,
                                 Extent3 padding, bool bias) {
  require_positive(name, cin, "input channels");
  require_positive(name, cout, "output channels");
  const std::size_t vol = kernel.t * kernel.h * kernel.w;
  LayerNode n{name, LayerKind::conv3d, {in}, {}, {}};
  n.hyper.kernel = kernel;
  n.hyper.stride = stride;
  n.hyper.padding = padding;
  n.hyper.bias = bias;
  n.params.push_back(add_param(name + ".weight", {cout, cin, kernel.t, kernel.h, kernel.w},
                               cin * vol, cout * vol));
  if (bias) n.params.push_back(add_bias(name + ".bias", cout));
  return add_node(std::move(n));
}

std::size_t ModelBuilder::conv2plus1d(const std::string& name, std::size_t in, std::size_t cin,
                                      std::size_t mid, std::size_t cout, Extent3 kernel,
                                      Extent3 stride, Extent3 padding, Activation mid_activation,
                                      bool bias) {
  require_positive(name, cin, "input channels");
  require_positive(name, mid, "intermediate channel count M");
  require_positive(name, cout, "output channels");
  LayerNode n{name, LayerKind::conv2plus1d, {in}, {}, {}};
  n.hyper.kernel = kernel;
  n.hyper.stride = stride;
  n.hyper.padding = padding;
  n.hyper.activation = mid_activation;
  n.hyper.bias = bias;
  const std::size_t sv = kernel.h * kernel.w;
  n.params.push_back(add_param(name + ".spatial", {mid, cin, 1, kernel.h, kernel.w}, cin * sv, mid * sv));
  n.params.push_back(add_param(name + ".temporal", {cout, mid, kernel.t, 1, 1}, mid * kernel.t,
                               cout * kernel.t));
  if (bias) n.params.push_back(add_bias(name + ".bias", cout));
  return add_node(std::move(n));
}

std::size_t ModelBuilder::depthwise2d(const std::string& name, std::size_t in,
                                      std::size_t channels, Extent2 kernel, Extent2 stride,
                                      Extent2 padding, bool bias) {
  require_positive(name, channels, "channels");
  LayerNode n{name, LayerKind::depthwise2d, {in}, {}, {}};
  n.hyper.kernel = {1, kernel.h, kernel.w};
  n.hyper.stride = {1, stride.h, stride.w};
  n.hyper.padding = {0, padding.h, padding.w};
  n.hyper.bias = bias;
  const std::size_t vol = kernel.h * kernel.w;
  n.params.push_back(add_param(name + ".weight", {channels, 1, kernel.h, kernel.w}, vol, vol));
  if (bias) n.params.push_back(add_bias(name + ".bias", channels));
  return add_node(std::move(n));
}

std::size_t ModelBuilder::dense(const std::string& name, std::size_t in, std::size_t din,
                                std::size_t dout) {
  require_positive(name, din, "input features");
  require_positive(name, dout, "output features");
  LayerNode n{name, LayerKind::dense, {in}, {}, {}};
  n.params.push_back(add_param(name + ".weight", {din, dout}, din, dout));
  n.params.push_back(add_bias(name + ".bias", dout));
  return add_node(std::move(n));
}

std::size_t ModelBuilder::pool(const std::string& name, std::size_t in, PoolKind kind,
                               Extent3 window, Extent3 stride, Extent3 padding) {
  LayerNode n{name, LayerKind::pool, {in}, {}, {}};
  n.hyper.pool = kind;
  n.hyper.kernel = window;
  n.hyper.stride = stride;
  n.hyper.padding = padding;
  return add_node(std::move(n));
}

std::size_t ModelBuilder::activation(const std::string& name, std::size_t in, Activation kind) {
  LayerNode n{name, LayerKind::activation, {in}, {}, {}};
  n.hyper.activation = kind;
  return add_node(std::move(n));
}

std::size_t ModelBuilder::upsample(const std::string& name, std::size_t in, std::size_t factor) {
  require_positive(name, factor, "upsample factor");
  LayerNode n{name, LayerKind::upsample, {in}, {}, {}};
  n.hyper.factor = factor;
  return add_node(std::move(n));
}

std::size_t ModelBuilder::attention_mul(const std::string& name, std::size_t features,
                                        std::size_t map) {
  return add_node({name, LayerKind::attention_mul, {features, map}, {}, {}});
}

std::size_t ModelBuilder::add(const std::string& name, std::size_t a, std::size_t b) {
  return add_node({name, LayerKind::add, {a, b}, {}, {}});
}

std::size_t ModelBuilder::concat(const std::string& name, std::vector<std::size_t> inputs) {
  return add_node({name, LayerKind::concat, std::move(inputs), {}, {}});
}

std::size_t ModelBuilder::global_pool(const std::string& name, std::size_t in) {
  return add_node({name, LayerKind::global_pool, {in}, {}, {}});
}

Model<float> ModelBuilder::finish(std::size_t output) {
  model_.output = output;
  model_.validate();
  return std::move(model_);
}

template class Tape<float>;
template class Tape<double>;
template struct Gradients<float>;
template struct Gradients<double>;
template class Model<float>;
template class Model<double>;

}  // namespace dfe
