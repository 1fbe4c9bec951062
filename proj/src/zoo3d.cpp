#include "dfe/zoo3d.hpp"

namespace dfe {

const char* arch3d_name(Arch3DKind kind) {
  switch (kind) {
    case Arch3DKind::i3d_lite: return "i3d_lite";
    case Arch3DKind::res3d_lite: return "res3d_lite";
    case Arch3DKind::mc3_lite: return "mc3_lite";
    case Arch3DKind::r2p1d_lite: return "r2p1d_lite";
  }
  return "?";
}

bool is_arch3d_name(const std::string& name) {
  return name == "i3d_lite" || name == "res3d_lite" || name == "mc3_lite" || name == "r2p1d_lite";
}

Arch3DKind parse_arch3d(const std::string& name) {
  if (name == "i3d_lite") return Arch3DKind::i3d_lite;
  if (name == "res3d_lite") return Arch3DKind::res3d_lite;
  if (name == "mc3_lite") return Arch3DKind::mc3_lite;
  if (name == "r2p1d_lite") return Arch3DKind::r2p1d_lite;
  throw ConfigError("unknown 3D architecture '" + name + "'");
}

void Arch3D::validate() const {
  const std::string who = arch3d_name(kind);
  if (clip_length < 2) throw ConfigError(who + ": clip_length must be >= 2");
  if (input_size < 8) throw ConfigError(who + ": input_size must be >= 8");
  if (temporal_kernel == 0) throw ConfigError(who + ": temporal_kernel must be >= 1");
  if (kind == Arch3DKind::i3d_lite) {
    if (inception_branch_channels.empty()) throw ConfigError(who + ": empty inception plan");
    for (const auto c : inception_branch_channels) {
      if (c == 0) throw ConfigError(who + ": inception branch with zero channels");
    }
    const std::size_t depth = 1 + inception_branch_channels.size();
    if (clip_length < 1 + depth * (temporal_kernel - 1)) {
      throw ConfigError(who + ": clip_length " + std::to_string(clip_length) +
                        " too short for " + std::to_string(depth) +
                        " unpadded temporal convolutions of size " +
                        std::to_string(temporal_kernel));
    }
    return;
  }
  if (temporal_kernel % 2 == 0) throw ConfigError(who + ": temporal_kernel must be odd");
  if (stem_channels == 0) throw ConfigError(who + ": stem_channels must be positive");
  if (stage_channels.empty()) throw ConfigError(who + ": empty stage plan");
  for (const auto c : stage_channels) {
    if (c == 0) throw ConfigError(who + ": stage with zero channels");
  }
}

namespace {

struct ConvSpec {
  Extent3 kernel;
  Extent3 stride;
  Extent3 padding;
};

// One convolution in the flavour of the architecture.
std::size_t conv_unit(ModelBuilder& b, Arch3DKind kind, const std::string& name, std::size_t in,
                      std::size_t cin, std::size_t cout, const ConvSpec& c, Activation mid) {
  if (kind == Arch3DKind::r2p1d_lite) {
    return b.conv2plus1d(name, in, cin, cout, cout, c.kernel, c.stride, c.padding, mid);
  }
  return b.conv3d(name, in, cin, cout, c.kernel, c.stride, c.padding);
}

Model<float> build_residual(const Arch3D& a, std::uint64_t seed) {
  const std::size_t kt = a.temporal_kernel, pt = (kt - 1) / 2;
  ModelBuilder b(arch3d_name(a.kind), {3, a.clip_length, a.input_size, a.input_size}, seed);
  std::size_t x = conv_unit(b, a.kind, "stem", ModelBuilder::input(), 3, a.stem_channels,
                            {{kt, 3, 3}, {1, 2, 2}, {pt, 1, 1}}, Activation::relu);
  x = b.activation("stem.act", x, Activation::relu);
  x = b.pool("stem.pool", x, PoolKind::max, {1, 2, 2}, {1, 2, 2});
  std::size_t channels = a.stem_channels;
  for (std::size_t i = 0; i < a.stage_channels.size(); ++i) {
    const std::string name = "stage" + std::to_string(i + 1);
    const std::size_t cout = a.stage_channels[i];
    const Extent3 stride = i == 0 ? Extent3{1, 2, 2} : Extent3{2, 2, 2};
    const bool temporal = !(a.kind == Arch3DKind::mc3_lite && i >= 1);
    const ConvSpec first{{temporal ? kt : 1, 3, 3}, stride, {temporal ? pt : 0, 1, 1}};
    const ConvSpec second{{temporal ? kt : 1, 3, 3}, {1, 1, 1}, {temporal ? pt : 0, 1, 1}};
    std::size_t y = conv_unit(b, a.kind, name + ".conv1", x, channels, cout, first, Activation::relu);
    y = b.activation(name + ".act1", y, Activation::relu);
    y = conv_unit(b, a.kind, name + ".conv2", y, cout, cout, second, Activation::relu);
    std::size_t shortcut = x;
    if (channels != cout || stride.h != 1 || stride.t != 1) {
      shortcut = conv_unit(b, a.kind, name + ".shortcut", x, channels, cout,
                           {{1, 1, 1}, stride, {0, 0, 0}}, Activation::none);
    }
    y = b.add(name + ".residual", shortcut, y);
    x = b.activation(name + ".act2", y, Activation::relu);
    channels = cout;
  }
  x = b.global_pool("pool", x);
  x = b.dense("head", x, channels, 1);
  return b.finish(x);
}

}  // namespace

void Inception2DConfig::validate() const {
  if (input_size < 8) throw ConfigError("inception2d: input_size must be >= 8");
  if (stem_channels == 0) throw ConfigError("inception2d: stem_channels must be positive");
  if (branch_channels.empty()) throw ConfigError("inception2d: empty stage plan");
  for (const auto c : branch_channels) {
    if (c == 0) throw ConfigError("inception2d: branch with zero channels");
  }
}

Model<float> build_inception2d(const Inception2DConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelBuilder b(kInception2DArch, {3, cfg.input_size, cfg.input_size}, seed);
  std::size_t x = b.conv2d("stem", ModelBuilder::input(), 3, cfg.stem_channels, {3, 3}, {2, 2}, {1, 1});
  x = b.activation("stem.act", x, Activation::relu);
  x = b.pool("stem.pool", x, PoolKind::max, {1, 2, 2}, {1, 2, 2});
  std::size_t channels = cfg.stem_channels;
  for (std::size_t i = 0; i < cfg.branch_channels.size(); ++i) {
    const std::string name = "mixed" + std::to_string(i + 1);
    const std::size_t c = cfg.branch_channels[i];
    if (i > 0) x = b.pool(name + ".reduce", x, PoolKind::max, {1, 2, 2}, {1, 2, 2});
    std::size_t b1 = b.conv2d(name + ".b1", x, channels, c, {1, 1}, {1, 1}, {0, 0});
    b1 = b.activation(name + ".b1.act", b1, Activation::relu);
    std::size_t b2 = b.conv2d(name + ".b2", x, channels, c, {3, 3}, {1, 1}, {1, 1});
    b2 = b.activation(name + ".b2.act", b2, Activation::relu);
    std::size_t b3 = b.pool(name + ".b3.pool", x, PoolKind::max, {1, 3, 3}, {1, 1, 1}, {0, 1, 1});
    b3 = b.conv2d(name + ".b3", b3, channels, c, {1, 1}, {1, 1}, {0, 0});
    b3 = b.activation(name + ".b3.act", b3, Activation::relu);
    x = b.concat(name + ".concat", {b1, b2, b3});
    channels = 3 * c;
  }
  x = b.global_pool("pool", x);
  x = b.dense("head", x, channels, 1);
  return b.finish(x);
}

template <typename T>
Tensor<T> inflate_2d_to_3d(const Tensor<T>& weights2d, std::size_t kt) {
  if (kt < 1) throw ConfigError("inflate_2d_to_3d: kt must be >= 1");
  if (weights2d.rank() != 4) {
    throw DimensionError("inflate_2d_to_3d: expected [K,C,kh,kw] weights, got " +
                         shape_str(weights2d.shape()));
  }
  const std::size_t k = weights2d.dim(0), c = weights2d.dim(1);
  const std::size_t plane = weights2d.dim(2) * weights2d.dim(3);
  Tensor<T> out({k, c, kt, weights2d.dim(2), weights2d.dim(3)});
  const T scale = T(1) / static_cast<T>(kt);
  for (std::size_t kc = 0; kc < k * c; ++kc) {
    const T* src = weights2d.data() + kc * plane;
    for (std::size_t t = 0; t < kt; ++t) {
      T* dst = out.data() + (kc * kt + t) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = kt == 1 ? src[i] : src[i] * scale;
    }
  }
  return out;
}

template Tensor<float> inflate_2d_to_3d(const Tensor<float>&, std::size_t);
template Tensor<double> inflate_2d_to_3d(const Tensor<double>&, std::size_t);

Model<float> inflate_model(const Model<float>& model2d, std::size_t kt, std::size_t clip_length,
                           const std::string& arch) {
  if (kt < 1) throw ConfigError("inflate_model: kt must be >= 1");
  if (model2d.input_shape.size() != 3) throw ConfigError("inflate_model: source is not a 2D model");
  Model<float> m;
  m.arch = arch;
  m.input_shape = {model2d.input_shape[0], clip_length, model2d.input_shape[1],
                   model2d.input_shape[2]};
  m.output = model2d.output;
  m.attention_map = model2d.attention_map;
  const std::string old_prefix = model2d.arch + ".";
  for (const auto& p : model2d.params) {
    std::string name = p.name.starts_with(old_prefix) ? p.name.substr(old_prefix.size()) : p.name;
    m.params.push_back({arch + "." + name, p.value});
  }
  for (LayerNode node : model2d.nodes) {
    switch (node.kind) {
      case LayerKind::conv2d: {
        node.kind = LayerKind::conv3d;
        node.hyper.kernel.t = kt;
        node.hyper.stride.t = 1;
        node.hyper.padding.t = 0;
        auto& w = m.params[node.params[0]].value;
        w = inflate_2d_to_3d(w, kt);
        break;
      }
      case LayerKind::pool:
        node.hyper.kernel.t = 1;
        node.hyper.stride.t = 1;
        node.hyper.padding.t = 0;
        break;
      case LayerKind::depthwise2d:
      case LayerKind::upsample:
        throw ConfigError("inflate_model: layer '" + node.name + "' (" +
                          layer_kind_name(node.kind) + ") has no 3D counterpart");
      default:
        break;
    }
    m.nodes.push_back(std::move(node));
  }
  m.validate();
  return m;
}

Model<float> build_3d(const Arch3D& arch, std::uint64_t seed) {
  arch.validate();
  if (arch.kind == Arch3DKind::i3d_lite) {
    Inception2DConfig cfg;
    cfg.input_size = arch.input_size;
    cfg.stem_channels = arch.stem_channels;
    cfg.branch_channels = arch.inception_branch_channels;
    return inflate_model(build_inception2d(cfg, seed), arch.temporal_kernel, arch.clip_length,
                         arch3d_name(arch.kind));
  }
  return build_residual(arch, seed);
}

double forward_clip(const Model<float>& model, const Tensor<float>& clip) {
  if (clip.rank() != 4) {
    throw DimensionError(model.arch + ": clip must be [3,T,H,W], got " + shape_str(clip.shape()));
  }
  Shape s{1};
  s.insert(s.end(), clip.shape().begin(), clip.shape().end());
  return model.forward(clip.reshaped(s))[0];
}

const char* vote_mode_name(VoteMode mode) { return mode == VoteMode::soft ? "soft" : "hard"; }

VoteMode parse_vote_mode(const std::string& name) {
  if (name == "soft") return VoteMode::soft;
  if (name == "hard") return VoteMode::hard;
  throw ConfigError("unknown vote mode '" + name + "'");
}

double vote_3d(std::span<const double> probabilities, VoteMode mode) {
  if (probabilities.empty()) throw UsageError("vote_3d: no model probabilities");
  double acc = 0.0;
  for (const double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw UsageError("vote_3d: probability outside [0,1]");
    acc += mode == VoteMode::soft ? p : (p > 0.5 ? 1.0 : 0.0);
  }
  return acc / static_cast<double>(probabilities.size());
}

}  // namespace dfe
