#include "dfe/attention2d.hpp"

#include <cmath>

namespace dfe {

void Attention2DConfig::validate() const {
  if (input_size == 0 || input_size % 8 != 0) {
    throw ConfigError("attention2d: input_size must be a positive multiple of 8, got " +
                      std::to_string(input_size));
  }
  if (stem_channels == 0) throw ConfigError("attention2d: stem_channels must be positive");
  if (expansion == 0) throw ConfigError("attention2d: expansion must be positive");
  if (blocks.empty()) throw ConfigError("attention2d: block plan is empty");
  std::size_t size = input_size / 2;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.out_channels == 0) {
      throw ConfigError("attention2d: block " + std::to_string(i + 1) + " has zero channels");
    }
    if (b.stride != 1 && b.stride != 2) {
      throw ConfigError("attention2d: block " + std::to_string(i + 1) + " stride must be 1 or 2");
    }
    size = (size + b.stride - 1) / b.stride;
    if (size == 0) throw ConfigError("attention2d: spatial size collapses to zero");
  }
  if (attention_after_block >= blocks.size()) {
    throw ConfigError("attention2d: attention_after_block (" +
                      std::to_string(attention_after_block) +
                      ") must be smaller than the number of blocks (" +
                      std::to_string(blocks.size()) + ")");
  }
}

Model<float> build_attention2d(const Attention2DConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelBuilder b(kAttention2DArch, {3, cfg.input_size, cfg.input_size}, seed);
  std::size_t x = b.conv2d("stem", ModelBuilder::input(), 3, cfg.stem_channels, {3, 3}, {2, 2}, {1, 1});
  x = b.activation("stem.act", x, Activation::swish);
  std::size_t channels = cfg.stem_channels;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const auto& plan = cfg.blocks[i];
    const std::string name = "block" + std::to_string(i + 1);
    const std::size_t wide = channels * cfg.expansion;
    const std::size_t s = plan.stride;
    std::size_t y = b.conv2d(name + ".expand", x, channels, wide, {1, 1}, {1, 1}, {0, 0});
    y = b.activation(name + ".expand.act", y, Activation::swish);
    y = b.depthwise2d(name + ".dw", y, wide, {3, 3}, {s, s}, {1, 1});
    y = b.activation(name + ".dw.act", y, Activation::swish);
    y = b.conv2d(name + ".project", y, wide, plan.out_channels, {1, 1}, {1, 1}, {0, 0});
    if (channels == plan.out_channels && s == 1) y = b.add(name + ".residual", x, y);
    x = y;
    channels = plan.out_channels;
    if (cfg.attention_after_block == i + 1) {
      std::size_t m = b.conv2d("attention.conv", x, channels, 1, {1, 1}, {1, 1}, {0, 0},
                               cfg.attention_bias);
      m = b.activation("attention.sigmoid", m, Activation::sigmoid);
      b.mark_attention_map(m);
      x = b.attention_mul("attention.mul", x, m);
    }
  }
  x = b.global_pool("pool", x);
  x = b.dense("head", x, channels, 1);
  Model<float> model = b.finish(x);
  if (cfg.zero_heads) {
    for (auto& p : model.params) {
      if (p.name.starts_with(std::string(kAttention2DArch) + ".attention.") ||
          p.name.starts_with(std::string(kAttention2DArch) + ".head.")) {
        p.value.fill(0.0f);
      }
    }
  }
  return model;
}

AttentionBlockOutput attention_block(const Tensor<float>& features, const Tensor<float>& kernel,
                                     float bias) {
  expect_rank("attention_block", features.rank(), 4);
  if (kernel.shape() != Shape{1, features.dim(1), 1, 1}) {
    throw DimensionError("attention_block: kernel must be [1," + std::to_string(features.dim(1)) +
                         ",1,1], got " + shape_str(kernel.shape()));
  }
  Tensor<float> logits = conv2d(features, kernel, {1, 1}, {0, 0});
  add_channel_bias(logits, Tensor<float>({1}, bias));
  Tensor<float> map = activation(logits, Activation::sigmoid);
  Tensor<float> attended = attention_mul(features, map);
  return {std::move(attended), std::move(map)};
}

namespace {

void check_face(const Model<float>& model, const Tensor<float>& face) {
  if (face.rank() != 3) {
    throw DimensionError(model.arch + ": face must be [3,H,W], got " + shape_str(face.shape()));
  }
}

}  // namespace

std::vector<double> score_batch(const Model<float>& model, const Tensor<float>& batch) {
  const Tensor<float> out = model.forward(batch);
  std::vector<double> scores(out.numel());
  for (std::size_t i = 0; i < out.numel(); ++i) scores[i] = out[i];
  return scores;
}

double forward_score(const Model<float>& model, const Tensor<float>& face) {
  check_face(model, face);
  Shape s{1};
  s.insert(s.end(), face.shape().begin(), face.shape().end());
  return score_batch(model, face.reshaped(s)).at(0);
}

AttentionMap attention_map(const Model<float>& model, const Tensor<float>& face) {
  if (!model.attention_map) throw UsageError(model.arch + ": model has no attention block");
  check_face(model, face);
  Tape<float> tape;
  model.forward(face.reshaped({1, face.dim(0), face.dim(1), face.dim(2)}), &tape);
  const Tensor<float>& m = tape.value(*model.attention_map);
  const std::size_t h = m.dim(2), w = m.dim(3);
  AttentionMap out;
  out.values = m.reshaped({1, h, w});
  if (face.dim(1) % h != 0 || face.dim(2) % w != 0 || face.dim(1) / h != face.dim(2) / w) {
    throw DimensionError("attention map " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not tile the input");
  }
  out.upscaled = upsample_nearest(out.values, static_cast<double>(face.dim(1) / h));
  return out;
}

Image attention_image(const Model<float>& model, const Tensor<float>& face) {
  const AttentionMap m = attention_map(model, face);
  Image img;
  img.height = m.upscaled.dim(1);
  img.width = m.upscaled.dim(2);
  img.channels = 1;
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = std::floor(255.0 * static_cast<double>(m.upscaled[i]) + 0.5);
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return img;
}

void export_attention_map(const Model<float>& model, const Tensor<float>& face,
                          const std::filesystem::path& path) {
  write_pgm_plain(path, attention_image(model, face));
}

}  // namespace dfe
