#pragma once

// Attention2D-lite: an MBConv-lite backbone with a single-map spatial
// attention block, scoring one square face crop.
//
// Default layer table (64-pixel input, all values configurable):
//
//   stage      op                                  out (C x H x W)
//   stem       conv 3x3 /2, swish                  16 x 32 x 32
//   block1     MBConv-lite 16 -> 24, /2            24 x 16 x 16
//   block2     MBConv-lite 24 -> 48, /2            48 x  8 x  8
//   attention  conv 1x1 48 -> 1, sigmoid, multiply 48 x  8 x  8
//   block3     MBConv-lite 48 -> 96, /2            96 x  4 x  4
//   head       global avg pool, dense 96 -> 1      raw score
//
// MBConv-lite(cin -> cout, stride s, expansion e):
//   conv 1x1 cin -> e*cin, swish
//   depthwise 3x3 /s, swish
//   conv 1x1 e*cin -> cout (linear)
//   + input, when cin == cout and s == 1
//
// Every conv carries a bias; no normalization layers. Parameter count:
//   stem          9*3*S + S
//   MBConv        cin*E + E  +  9*E + E  +  E*cout + cout,   E = e*cin
//   attention     C_att + 1   (C_att + 0 without bias)
//   head          C_last + 1
// which is 41754 for the default table.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dfe/graph.hpp"
#include "dfe/image_io.hpp"

namespace dfe {

struct MBConvPlan {
  std::size_t out_channels;
  std::size_t stride;
};

struct Attention2DConfig {
  std::size_t input_size = 64;
  std::size_t stem_channels = 16;
  std::vector<MBConvPlan> blocks = {{24, 2}, {48, 2}, {96, 2}};
  std::size_t expansion = 4;
  // 1-based index of the block the attention follows; 0 builds the plain backbone.
  std::size_t attention_after_block = 2;
  bool attention_bias = true;
  // Zero the attention conv and the dense head (map == 0.5, score == 0).
  bool zero_heads = false;

  void validate() const;
};

inline constexpr const char* kAttention2DArch = "attention2d";

Model<float> build_attention2d(const Attention2DConfig& cfg, std::uint64_t seed);

struct AttentionBlockOutput {
  Tensor<float> attended;  // [N,C,h,w]
  Tensor<float> map;       // [N,1,h,w], sigmoid range
};

// map = sigmoid(conv1x1(features) + bias); attended = features * map, the one
// map broadcast over every channel.
AttentionBlockOutput attention_block(const Tensor<float>& features, const Tensor<float>& kernel,
                                     float bias = 0.0f);

struct AttentionMap {
  Tensor<float> values;    // [1,h,w]
  Tensor<float> upscaled;  // [1,H,W] = upsample_nearest(values, H/h)
};

// face: [3,H,W] network input. Returns the raw (pre-sigmoid) score.
double forward_score(const Model<float>& model, const Tensor<float>& face);
// batch: [N,3,H,W]. Raw scores in batch order.
std::vector<double> score_batch(const Model<float>& model, const Tensor<float>& batch);

AttentionMap attention_map(const Model<float>& model, const Tensor<float>& face);

// 8-bit map at input resolution, pixel = floor(255 * v + 0.5).
Image attention_image(const Model<float>& model, const Tensor<float>& face);
void export_attention_map(const Model<float>& model, const Tensor<float>& face,
                          const std::filesystem::path& path);

}  // namespace dfe
