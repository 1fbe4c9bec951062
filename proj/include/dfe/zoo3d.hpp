#pragma once

// The 3D branch: four lite spatiotemporal networks and 2D -> 3D inflation.
//
// All four take a clip [3,T,H,W] (default 3 x 8 x 64 x 64) and emit one raw
// score. Shared residual skeleton (res3d_lite, mc3_lite, r2p1d_lite):
//
//   stem     conv k(3,3,3) /(1,2,2), relu        S  x T    x H/2 x W/2
//            max pool (1,2,2) /(1,2,2)           S  x T    x H/4 x W/4
//   stage1   basic block S  -> C1, /(1,2,2)      C1 x T    x H/8 x W/8
//   stage2   basic block C1 -> C2, /(2,2,2)      C2 x T/2  x H/16 x W/16
//   stage3   basic block C2 -> C3, /(2,2,2)      C3 x T/4  x H/32 x W/32
//   head     global avg pool, dense C3 -> 1
//
// basic block(cin -> cout, stride s):
//   conv k /s -> relu -> conv k -> + shortcut -> relu
//   shortcut = 1x1x1 projection /s when cin != cout or s != 1, else identity
//
//   res3d_lite   every conv is 3x3x3
//   mc3_lite     3x3x3 in the stem and stage1; 1x3x3 (kt = 1) in stage2/3
//   r2p1d_lite   every conv (stem, block convs, projections) is a (2+1)D
//                factorization with intermediate width M = cout and a ReLU
//                between the spatial and temporal passes
//
// res3d_lite parameters: stem 27*3*S + S; per block
//   27*cin*cout + cout + 27*cout*cout + cout (+ cin*cout + cout projection);
//   head C3 + 1. Default (S=8, C=16,32,64): 221473.
//
// i3d_lite is the inflation of inception2d-lite (below) with temporal kernel
// kt and temporal padding 0:
//
//   stem     conv 3x3 /2, relu; max pool 2 /2
//   stage1   concat[ conv1x1 ; conv3x3 ; maxpool3x3/1 -> conv1x1 ] (each relu)
//            max pool 2 /2
//   stage2   same inception-lite stage
//   head     global avg pool, dense -> 1
//
// Each branch holds exactly one convolution, so inflated branches stay
// temporally aligned and a clip needs T >= 1 + 3*(kt-1) frames.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfe/graph.hpp"

namespace dfe {

enum class Arch3DKind { i3d_lite, res3d_lite, mc3_lite, r2p1d_lite };

const char* arch3d_name(Arch3DKind kind);
Arch3DKind parse_arch3d(const std::string& name);
bool is_arch3d_name(const std::string& name);

struct Arch3D {
  Arch3DKind kind = Arch3DKind::res3d_lite;
  std::size_t clip_length = 8;
  std::size_t input_size = 64;
  std::size_t stem_channels = 8;
  std::vector<std::size_t> stage_channels = {16, 32, 64};
  std::size_t temporal_kernel = 3;
  // i3d_lite only: per-branch channel count of the two inception stages.
  std::vector<std::size_t> inception_branch_channels = {8, 16};

  void validate() const;
};

Model<float> build_3d(const Arch3D& arch, std::uint64_t seed);

struct Inception2DConfig {
  std::size_t input_size = 64;
  std::size_t stem_channels = 16;
  std::vector<std::size_t> branch_channels = {8, 16};

  void validate() const;
};

inline constexpr const char* kInception2DArch = "inception2d";

Model<float> build_inception2d(const Inception2DConfig& cfg, std::uint64_t seed);

// [K,C,kh,kw] -> [K,C,kt,kh,kw]: each slice is the 2D kernel divided by kt.
template <typename T>
Tensor<T> inflate_2d_to_3d(const Tensor<T>& weights2d, std::size_t kt);

// Turns a 2D model into its 3D twin: conv2d -> conv3d with temporal kernel kt,
// temporal stride 1 and temporal padding 0 (inflated weights; biases copied),
// 2D pools -> pools with temporal window 1. Parameter names get the new arch
// prefix. Depthwise and upsample layers have no 3D counterpart here.
Model<float> inflate_model(const Model<float>& model2d, std::size_t kt, std::size_t clip_length,
                           const std::string& arch);

// clip: [3,T,H,W]. Raw score.
double forward_clip(const Model<float>& model, const Tensor<float>& clip);

enum class VoteMode { soft, hard };

const char* vote_mode_name(VoteMode mode);
VoteMode parse_vote_mode(const std::string& name);

// soft: mean probability; hard: fraction of models with p > 0.5.
double vote_3d(std::span<const double> probabilities, VoteMode mode = VoteMode::soft);

}  // namespace dfe
