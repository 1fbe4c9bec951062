#pragma once

// Forward and backward kernels of the numeric core.
//
// Conventions:
//  * layouts are NCHW (2D) and NCTHW (3D), row-major;
//  * convolutions are cross-correlations (the kernel is not flipped), matching
//    common deep-learning frameworks;
//  * padding is always zero padding;
//  * every kernel is instantiated for float (training, inference) and double
//    (gradient checks), with identical evaluation order in both.
//
// Kernels are pure functions. Each output element of a convolution is summed
// over its reduction axis in a fixed order that does not depend on tensor
// extents, so e.g. a kt=1 conv3d reproduces frame-wise conv2d bit for bit.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dfe/tensor.hpp"

namespace dfe {

struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;
};

struct Extent3 {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;
};

enum class Activation { none, sigmoid, relu, swish };
enum class PoolKind { max, avg };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

// Output extent along one axis, or DimensionError naming `axis` when the
// window does not fit the padded input.
std::size_t conv_out_extent(const char* op, const char* axis, std::size_t in, std::size_t window,
                            std::size_t stride, std::size_t pad);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernel;
};

// input [N,C,H,W], kernel [K,C,kh,kw] -> [N,K,H',W'].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Extent2 stride, Extent2 padding);
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_out, Extent2 stride, Extent2 padding);

// input [N,C,T,H,W], kernel [K,C,kt,kh,kw] -> [N,K,T',H',W'].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, Extent3 stride, Extent3 padding);
template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_out, Extent3 stride, Extent3 padding);

// Factorized (2+1)D convolution: a spatial pass with spatial_kernel
// [M,C,1,kh,kw] (stride/padding taken from the h,w components), then
// `mid` activation, then a temporal pass with temporal_kernel [K,M,kt,1,1]
// (stride/padding from the t component).
template <typename T>
Tensor<T> conv2plus1d(const Tensor<T>& input, const Tensor<T>& spatial_kernel,
                      const Tensor<T>& temporal_kernel, Extent3 stride, Extent3 padding,
                      Activation mid = Activation::none);

template <typename T>
struct Conv2plus1dGrads {
  Tensor<T> input;
  Tensor<T> spatial_kernel;
  Tensor<T> temporal_kernel;
};

template <typename T>
Conv2plus1dGrads<T> conv2plus1d_backward(const Tensor<T>& input, const Tensor<T>& spatial_kernel,
                                         const Tensor<T>& temporal_kernel,
                                         const Tensor<T>& grad_out, Extent3 stride,
                                         Extent3 padding, Activation mid = Activation::none);

// input [N,C,H,W], kernel [C,1,kh,kw]: one filter per channel.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Extent2 stride,
                           Extent2 padding);
template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                                       const Tensor<T>& grad_out, Extent2 stride,
                                       Extent2 padding);

// Pooling over rank-4 (window.t must be 1) or rank-5 inputs. Padded
// positions never win a max; avg always divides by the full window volume.
template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::int64_t> argmax;  // flat input index per output (max only)
};

template <typename T>
PoolResult<T> pool(const Tensor<T>& input, PoolKind kind, Extent3 window, Extent3 stride,
                   Extent3 padding = {0, 0, 0});
template <typename T>
Tensor<T> pool_backward(const Shape& input_shape, const Tensor<T>& grad_out, PoolKind kind,
                        Extent3 window, Extent3 stride, Extent3 padding,
                        const std::vector<std::int64_t>& argmax);

template <typename T>
T sigmoid(T x);

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind);
// `output` is the forward result for `input`.
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& input, const Tensor<T>& output,
                              const Tensor<T>& grad_out, Activation kind);

// [C,h,w] or [N,C,h,w]; factor must be a positive integer value.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, double factor);
template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& grad_out, std::size_t factor);

template <typename T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

// input [N,D], weight [D,K], bias [K] -> [N,K].
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weight,
                             const Tensor<T>& grad_out);

// Adds bias[k] to every element of channel k (axis 1).
template <typename T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& bias);
template <typename T>
Tensor<T> channel_bias_grad(const Tensor<T>& grad_out);

// Mean over every axis after the channel axis: [N,C,...] -> [N,C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);
template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out);

// features [N,C,...] scaled by a single-channel map [N,1,...] broadcast over C.
template <typename T>
Tensor<T> attention_mul(const Tensor<T>& features, const Tensor<T>& map);

template <typename T>
struct AttentionMulGrads {
  Tensor<T> features;
  Tensor<T> map;
};

template <typename T>
AttentionMulGrads<T> attention_mul_backward(const Tensor<T>& features, const Tensor<T>& map,
                                            const Tensor<T>& grad_out);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// Concatenation along the channel axis.
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& inputs);
template <typename T>
std::vector<Tensor<T>> concat_channels_backward(const std::vector<Shape>& input_shapes,
                                                const Tensor<T>& grad_out);

}  // namespace dfe
