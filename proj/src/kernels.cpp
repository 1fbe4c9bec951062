#include "dfe/kernels.hpp"

#include <cmath>
#include <limits>

#include "gemm.hpp"

namespace dfe {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
    case Activation::swish: return "swish";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "none") return Activation::none;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "relu") return Activation::relu;
  if (name == "swish") return Activation::swish;
  throw ConfigError("unknown activation '" + name + "'");
}

std::size_t conv_out_extent(const char* op, const char* axis, std::size_t in, std::size_t window,
                            std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ConfigError(std::string(op) + ": stride along axis " + axis + " is 0");
  if (window == 0) throw ConfigError(std::string(op) + ": window along axis " + axis + " is 0");
  if (window > in + 2 * pad) {
    throw DimensionError(std::string(op) + ": axis " + axis + " window " + std::to_string(window) +
                         " exceeds padded extent " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - window) / stride + 1;
}

namespace {

struct Geom3 {
  std::size_t c, t, h, w;         // input
  std::size_t kt, kh, kw;         // window
  Extent3 stride, pad;
  std::size_t ot, oh, ow;         // output
  std::size_t patch() const { return c * kt * kh * kw; }
  std::size_t out_plane() const { return ot * oh * ow; }
  std::size_t in_plane() const { return t * h * w; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && stride.t == 1 && stride.h == 1 && stride.w == 1 &&
           pad.t == 0 && pad.h == 0 && pad.w == 0;
  }
};

Geom3 make_geom(const char* op, std::size_t c, std::size_t t, std::size_t h, std::size_t w,
                std::size_t kt, std::size_t kh, std::size_t kw, Extent3 stride, Extent3 pad) {
  Geom3 g{c, t, h, w, kt, kh, kw, stride, pad, 0, 0, 0};
  g.ot = conv_out_extent(op, "T", t, kt, stride.t, pad.t);
  g.oh = conv_out_extent(op, "H", h, kh, stride.h, pad.h);
  g.ow = conv_out_extent(op, "W", w, kw, stride.w, pad.w);
  return g;
}

// Signed source coordinate of output position o at window offset d.
inline std::ptrdiff_t src_coord(std::size_t o, std::size_t d, std::size_t stride, std::size_t pad) {
  return static_cast<std::ptrdiff_t>(o * stride + d) - static_cast<std::ptrdiff_t>(pad);
}

template <typename T>
void im2col(const Geom3& g, const T* x, T* col) {
  const std::size_t plane = g.out_plane();
  T* dst = col;
  for (std::size_t c = 0; c < g.c; ++c) {
    const T* xc = x + c * g.in_plane();
    for (std::size_t dt = 0; dt < g.kt; ++dt) {
      for (std::size_t dh = 0; dh < g.kh; ++dh) {
        for (std::size_t dw = 0; dw < g.kw; ++dw) {
          T* out = dst;
          for (std::size_t ot = 0; ot < g.ot; ++ot) {
            const auto it = src_coord(ot, dt, g.stride.t, g.pad.t);
            const bool t_ok = it >= 0 && it < static_cast<std::ptrdiff_t>(g.t);
            for (std::size_t oh = 0; oh < g.oh; ++oh) {
              const auto ih = src_coord(oh, dh, g.stride.h, g.pad.h);
              const bool h_ok = t_ok && ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.h);
              if (!h_ok) {
                for (std::size_t ow = 0; ow < g.ow; ++ow) out[ow] = T(0);
              } else {
                const T* row = xc + (static_cast<std::size_t>(it) * g.h +
                                     static_cast<std::size_t>(ih)) * g.w;
                for (std::size_t ow = 0; ow < g.ow; ++ow) {
                  const auto iw = src_coord(ow, dw, g.stride.w, g.pad.w);
                  out[ow] = (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w))
                                ? row[static_cast<std::size_t>(iw)]
                                : T(0);
                }
              }
              out += g.ow;
            }
          }
          dst += plane;
        }
      }
    }
  }
}

template <typename T>
void col2im(const Geom3& g, const T* col, T* x) {
  const std::size_t plane = g.out_plane();
  const T* src = col;
  for (std::size_t c = 0; c < g.c; ++c) {
    T* xc = x + c * g.in_plane();
    for (std::size_t dt = 0; dt < g.kt; ++dt) {
      for (std::size_t dh = 0; dh < g.kh; ++dh) {
        for (std::size_t dw = 0; dw < g.kw; ++dw) {
          const T* in = src;
          for (std::size_t ot = 0; ot < g.ot; ++ot) {
            const auto it = src_coord(ot, dt, g.stride.t, g.pad.t);
            const bool t_ok = it >= 0 && it < static_cast<std::ptrdiff_t>(g.t);
            for (std::size_t oh = 0; oh < g.oh; ++oh) {
              const auto ih = src_coord(oh, dh, g.stride.h, g.pad.h);
              if (t_ok && ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.h)) {
                T* row = xc + (static_cast<std::size_t>(it) * g.h + static_cast<std::size_t>(ih)) * g.w;
                for (std::size_t ow = 0; ow < g.ow; ++ow) {
                  const auto iw = src_coord(ow, dw, g.stride.w, g.pad.w);
                  if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) {
                    row[static_cast<std::size_t>(iw)] += in[ow];
                  }
                }
              }
              in += g.ow;
            }
          }
          src += plane;
        }
      }
    }
  }
}

template <typename T>
void check_conv3d_args(const char* op, const Tensor<T>& input, const Tensor<T>& kernel) {
  expect_rank(op, input.rank(), 5);
  if (kernel.rank() != 5) {
    throw DimensionError(std::string(op) + ": kernel must be rank 5 [K,C,kt,kh,kw], got " +
                         shape_str(kernel.shape()));
  }
  expect_dim(op, "C (kernel input channels)", kernel.dim(1), input.dim(1));
}

template <typename T>
Geom3 conv3d_geom(const char* op, const Tensor<T>& input, const Tensor<T>& kernel, Extent3 stride,
                  Extent3 padding) {
  check_conv3d_args(op, input, kernel);
  return make_geom(op, input.dim(1), input.dim(2), input.dim(3), input.dim(4), kernel.dim(2),
                   kernel.dim(3), kernel.dim(4), stride, padding);
}

template <typename T>
Tensor<T> conv3d_impl(const char* op, const Tensor<T>& input, const Tensor<T>& kernel,
                      Extent3 stride, Extent3 padding) {
  const Geom3 g = conv3d_geom(op, input, kernel, stride, padding);
  const std::size_t n = input.dim(0), k = kernel.dim(0);
  Tensor<T> out({n, k, g.ot, g.oh, g.ow});
  const std::size_t plane = g.out_plane(), patch = g.patch();
  std::vector<T> col;
  if (!g.pointwise()) col.resize(patch * plane);
  for (std::size_t b = 0; b < n; ++b) {
    const T* xb = input.data() + b * g.c * g.in_plane();
    const T* cols = xb;
    if (!g.pointwise()) {
      im2col(g, xb, col.data());
      cols = col.data();
    }
    detail::gemm(k, plane, patch, kernel.data(), cols, out.data() + b * k * plane, false);
  }
  return out;
}

template <typename T>
ConvGrads<T> conv3d_backward_impl(const char* op, const Tensor<T>& input, const Tensor<T>& kernel,
                                  const Tensor<T>& grad_out, Extent3 stride, Extent3 padding) {
  const Geom3 g = conv3d_geom(op, input, kernel, stride, padding);
  const std::size_t n = input.dim(0), k = kernel.dim(0);
  const Shape want{n, k, g.ot, g.oh, g.ow};
  if (grad_out.shape() != want) {
    throw DimensionError(std::string(op) + ": gradient shape " + shape_str(grad_out.shape()) +
                         " does not match output " + shape_str(want));
  }
  const std::size_t plane = g.out_plane(), patch = g.patch();
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernel.shape())};
  std::vector<T> col(patch * plane), col_t(plane * patch), dcol(patch * plane);
  std::vector<T> kernel_t(patch * k);
  detail::transpose(k, patch, kernel.data(), kernel_t.data());
  for (std::size_t b = 0; b < n; ++b) {
    const T* xb = input.data() + b * g.c * g.in_plane();
    const T* dy = grad_out.data() + b * k * plane;
    if (g.pointwise()) {
      detail::transpose(patch, plane, xb, col_t.data());
    } else {
      im2col(g, xb, col.data());
      detail::transpose(patch, plane, col.data(), col_t.data());
    }
    detail::gemm(k, patch, plane, dy, col_t.data(), grads.kernel.data(), true);
    T* dxb = grads.input.data() + b * g.c * g.in_plane();
    if (g.pointwise()) {
      detail::gemm(patch, plane, k, kernel_t.data(), dy, dxb, false);
    } else {
      detail::gemm(patch, plane, k, kernel_t.data(), dy, dcol.data(), false);
      col2im(g, dcol.data(), dxb);
    }
  }
  return grads;
}

template <typename T>
Shape as5(const Tensor<T>& x4) {
  return {x4.dim(0), x4.dim(1), 1, x4.dim(2), x4.dim(3)};
}

template <typename T>
Tensor<T> drop_time(Tensor<T>&& x5) {
  Shape s{x5.dim(0), x5.dim(1), x5.dim(3), x5.dim(4)};
  return Tensor<T>(std::move(s), std::move(x5.storage()));
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, Extent3 stride,
                 Extent3 padding) {
  return conv3d_impl("conv3d", input, kernel, stride, padding);
}

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_out, Extent3 stride, Extent3 padding) {
  return conv3d_backward_impl("conv3d", input, kernel, grad_out, stride, padding);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Extent2 stride,
                 Extent2 padding) {
  expect_rank("conv2d", input.rank(), 4);
  if (kernel.rank() != 4) {
    throw DimensionError("conv2d: kernel must be rank 4 [K,C,kh,kw], got " +
                         shape_str(kernel.shape()));
  }
  const Tensor<T> x5 = input.reshaped(as5(input));
  const Tensor<T> k5 = kernel.reshaped(as5(kernel));
  return drop_time(conv3d_impl("conv2d", x5, k5, {1, stride.h, stride.w},
                               {0, padding.h, padding.w}));
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                             const Tensor<T>& grad_out, Extent2 stride, Extent2 padding) {
  expect_rank("conv2d", input.rank(), 4);
  expect_rank("conv2d (gradient)", grad_out.rank(), 4);
  if (kernel.rank() != 4) {
    throw DimensionError("conv2d: kernel must be rank 4 [K,C,kh,kw], got " +
                         shape_str(kernel.shape()));
  }
  auto g5 = conv3d_backward_impl("conv2d", input.reshaped(as5(input)),
                                 kernel.reshaped(as5(kernel)), grad_out.reshaped(as5(grad_out)),
                                 {1, stride.h, stride.w}, {0, padding.h, padding.w});
  return {drop_time(std::move(g5.input)), drop_time(std::move(g5.kernel))};
}

namespace {

template <typename T>
void check_2plus1(const Tensor<T>& input, const Tensor<T>& spatial, const Tensor<T>& temporal) {
  check_conv3d_args("conv2plus1d (spatial)", input, spatial);
  if (temporal.rank() != 5) {
    throw DimensionError("conv2plus1d: temporal kernel must be rank 5 [K,M,kt,1,1]");
  }
  expect_dim("conv2plus1d", "kt of spatial kernel", spatial.dim(2), 1);
  expect_dim("conv2plus1d", "kh of temporal kernel", temporal.dim(3), 1);
  expect_dim("conv2plus1d", "kw of temporal kernel", temporal.dim(4), 1);
  expect_dim("conv2plus1d", "M (intermediate channels)", temporal.dim(1), spatial.dim(0));
}

}  // namespace

template <typename T>
Tensor<T> conv2plus1d(const Tensor<T>& input, const Tensor<T>& spatial_kernel,
                      const Tensor<T>& temporal_kernel, Extent3 stride, Extent3 padding,
                      Activation mid) {
  check_2plus1(input, spatial_kernel, temporal_kernel);
  Tensor<T> z = conv3d_impl("conv2plus1d (spatial)", input, spatial_kernel,
                            {1, stride.h, stride.w}, {0, padding.h, padding.w});
  if (mid != Activation::none) z = activation(z, mid);
  return conv3d_impl("conv2plus1d (temporal)", z, temporal_kernel, {stride.t, 1, 1},
                     {padding.t, 0, 0});
}

template <typename T>
Conv2plus1dGrads<T> conv2plus1d_backward(const Tensor<T>& input, const Tensor<T>& spatial_kernel,
                                         const Tensor<T>& temporal_kernel,
                                         const Tensor<T>& grad_out, Extent3 stride,
                                         Extent3 padding, Activation mid) {
  check_2plus1(input, spatial_kernel, temporal_kernel);
  const Extent3 s_stride{1, stride.h, stride.w}, s_pad{0, padding.h, padding.w};
  const Extent3 t_stride{stride.t, 1, 1}, t_pad{padding.t, 0, 0};
  const Tensor<T> z = conv3d_impl("conv2plus1d (spatial)", input, spatial_kernel, s_stride, s_pad);
  const Tensor<T> a = mid == Activation::none ? z : activation(z, mid);
  auto gt = conv3d_backward_impl("conv2plus1d (temporal)", a, temporal_kernel, grad_out,
                                 t_stride, t_pad);
  Tensor<T> gz = mid == Activation::none ? std::move(gt.input)
                                         : activation_backward(z, a, gt.input, mid);
  auto gs = conv3d_backward_impl("conv2plus1d (spatial)", input, spatial_kernel, gz, s_stride,
                                 s_pad);
  return {std::move(gs.input), std::move(gs.kernel), std::move(gt.kernel)};
}

namespace {

template <typename T>
Geom3 depthwise_geom(const Tensor<T>& input, const Tensor<T>& kernel, Extent2 stride,
                     Extent2 padding) {
  expect_rank("depthwise_conv2d", input.rank(), 4);
  if (kernel.rank() != 4) {
    throw DimensionError("depthwise_conv2d: kernel must be rank 4 [C,1,kh,kw]");
  }
  expect_dim("depthwise_conv2d", "C (one filter per channel)", kernel.dim(0), input.dim(1));
  expect_dim("depthwise_conv2d", "kernel axis 1", kernel.dim(1), 1);
  return make_geom("depthwise_conv2d", input.dim(1), 1, input.dim(2), input.dim(3), 1,
                   kernel.dim(2), kernel.dim(3), {1, stride.h, stride.w},
                   {0, padding.h, padding.w});
}

}  // namespace

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& kernel, Extent2 stride,
                           Extent2 padding) {
  const Geom3 g = depthwise_geom(input, kernel, stride, padding);
  const std::size_t n = input.dim(0);
  Tensor<T> out({n, g.c, g.oh, g.ow});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < g.c; ++c) {
      const T* x = input.data() + (b * g.c + c) * g.h * g.w;
      const T* kc = kernel.data() + c * g.kh * g.kw;
      T* y = out.data() + (b * g.c + c) * g.oh * g.ow;
      for (std::size_t oh = 0; oh < g.oh; ++oh) {
        for (std::size_t ow = 0; ow < g.ow; ++ow) {
          T acc = T(0);
          for (std::size_t dh = 0; dh < g.kh; ++dh) {
            const auto ih = src_coord(oh, dh, g.stride.h, g.pad.h);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t dw = 0; dw < g.kw; ++dw) {
              const auto iw = src_coord(ow, dw, g.stride.w, g.pad.w);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
              acc += kc[dh * g.kw + dw] *
                     x[static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)];
            }
          }
          y[oh * g.ow + ow] = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                                       const Tensor<T>& grad_out, Extent2 stride,
                                       Extent2 padding) {
  const Geom3 g = depthwise_geom(input, kernel, stride, padding);
  const std::size_t n = input.dim(0);
  const Shape want{n, g.c, g.oh, g.ow};
  if (grad_out.shape() != want) {
    throw DimensionError("depthwise_conv2d: gradient shape " + shape_str(grad_out.shape()) +
                         " does not match output " + shape_str(want));
  }
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(kernel.shape())};
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < g.c; ++c) {
      const std::size_t in_off = (b * g.c + c) * g.h * g.w;
      const T* x = input.data() + in_off;
      T* dx = grads.input.data() + in_off;
      const T* kc = kernel.data() + c * g.kh * g.kw;
      T* dk = grads.kernel.data() + c * g.kh * g.kw;
      const T* dy = grad_out.data() + (b * g.c + c) * g.oh * g.ow;
      for (std::size_t oh = 0; oh < g.oh; ++oh) {
        for (std::size_t ow = 0; ow < g.ow; ++ow) {
          const T gy = dy[oh * g.ow + ow];
          for (std::size_t dh = 0; dh < g.kh; ++dh) {
            const auto ih = src_coord(oh, dh, g.stride.h, g.pad.h);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t dw = 0; dw < g.kw; ++dw) {
              const auto iw = src_coord(ow, dw, g.stride.w, g.pad.w);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
              const std::size_t xi = static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw);
              dk[dh * g.kw + dw] += gy * x[xi];
              dx[xi] += gy * kc[dh * g.kw + dw];
            }
          }
        }
      }
    }
  }
  return grads;
}

namespace {

template <typename T>
Geom3 pool_geom(const Tensor<T>& input, PoolKind kind, Extent3 window, Extent3 stride,
                Extent3 padding) {
  std::size_t c, t, h, w;
  if (input.rank() == 4) {
    if (window.t != 1 || stride.t != 1 || padding.t != 0) {
      throw ConfigError("pool: temporal window/stride/padding must be 1/1/0 for rank-4 input");
    }
    c = input.dim(1), t = 1, h = input.dim(2), w = input.dim(3);
  } else if (input.rank() == 5) {
    c = input.dim(1), t = input.dim(2), h = input.dim(3), w = input.dim(4);
  } else {
    throw DimensionError("pool: expected rank 4 or 5 input, got rank " +
                         std::to_string(input.rank()));
  }
  if (kind == PoolKind::max &&
      (padding.t >= window.t || padding.h >= window.h || padding.w >= window.w)) {
    throw ConfigError("pool: max pooling padding must be smaller than the window");
  }
  return make_geom("pool", c, t, h, w, window.t, window.h, window.w, stride, padding);
}

Shape pool_out_shape(std::size_t rank, std::size_t n, const Geom3& g) {
  if (rank == 4) return {n, g.c, g.oh, g.ow};
  return {n, g.c, g.ot, g.oh, g.ow};
}

}  // namespace

template <typename T>
PoolResult<T> pool(const Tensor<T>& input, PoolKind kind, Extent3 window, Extent3 stride,
                   Extent3 padding) {
  const Geom3 g = pool_geom(input, kind, window, stride, padding);
  const std::size_t n = input.dim(0);
  PoolResult<T> res{Tensor<T>(pool_out_shape(input.rank(), n, g)), {}};
  if (kind == PoolKind::max) res.argmax.resize(res.output.numel());
  const T inv_volume = T(1) / static_cast<T>(g.kt * g.kh * g.kw);
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < n * g.c; ++bc) {
    const std::size_t base = bc * g.in_plane();
    const T* x = input.data() + base;
    for (std::size_t ot = 0; ot < g.ot; ++ot) {
      for (std::size_t oh = 0; oh < g.oh; ++oh) {
        for (std::size_t ow = 0; ow < g.ow; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          T sum = T(0);
          for (std::size_t dt = 0; dt < g.kt; ++dt) {
            const auto it = src_coord(ot, dt, g.stride.t, g.pad.t);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(g.t)) continue;
            for (std::size_t dh = 0; dh < g.kh; ++dh) {
              const auto ih = src_coord(oh, dh, g.stride.h, g.pad.h);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t dw = 0; dw < g.kw; ++dw) {
                const auto iw = src_coord(ow, dw, g.stride.w, g.pad.w);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
                const std::size_t xi = (static_cast<std::size_t>(it) * g.h +
                                        static_cast<std::size_t>(ih)) * g.w +
                                       static_cast<std::size_t>(iw);
                const T v = x[xi];
                if (kind == PoolKind::max) {
                  if (v > best) {
                    best = v;
                    best_idx = static_cast<std::int64_t>(base + xi);
                  }
                } else {
                  sum += v;
                }
              }
            }
          }
          if (kind == PoolKind::max) {
            res.output[o] = best;
            res.argmax[o] = best_idx;
          } else {
            res.output[o] = sum * inv_volume;
          }
        }
      }
    }
  }
  return res;
}

template <typename T>
Tensor<T> pool_backward(const Shape& input_shape, const Tensor<T>& grad_out, PoolKind kind,
                        Extent3 window, Extent3 stride, Extent3 padding,
                        const std::vector<std::int64_t>& argmax) {
  Tensor<T> dx(input_shape);
  if (kind == PoolKind::max) {
    if (argmax.size() != grad_out.numel()) {
      throw StateError("pool_backward: argmax record does not match gradient");
    }
    for (std::size_t o = 0; o < grad_out.numel(); ++o) {
      dx[static_cast<std::size_t>(argmax[o])] += grad_out[o];
    }
    return dx;
  }
  const Geom3 g = pool_geom(dx, kind, window, stride, padding);
  const T inv_volume = T(1) / static_cast<T>(g.kt * g.kh * g.kw);
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < input_shape[0] * g.c; ++bc) {
    T* x = dx.data() + bc * g.in_plane();
    for (std::size_t ot = 0; ot < g.ot; ++ot) {
      for (std::size_t oh = 0; oh < g.oh; ++oh) {
        for (std::size_t ow = 0; ow < g.ow; ++ow, ++o) {
          const T gv = grad_out[o] * inv_volume;
          for (std::size_t dt = 0; dt < g.kt; ++dt) {
            const auto it = src_coord(ot, dt, g.stride.t, g.pad.t);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(g.t)) continue;
            for (std::size_t dh = 0; dh < g.kh; ++dh) {
              const auto ih = src_coord(oh, dh, g.stride.h, g.pad.h);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t dw = 0; dw < g.kw; ++dw) {
                const auto iw = src_coord(ow, dw, g.stride.w, g.pad.w);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
                x[(static_cast<std::size_t>(it) * g.h + static_cast<std::size_t>(ih)) * g.w +
                  static_cast<std::size_t>(iw)] += gv;
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation kind) {
  Tensor<T> out(input.shape());
  const std::size_t n = input.numel();
  const T* x = input.data();
  T* y = out.data();
  switch (kind) {
    case Activation::none:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i];
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::swish:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * sigmoid(x[i]);
      break;
  }
  return out;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& input, const Tensor<T>& output,
                              const Tensor<T>& grad_out, Activation kind) {
  if (grad_out.shape() != input.shape()) {
    throw DimensionError("activation_backward: gradient shape " + shape_str(grad_out.shape()) +
                         " does not match input " + shape_str(input.shape()));
  }
  Tensor<T> dx(input.shape());
  const std::size_t n = input.numel();
  const T* x = input.data();
  const T* y = output.data();
  const T* dy = grad_out.data();
  T* d = dx.data();
  switch (kind) {
    case Activation::none:
      for (std::size_t i = 0; i < n; ++i) d[i] = dy[i];
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) d[i] = dy[i] * y[i] * (T(1) - y[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) d[i] = x[i] > T(0) ? dy[i] : T(0);
      break;
    case Activation::swish:
      for (std::size_t i = 0; i < n; ++i) {
        const T s = sigmoid(x[i]);
        d[i] = dy[i] * (s + x[i] * s * (T(1) - s));
      }
      break;
  }
  return dx;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, double factor) {
  if (!(factor >= 1.0) || std::floor(factor) != factor) {
    throw ConfigError("upsample_nearest: factor must be an integer >= 1, got " +
                      std::to_string(factor));
  }
  const auto f = static_cast<std::size_t>(factor);
  if (input.rank() != 3 && input.rank() != 4) {
    throw DimensionError("upsample_nearest: expected [C,h,w] or [N,C,h,w] input");
  }
  const std::size_t r = input.rank();
  const std::size_t h = input.dim(r - 2), w = input.dim(r - 1);
  const std::size_t planes = input.numel() / (h * w);
  Shape out_shape = input.shape();
  out_shape[r - 2] = h * f;
  out_shape[r - 1] = w * f;
  Tensor<T> out(out_shape);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* x = input.data() + p * h * w;
    T* y = out.data() + p * h * w * f * f;
    for (std::size_t i = 0; i < h * f; ++i) {
      for (std::size_t j = 0; j < w * f; ++j) y[i * w * f + j] = x[(i / f) * w + j / f];
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& grad_out, std::size_t f) {
  if (f == 0) throw ConfigError("upsample_nearest: factor must be >= 1");
  const std::size_t r = grad_out.rank();
  if (r != 3 && r != 4) throw DimensionError("upsample_nearest: expected rank 3 or 4 gradient");
  const std::size_t H = grad_out.dim(r - 2), W = grad_out.dim(r - 1);
  if (H % f || W % f) throw DimensionError("upsample_nearest: gradient extent not divisible by factor");
  const std::size_t h = H / f, w = W / f;
  Shape in_shape = grad_out.shape();
  in_shape[r - 2] = h;
  in_shape[r - 1] = w;
  Tensor<T> dx(in_shape);
  const std::size_t planes = grad_out.numel() / (H * W);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* dy = grad_out.data() + p * H * W;
    T* d = dx.data() + p * h * w;
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) d[(i / f) * w + j / f] += dy[i * W + j];
    }
  }
  return dx;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  expect_rank("dense", input.rank(), 2);
  if (weight.rank() != 2) throw DimensionError("dense: weight must be rank 2 [D,K]");
  if (bias.rank() != 1) throw DimensionError("dense: bias must be rank 1 [K]");
  expect_dim("dense", "D (input features)", input.dim(1), weight.dim(0));
  expect_dim("dense", "K (bias length)", bias.dim(0), weight.dim(1));
  const std::size_t n = input.dim(0), d = weight.dim(0), k = weight.dim(1);
  Tensor<T> out({n, k});
  detail::gemm(n, k, d, input.data(), weight.data(), out.data(), false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] += bias[j];
  }
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weight,
                             const Tensor<T>& grad_out) {
  expect_rank("dense", input.rank(), 2);
  const std::size_t n = input.dim(0), d = weight.dim(0), k = weight.dim(1);
  expect_dim("dense", "D (input features)", input.dim(1), d);
  if (grad_out.shape() != Shape{n, k}) {
    throw DimensionError("dense: gradient shape " + shape_str(grad_out.shape()) +
                         " does not match output");
  }
  DenseGrads<T> g{Tensor<T>({n, d}), Tensor<T>({d, k}), Tensor<T>({k})};
  std::vector<T> w_t(k * d), x_t(d * n);
  detail::transpose(d, k, weight.data(), w_t.data());
  detail::transpose(n, d, input.data(), x_t.data());
  detail::gemm(n, d, k, grad_out.data(), w_t.data(), g.input.data(), false);
  detail::gemm(d, k, n, x_t.data(), grad_out.data(), g.weight.data(), false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) g.bias[j] += grad_out[i * k + j];
  }
  return g;
}

template <typename T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() < 2) throw DimensionError("add_channel_bias: input needs a channel axis");
  expect_dim("add_channel_bias", "C (bias length)", bias.numel(), x.dim(1));
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.numel() / (n * c);
  T* p = x.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T v = bias[ch];
      for (std::size_t i = 0; i < plane; ++i) *p++ += v;
    }
  }
}

template <typename T>
Tensor<T> channel_bias_grad(const Tensor<T>& grad_out) {
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), plane = grad_out.numel() / (n * c);
  Tensor<T> g({c});
  const T* p = grad_out.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = T(0);
      for (std::size_t i = 0; i < plane; ++i) acc += *p++;
      g[ch] += acc;
    }
  }
  return g;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() < 3) throw DimensionError("global_avg_pool: expected [N,C,...] input");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.numel() / (n * c);
  Tensor<T> out({n, c});
  const T inv = T(1) / static_cast<T>(plane);
  const T* p = input.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < plane; ++j) acc += *p++;
    out[i] = acc * inv;
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  Tensor<T> dx(input_shape);
  const std::size_t n = input_shape[0], c = input_shape[1], plane = dx.numel() / (n * c);
  expect_dim("global_avg_pool", "N*C (gradient)", grad_out.numel(), n * c);
  const T inv = T(1) / static_cast<T>(plane);
  T* p = dx.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    const T v = grad_out[i] * inv;
    for (std::size_t j = 0; j < plane; ++j) *p++ = v;
  }
  return dx;
}

namespace {

template <typename T>
std::size_t check_attention(const Tensor<T>& features, const Tensor<T>& map) {
  if (features.rank() < 3 || map.rank() != features.rank()) {
    throw DimensionError("attention_mul: map must have the feature rank with one channel");
  }
  expect_dim("attention_mul", "N", map.dim(0), features.dim(0));
  expect_dim("attention_mul", "C of map", map.dim(1), 1);
  for (std::size_t a = 2; a < features.rank(); ++a) {
    const std::string axis = "spatial axis " + std::to_string(a);
    expect_dim("attention_mul", axis.c_str(), map.dim(a), features.dim(a));
  }
  return features.numel() / (features.dim(0) * features.dim(1));
}

}  // namespace

template <typename T>
Tensor<T> attention_mul(const Tensor<T>& features, const Tensor<T>& map) {
  const std::size_t plane = check_attention(features, map);
  const std::size_t n = features.dim(0), c = features.dim(1);
  Tensor<T> out(features.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* m = map.data() + b * plane;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = features[off + i] * m[i];
    }
  }
  return out;
}

template <typename T>
AttentionMulGrads<T> attention_mul_backward(const Tensor<T>& features, const Tensor<T>& map,
                                            const Tensor<T>& grad_out) {
  const std::size_t plane = check_attention(features, map);
  if (grad_out.shape() != features.shape()) {
    throw DimensionError("attention_mul: gradient shape does not match features");
  }
  const std::size_t n = features.dim(0), c = features.dim(1);
  AttentionMulGrads<T> g{Tensor<T>(features.shape()), Tensor<T>(map.shape())};
  for (std::size_t b = 0; b < n; ++b) {
    const T* m = map.data() + b * plane;
    T* dm = g.map.data() + b * plane;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        g.features[off + i] = grad_out[off + i] * m[i];
        dm[i] += grad_out[off + i] * features[off + i];
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& inputs) {
  if (inputs.empty()) throw UsageError("concat_channels: no inputs");
  const Tensor<T>& first = *inputs.front();
  if (first.rank() < 2) throw DimensionError("concat_channels: inputs need a channel axis");
  Shape out_shape = first.shape();
  std::size_t channels = 0;
  for (const auto* t : inputs) {
    if (t->rank() != first.rank()) throw DimensionError("concat_channels: rank mismatch");
    for (std::size_t a = 0; a < first.rank(); ++a) {
      if (a == 1) continue;
      const std::string axis = "axis " + std::to_string(a);
      expect_dim("concat_channels", axis.c_str(), t->dim(a), first.dim(a));
    }
    channels += t->dim(1);
  }
  out_shape[1] = channels;
  Tensor<T> out(out_shape);
  const std::size_t n = first.dim(0), plane = first.numel() / (first.dim(0) * first.dim(1));
  T* dst = out.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (const auto* t : inputs) {
      const std::size_t len = t->dim(1) * plane;
      const T* src = t->data() + b * len;
      dst = std::copy(src, src + len, dst);
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> concat_channels_backward(const std::vector<Shape>& input_shapes,
                                                const Tensor<T>& grad_out) {
  std::vector<Tensor<T>> grads;
  grads.reserve(input_shapes.size());
  for (const auto& s : input_shapes) grads.emplace_back(s);
  const std::size_t n = grad_out.dim(0);
  const std::size_t plane = grad_out.numel() / (grad_out.dim(0) * grad_out.dim(1));
  const T* src = grad_out.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (auto& g : grads) {
      const std::size_t len = g.dim(1) * plane;
      std::copy(src, src + len, g.data() + b * len);
      src += len;
    }
  }
  return grads;
}

#define DFE_INSTANTIATE_KERNELS(T)                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, Extent2, Extent2);              \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                        Extent2, Extent2);                                      \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, Extent3, Extent3);              \
  template ConvGrads<T> conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                        Extent3, Extent3);                                      \
  template Tensor<T> conv2plus1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Extent3, \
                                 Extent3, Activation);                                          \
  template Conv2plus1dGrads<T> conv2plus1d_backward(const Tensor<T>&, const Tensor<T>&,         \
                                                    const Tensor<T>&, const Tensor<T>&,         \
                                                    Extent3, Extent3, Activation);              \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, Extent2, Extent2);    \
  template ConvGrads<T> depthwise_conv2d_backward(const Tensor<T>&, const Tensor<T>&,           \
                                                  const Tensor<T>&, Extent2, Extent2);          \
  template PoolResult<T> pool(const Tensor<T>&, PoolKind, Extent3, Extent3, Extent3);           \
  template Tensor<T> pool_backward(const Shape&, const Tensor<T>&, PoolKind, Extent3, Extent3,  \
                                   Extent3, const std::vector<std::int64_t>&);                  \
  template T sigmoid(T);                                                                        \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                  \
  template Tensor<T> activation_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                         Activation);                                           \
  template Tensor<T> upsample_nearest(const Tensor<T>&, double);                                \
  template Tensor<T> upsample_nearest_backward(const Tensor<T>&, std::size_t);                  \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template DenseGrads<T> dense_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template void add_channel_bias(Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> channel_bias_grad(const Tensor<T>&);                                       \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                         \
  template Tensor<T> global_avg_pool_backward(const Shape&, const Tensor<T>&);                  \
  template Tensor<T> attention_mul(const Tensor<T>&, const Tensor<T>&);                         \
  template AttentionMulGrads<T> attention_mul_backward(const Tensor<T>&, const Tensor<T>&,      \
                                                       const Tensor<T>&);                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> concat_channels(const std::vector<const Tensor<T>*>&);                     \
  template std::vector<Tensor<T>> concat_channels_backward(const std::vector<Shape>&,           \
                                                           const Tensor<T>&);

DFE_INSTANTIATE_KERNELS(float)
DFE_INSTANTIATE_KERNELS(double)

#undef DFE_INSTANTIATE_KERNELS

}  // namespace dfe
