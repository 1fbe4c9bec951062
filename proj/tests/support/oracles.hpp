#pragma once

// Loop-level reference implementations used as independent oracles. They
// share nothing with src/ beyond the Tensor container; every index is spelled
// out.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "dfe/tensor.hpp"

namespace oracle {

using dfe::Shape;
using dfe::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(d(rng));
  return t;
}

// Cross-correlation, zero padding. in [N,C,T,H,W], k [K,C,kt,kh,kw].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& in, const Tensor<T>& k, std::size_t st, std::size_t sh,
                 std::size_t sw, std::size_t pt, std::size_t ph, std::size_t pw) {
  const std::size_t N = in.dim(0), C = in.dim(1), Ti = in.dim(2), H = in.dim(3), W = in.dim(4);
  const std::size_t K = k.dim(0), kt = k.dim(2), kh = k.dim(3), kw = k.dim(4);
  const std::size_t To = (Ti + 2 * pt - kt) / st + 1, Ho = (H + 2 * ph - kh) / sh + 1,
                    Wo = (W + 2 * pw - kw) / sw + 1;
  Tensor<T> out({N, K, To, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < K; ++o)
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t y = 0; y < Ho; ++y)
          for (std::size_t x = 0; x < Wo; ++x) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t a = 0; a < kt; ++a)
                for (std::size_t b = 0; b < kh; ++b)
                  for (std::size_t d = 0; d < kw; ++d) {
                    const long ti = static_cast<long>(t * st + a) - static_cast<long>(pt);
                    const long yi = static_cast<long>(y * sh + b) - static_cast<long>(ph);
                    const long xi = static_cast<long>(x * sw + d) - static_cast<long>(pw);
                    if (ti < 0 || yi < 0 || xi < 0 || ti >= static_cast<long>(Ti) ||
                        yi >= static_cast<long>(H) || xi >= static_cast<long>(W))
                      continue;
                    acc += static_cast<double>(
                               in[(((n * C + c) * Ti + ti) * H + yi) * W + xi]) *
                           static_cast<double>(k[(((o * C + c) * kt + a) * kh + b) * kw + d]);
                  }
            out[(((n * K + o) * To + t) * Ho + y) * Wo + x] = static_cast<T>(acc);
          }
  return out;
}

// in [N,C,H,W], k [K,C,kh,kw] through the 3D reference with T = 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& k, std::size_t sh, std::size_t sw,
                 std::size_t ph, std::size_t pw) {
  const auto in5 = in.reshaped({in.dim(0), in.dim(1), 1, in.dim(2), in.dim(3)});
  const auto k5 = k.reshaped({k.dim(0), k.dim(1), 1, k.dim(2), k.dim(3)});
  const auto o = conv3d(in5, k5, 1, sh, sw, 0, ph, pw);
  return o.reshaped({o.dim(0), o.dim(1), o.dim(3), o.dim(4)});
}

// in [N,C,H,W], k [C,1,kh,kw].
template <typename T>
Tensor<T> depthwise(const Tensor<T>& in, const Tensor<T>& k, std::size_t s, std::size_t p) {
  const std::size_t N = in.dim(0), C = in.dim(1);
  Tensor<T> out;
  std::vector<T> data;
  Shape shape;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      Tensor<T> one({1, 1, in.dim(2), in.dim(3)});
      for (std::size_t i = 0; i < one.numel(); ++i) one[i] = in[(n * C + c) * one.numel() + i];
      Tensor<T> kk({1, 1, k.dim(2), k.dim(3)});
      for (std::size_t i = 0; i < kk.numel(); ++i) kk[i] = k[c * kk.numel() + i];
      const auto o = conv2d(one, kk, s, s, p, p);
      shape = {N, C, o.dim(2), o.dim(3)};
      data.insert(data.end(), o.storage().begin(), o.storage().end());
    }
  return Tensor<T>(shape, data);
}

template <typename T>
Tensor<T> dense(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t N = in.dim(0), D = in.dim(1), K = w.dim(1);
  Tensor<T> out({N, K});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      double acc = b[k];
      for (std::size_t d = 0; d < D; ++d) acc += static_cast<double>(in[n * D + d]) * w[d * K + k];
      out[n * K + k] = static_cast<T>(acc);
    }
  return out;
}

// Max / average pool over [N,C,T,H,W]; avg divides by the full window.
template <typename T>
Tensor<T> pool3d(const Tensor<T>& in, bool max, std::size_t wt, std::size_t wh, std::size_t ww,
                 std::size_t st, std::size_t sh, std::size_t sw, std::size_t pt = 0,
                 std::size_t ph = 0, std::size_t pw = 0) {
  const std::size_t N = in.dim(0), C = in.dim(1), Ti = in.dim(2), H = in.dim(3), W = in.dim(4);
  const std::size_t To = (Ti + 2 * pt - wt) / st + 1, Ho = (H + 2 * ph - wh) / sh + 1,
                    Wo = (W + 2 * pw - ww) / sw + 1;
  Tensor<T> out({N, C, To, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t y = 0; y < Ho; ++y)
          for (std::size_t x = 0; x < Wo; ++x) {
            double best = -std::numeric_limits<double>::infinity(), sum = 0.0;
            for (std::size_t a = 0; a < wt; ++a)
              for (std::size_t b = 0; b < wh; ++b)
                for (std::size_t d = 0; d < ww; ++d) {
                  const long ti = static_cast<long>(t * st + a) - static_cast<long>(pt);
                  const long yi = static_cast<long>(y * sh + b) - static_cast<long>(ph);
                  const long xi = static_cast<long>(x * sw + d) - static_cast<long>(pw);
                  if (ti < 0 || yi < 0 || xi < 0 || ti >= static_cast<long>(Ti) ||
                      yi >= static_cast<long>(H) || xi >= static_cast<long>(W))
                    continue;
                  const double v = in[(((n * C + c) * Ti + ti) * H + yi) * W + xi];
                  best = std::max(best, v);
                  sum += v;
                }
            out[(((n * C + c) * To + t) * Ho + y) * Wo + x] =
                static_cast<T>(max ? best : sum / static_cast<double>(wt * wh * ww));
          }
  return out;
}

// Pairwise AUC: fraction of (real, fake) pairs ordered correctly, ties 1/2.
inline double pairwise_auc(const std::vector<double>& p, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (y[j] != 0) continue;
      den += 1.0;
      if (p[i] > p[j]) num += 1.0;
      else if (p[i] == p[j]) num += 0.5;
    }
  }
  return num / den;
}

inline double direct_logloss(const std::vector<double>& p, const std::vector<int>& y,
                             double clip = 1e-7) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::min(std::max(p[i], clip), 1.0 - clip);
    s += y[i] == 1 ? std::log(q) : std::log(1.0 - q);
  }
  return -s / static_cast<double>(p.size());
}

}  // namespace oracle
