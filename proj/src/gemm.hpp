#pragma once

#include <cstddef>

namespace dfe::detail {

// c[m x n] (+)= a[m x k] * b[k x n], all row-major and densely packed.
//
// Every c[i][j] is accumulated over p = 0..k-1 strictly in order, starting
// from 0 (or from the existing c value when accumulate is set). Blocking only
// groups independent output elements, never splits a reduction, so the
// result is invariant to m and n.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  constexpr std::size_t kRows = 4;
  constexpr std::size_t kCols = 64 / sizeof(T) * 2;
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) {
    const T* a0 = a + (i + 0) * k;
    const T* a1 = a + (i + 1) * k;
    const T* a2 = a + (i + 2) * k;
    const T* a3 = a + (i + 3) * k;
    std::size_t j = 0;
    for (; j + kCols <= n; j += kCols) {
      T acc[kRows][kCols];
      for (std::size_t r = 0; r < kRows; ++r) {
        for (std::size_t q = 0; q < kCols; ++q) {
          acc[r][q] = accumulate ? c[(i + r) * n + j + q] : T(0);
        }
      }
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n + j;
        const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
        for (std::size_t q = 0; q < kCols; ++q) {
          const T bv = brow[q];
          acc[0][q] += v0 * bv;
          acc[1][q] += v1 * bv;
          acc[2][q] += v2 * bv;
          acc[3][q] += v3 * bv;
        }
      }
      for (std::size_t r = 0; r < kRows; ++r) {
        for (std::size_t q = 0; q < kCols; ++q) c[(i + r) * n + j + q] = acc[r][q];
      }
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < kRows; ++r) {
        const T* arow = a + (i + r) * k;
        T acc = accumulate ? c[(i + r) * n + j] : T(0);
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
        c[(i + r) * n + j] = acc;
      }
    }
  }
  for (; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = r0 + kTile < rows ? r0 + kTile : rows;
      const std::size_t c1 = c0 + kTile < cols ? c0 + kTile : cols;
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t cc = c0; cc < c1; ++cc) dst[cc * rows + r] = src[r * cols + cc];
      }
    }
  }
}

}  // namespace dfe::detail
