// SPDX-License-Identifier: Apache-2.0
//
// Register-tiled inner-product kernels. Every score is the same sequential
// fused-multiply-add chain over the dimension (k ascending, starting at 0),
// whatever tile or lane it lands in, so results do not depend on blocking.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
#include <immintrin.h>
#endif

namespace syncref::simkernel::detail {

#if defined(__AVX512F__)
inline constexpr std::size_t kTileRows = 8;
inline constexpr std::size_t kTileCols = 32;
#elif defined(__AVX2__) && defined(__FMA__)
inline constexpr std::size_t kTileRows = 6;
inline constexpr std::size_t kTileCols = 16;
#else
inline constexpr std::size_t kTileRows = 4;
inline constexpr std::size_t kTileCols = 8;
#endif

static_assert(kTileCols <= 32, "tile column masks are 32-bit");

/// Largest float not above `x`; thresholds stored this way never reject a
/// double score that should have been offered.
inline float float_floor(double x) {
  const auto f = static_cast<float>(x);
  return static_cast<double>(f) > x ? std::nextafter(f, -INFINITY) : f;
}

/// Bit c set when scores[c] >= threshold, for one tile row.
inline std::uint32_t at_least(const float* scores, float threshold) {
#if defined(__AVX512F__)
  const __m512 t = _mm512_set1_ps(threshold);
  const auto lo = _mm512_cmp_ps_mask(_mm512_loadu_ps(scores), t, _CMP_GE_OQ);
  const auto hi = _mm512_cmp_ps_mask(_mm512_loadu_ps(scores + 16), t, _CMP_GE_OQ);
  return static_cast<std::uint32_t>(lo) | (static_cast<std::uint32_t>(hi) << 16);
#elif defined(__AVX2__) && defined(__FMA__)
  const __m256 t = _mm256_set1_ps(threshold);
  const int lo = _mm256_movemask_ps(_mm256_cmp_ps(_mm256_loadu_ps(scores), t, _CMP_GE_OQ));
  const int hi = _mm256_movemask_ps(_mm256_cmp_ps(_mm256_loadu_ps(scores + 8), t, _CMP_GE_OQ));
  return static_cast<std::uint32_t>(lo) | (static_cast<std::uint32_t>(hi) << 8);
#else
  std::uint32_t mask = 0;
  for (std::size_t c = 0; c < kTileCols; ++c) mask |= std::uint32_t{scores[c] >= threshold} << c;
  return mask;
#endif
}

/// Bit c set when scores[c] >= thresholds[c].
inline std::uint32_t at_least(const float* scores, const float* thresholds) {
#if defined(__AVX512F__)
  const auto lo = _mm512_cmp_ps_mask(_mm512_loadu_ps(scores), _mm512_loadu_ps(thresholds),
                                     _CMP_GE_OQ);
  const auto hi = _mm512_cmp_ps_mask(_mm512_loadu_ps(scores + 16),
                                     _mm512_loadu_ps(thresholds + 16), _CMP_GE_OQ);
  return static_cast<std::uint32_t>(lo) | (static_cast<std::uint32_t>(hi) << 16);
#elif defined(__AVX2__) && defined(__FMA__)
  const int lo = _mm256_movemask_ps(_mm256_cmp_ps(
      _mm256_loadu_ps(scores), _mm256_loadu_ps(thresholds), _CMP_GE_OQ));
  const int hi = _mm256_movemask_ps(_mm256_cmp_ps(
      _mm256_loadu_ps(scores + 8), _mm256_loadu_ps(thresholds + 8), _CMP_GE_OQ));
  return static_cast<std::uint32_t>(lo) | (static_cast<std::uint32_t>(hi) << 8);
#else
  std::uint32_t mask = 0;
  for (std::size_t c = 0; c < kTileCols; ++c) {
    mask |= std::uint32_t{scores[c] >= thresholds[c]} << c;
  }
  return mask;
#endif
}

/// Pool rows transposed into column panels of kTileCols: panel p holds
/// element k of pool row p*kTileCols + c at offset k*kTileCols + c. Rows past
/// the end of the pool are zero.
class PackedPool {
 public:
  PackedPool(const float* data, std::size_t rows, std::size_t dim)
      : rows_(rows), dim_(dim), panels_((rows + kTileCols - 1) / kTileCols),
        packed_(panels_ * dim * kTileCols, 0.0f) {
    for (std::size_t p = 0; p < panels_; ++p) {
      float* dst = packed_.data() + p * dim_ * kTileCols;
      const std::size_t cols = columns_in(p);
      for (std::size_t c = 0; c < cols; ++c) {
        const float* src = data + (p * kTileCols + c) * dim_;
        for (std::size_t k = 0; k < dim_; ++k) dst[k * kTileCols + c] = src[k];
      }
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t panels() const noexcept { return panels_; }
  std::size_t columns_in(std::size_t panel) const noexcept {
    const std::size_t first = panel * kTileCols;
    return rows_ - first < kTileCols ? rows_ - first : kTileCols;
  }
  const float* panel(std::size_t p) const noexcept {
    return packed_.data() + p * dim_ * kTileCols;
  }

 private:
  std::size_t rows_;
  std::size_t dim_;
  std::size_t panels_;
  std::vector<float> packed_;
};

/// tile[r * kTileCols + c] = dot(query r, panel column c) in float.
inline void tile_f32(const float* const* q, const float* panel, std::size_t dim,
                     float* tile) {
#if defined(__AVX512F__)
  __m512 acc[kTileRows][2];
  for (std::size_t r = 0; r < kTileRows; ++r) {
    acc[r][0] = _mm512_setzero_ps();
    acc[r][1] = _mm512_setzero_ps();
  }
  for (std::size_t k = 0; k < dim; ++k) {
    const __m512 b0 = _mm512_loadu_ps(panel + k * kTileCols);
    const __m512 b1 = _mm512_loadu_ps(panel + k * kTileCols + 16);
    for (std::size_t r = 0; r < kTileRows; ++r) {
      const __m512 a = _mm512_set1_ps(q[r][k]);
      acc[r][0] = _mm512_fmadd_ps(a, b0, acc[r][0]);
      acc[r][1] = _mm512_fmadd_ps(a, b1, acc[r][1]);
    }
  }
  for (std::size_t r = 0; r < kTileRows; ++r) {
    _mm512_storeu_ps(tile + r * kTileCols, acc[r][0]);
    _mm512_storeu_ps(tile + r * kTileCols + 16, acc[r][1]);
  }
#elif defined(__AVX2__) && defined(__FMA__)
  __m256 acc[kTileRows][2];
  for (std::size_t r = 0; r < kTileRows; ++r) {
    acc[r][0] = _mm256_setzero_ps();
    acc[r][1] = _mm256_setzero_ps();
  }
  for (std::size_t k = 0; k < dim; ++k) {
    const __m256 b0 = _mm256_loadu_ps(panel + k * kTileCols);
    const __m256 b1 = _mm256_loadu_ps(panel + k * kTileCols + 8);
    for (std::size_t r = 0; r < kTileRows; ++r) {
      const __m256 a = _mm256_broadcast_ss(q[r] + k);
      acc[r][0] = _mm256_fmadd_ps(a, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(a, b1, acc[r][1]);
    }
  }
  for (std::size_t r = 0; r < kTileRows; ++r) {
    _mm256_storeu_ps(tile + r * kTileCols, acc[r][0]);
    _mm256_storeu_ps(tile + r * kTileCols + 8, acc[r][1]);
  }
#else
  float acc[kTileRows][kTileCols] = {};
  for (std::size_t k = 0; k < dim; ++k) {
    const float* b = panel + k * kTileCols;
    for (std::size_t r = 0; r < kTileRows; ++r) {
      const float a = q[r][k];
      for (std::size_t c = 0; c < kTileCols; ++c) {
        acc[r][c] = std::fma(a, b[c], acc[r][c]);
      }
    }
  }
  for (std::size_t r = 0; r < kTileRows; ++r) {
    for (std::size_t c = 0; c < kTileCols; ++c) tile[r * kTileCols + c] = acc[r][c];
  }
#endif
}

/// Same tile with double accumulation. Products of two floats are exact in
/// double, so each step is a single rounding of the running sum.
inline void tile_f64(const float* const* q, const float* panel, std::size_t dim,
                     double* tile) {
  double acc[kTileRows][kTileCols] = {};
  for (std::size_t k = 0; k < dim; ++k) {
    const float* b = panel + k * kTileCols;
    for (std::size_t r = 0; r < kTileRows; ++r) {
      const double a = q[r][k];
      for (std::size_t c = 0; c < kTileCols; ++c) {
        acc[r][c] = std::fma(a, static_cast<double>(b[c]), acc[r][c]);
      }
    }
  }
  for (std::size_t r = 0; r < kTileRows; ++r) {
    for (std::size_t c = 0; c < kTileCols; ++c) tile[r * kTileCols + c] = acc[r][c];
  }
}

}  // namespace syncref::simkernel::detail
