// SPDX-License-Identifier: Apache-2.0
//
// Exact top-K cosine retrieval and pairwise cosine similarity.
//
// Rows are assumed unit-norm (the bundle guarantees it), so similarity is a
// plain inner product. Scores are sequential FMA chains over the dimension;
// ranking is by (score descending, row index ascending). Parallelism is over
// query blocks only and never changes a score, so results are identical for
// any worker count or block size.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "syncref/detail/microkernel.hpp"
#include "syncref/embstore.hpp"
#include "syncref/error.hpp"
#include "syncref/parallel.hpp"

namespace syncref::simkernel {

enum class Accumulation { f32, f64 };

struct KernelOptions {
  std::size_t workers = 1;
  std::size_t query_block = 128;
  Accumulation accumulation = Accumulation::f32;
};

struct TopKResult {
  std::vector<RowIndex> indices;
  std::vector<double> scores;

  std::size_t size() const noexcept { return indices.size(); }
  friend bool operator==(const TopKResult&, const TopKResult&) = default;
};

/// Inner product as a sequential FMA chain, bit-identical to the tiled kernel.
inline double dot(std::span<const float> a, std::span<const float> b,
                  Accumulation acc = Accumulation::f32) {
  const std::size_t d = a.size();
  if (acc == Accumulation::f64) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      s = std::fma(static_cast<double>(a[k]), static_cast<double>(b[k]), s);
    }
    return s;
  }
  float s = 0.0f;
  for (std::size_t k = 0; k < d; ++k) s = std::fma(a[k], b[k], s);
  return s;
}

/// Cosine similarity clamped to [-1, 1]. When both inputs are known to be
/// unit-norm it reduces to `dot`.
inline double cosine(std::span<const float> a, std::span<const float> b,
                     bool both_normalized = false,
                     Accumulation acc = Accumulation::f32) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::dimension_mismatch,
                "vectors have dimensions " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()));
  }
  double value = dot(a, b, acc);
  if (!both_normalized) {
    const double na = syncref::detail::row_norm(a);
    const double nb = syncref::detail::row_norm(b);
    if (na == 0.0 || nb == 0.0) {
      throw Error(ErrorKind::degenerate_input, "zero-norm vector");
    }
    value /= na * nb;
  }
  return std::clamp(value, -1.0, 1.0);
}

namespace detail {

using simkernel::detail::at_least;
using simkernel::detail::float_floor;

struct Scored {
  double score;
  RowIndex index;
};

/// Strict ranking order: higher score first, then lower index.
inline bool ranks_before(const Scored& a, const Scored& b) noexcept {
  return a.score > b.score || (a.score == b.score && a.index < b.index);
}

/// Threshold-filtered buffer; compacts with nth_element once it grows to
/// `capacity`, then sorts the K survivors at the end.
class RowSelector {
 public:
  explicit RowSelector(std::size_t k)
      : k_(k), capacity_(std::max<std::size_t>(2 * k, k + 256)) {
    buffer_.reserve(capacity_);
  }

  /// Scores below this float can never enter the list.
  float floor() const noexcept { return floor_; }

  void offer(double score, RowIndex index) {
    if (score < threshold_) return;
    buffer_.push_back({score, index});
    if (buffer_.size() >= capacity_) compact();
  }

  TopKResult finish() {
    if (buffer_.size() > k_) compact();
    std::sort(buffer_.begin(), buffer_.end(), ranks_before);
    TopKResult out;
    out.indices.reserve(buffer_.size());
    out.scores.reserve(buffer_.size());
    for (const auto& s : buffer_) {
      out.indices.push_back(s.index);
      out.scores.push_back(s.score);
    }
    return out;
  }

 private:
  void compact() {
    std::nth_element(buffer_.begin(), buffer_.begin() + (k_ - 1), buffer_.end(),
                     ranks_before);
    buffer_.resize(k_);
    threshold_ = buffer_[k_ - 1].score;
    floor_ = float_floor(threshold_);
  }

  std::size_t k_;
  std::size_t capacity_;
  double threshold_ = -std::numeric_limits<double>::infinity();
  float floor_ = -std::numeric_limits<float>::infinity();
  std::vector<Scored> buffer_;
};

/// Per-column sorted lists of at most k entries, stored flat. `floors()` is
/// padded to `padded_columns` with +inf so padding never passes a filter.
class ColumnSelector {
 public:
  ColumnSelector(std::size_t columns, std::size_t padded_columns, std::size_t k)
      : k_(k),
        count_(columns, 0),
        entries_(columns * k),
        floors_(padded_columns, std::numeric_limits<float>::infinity()) {
    std::fill(floors_.begin(), floors_.begin() + static_cast<std::ptrdiff_t>(columns),
              -std::numeric_limits<float>::infinity());
  }

  const float* floors() const noexcept { return floors_.data(); }

  void offer(std::size_t column, double score, RowIndex index) {
    Scored* list = entries_.data() + column * k_;
    std::uint32_t& n = count_[column];
    const Scored item{score, index};
    if (n == k_) {
      if (score < list[k_ - 1].score || !ranks_before(item, list[k_ - 1])) return;
      --n;
    }
    std::size_t pos = n;
    while (pos > 0 && ranks_before(item, list[pos - 1])) {
      list[pos] = list[pos - 1];
      --pos;
    }
    list[pos] = item;
    ++n;
    if (n == k_) floors_[column] = float_floor(list[k_ - 1].score);
  }

  std::span<const Scored> column(std::size_t c) const {
    return {entries_.data() + c * k_, count_[c]};
  }

 private:
  std::size_t k_;
  std::vector<std::uint32_t> count_;
  std::vector<Scored> entries_;
  std::vector<float> floors_;
};

inline void check_shapes(const MatrixView& queries, const MatrixView& pool) {
  if (queries.dim != pool.dim) {
    throw Error(ErrorKind::dimension_mismatch,
                "query dimension " + std::to_string(queries.dim) +
                    " differs from pool dimension " + std::to_string(pool.dim));
  }
  if (pool.rows == 0) throw Error(ErrorKind::empty_pool, "retrieval pool is empty");
  if (pool.rows > std::numeric_limits<RowIndex>::max()) {
    throw Error(ErrorKind::invalid_config, "pool exceeds 2^32 rows");
  }
}

}  // namespace detail

/// Top-K in both directions of one similarity matrix S = queries * pool^T:
/// `rows[q]` ranks pool rows for query q, `cols[p]` ranks query rows for
/// pool row p. Either side may be disabled with k = 0.
struct BidirectionalTopK {
  std::vector<TopKResult> rows;
  std::vector<TopKResult> cols;
};

inline BidirectionalTopK topk_bidirectional(const MatrixView& queries,
                                            const MatrixView& pool,
                                            std::size_t k_rows,
                                            std::size_t k_cols,
                                            const KernelOptions& options = {}) {
  using simkernel::detail::kTileCols;
  using simkernel::detail::kTileRows;
  detail::check_shapes(queries, pool);
  if (k_cols > 0 && queries.rows > std::numeric_limits<RowIndex>::max()) {
    throw Error(ErrorKind::invalid_config, "query set exceeds 2^32 rows");
  }
  k_rows = std::min(k_rows, pool.rows);
  k_cols = std::min(k_cols, queries.rows);

  BidirectionalTopK out;
  if (k_rows > 0) out.rows.resize(queries.rows);
  if (queries.rows == 0) {
    if (k_cols > 0) out.cols.resize(pool.rows);
    return out;
  }

  const detail::PackedPool packed(pool.data, pool.rows, pool.dim);
  const std::size_t block =
      std::max<std::size_t>(kTileRows, options.query_block / kTileRows * kTileRows);
  const std::size_t tasks = (queries.rows + block - 1) / block;
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, tasks));
  const std::vector<float> zero_row(pool.dim, 0.0f);

  std::vector<detail::ColumnSelector> column_parts;
  if (k_cols > 0) {
    column_parts.assign(workers, detail::ColumnSelector(
                                     pool.rows, packed.panels() * kTileCols, k_cols));
  }

  parallel_for(tasks, workers, [&](std::size_t task, std::size_t worker) {
    const std::size_t q0 = task * block;
    const std::size_t q1 = std::min(queries.rows, q0 + block);
    std::vector<detail::RowSelector> selectors;
    if (k_rows > 0) selectors.assign(q1 - q0, detail::RowSelector(k_rows));
    alignas(64) float tile32[kTileRows * kTileCols];
    alignas(64) double tile64[kTileRows * kTileCols];
    const float* qrows[kTileRows];

    for (std::size_t p = 0; p < packed.panels(); ++p) {
      const std::size_t cols = packed.columns_in(p);
      const std::size_t col0 = p * kTileCols;
      for (std::size_t g = q0; g < q1; g += kTileRows) {
        const std::size_t live = std::min(kTileRows, q1 - g);
        for (std::size_t r = 0; r < kTileRows; ++r) {
          qrows[r] = r < live ? queries.data + (g + r) * queries.dim : zero_row.data();
        }
        const bool wide = options.accumulation == Accumulation::f64;
        if (wide) {
          detail::tile_f64(qrows, packed.panel(p), pool.dim, tile64);
          // Rounding is monotone, so filtering on the rounded value is safe.
          for (std::size_t i = 0; i < kTileRows * kTileCols; ++i) {
            tile32[i] = static_cast<float>(tile64[i]);
          }
        } else {
          detail::tile_f32(qrows, packed.panel(p), pool.dim, tile32);
        }
        auto score_at = [&](std::size_t i) -> double { return wide ? tile64[i] : tile32[i]; };
        const std::uint32_t live_cols =
            cols == 32 ? ~std::uint32_t{0} : (std::uint32_t{1} << cols) - 1;
        if (k_rows > 0) {
          for (std::size_t r = 0; r < live; ++r) {
            auto& sel = selectors[g + r - q0];
            std::uint32_t mask = detail::at_least(tile32 + r * kTileCols, sel.floor()) & live_cols;
            for (; mask != 0; mask &= mask - 1) {
              const auto c = static_cast<std::size_t>(std::countr_zero(mask));
              sel.offer(score_at(r * kTileCols + c), static_cast<RowIndex>(col0 + c));
            }
          }
        }
        if (k_cols > 0) {
          auto& part = column_parts[worker];
          for (std::size_t r = 0; r < live; ++r) {
            std::uint32_t mask = detail::at_least(tile32 + r * kTileCols, part.floors() + col0);
            for (; mask != 0; mask &= mask - 1) {
              const auto c = static_cast<std::size_t>(std::countr_zero(mask));
              part.offer(col0 + c, score_at(r * kTileCols + c), static_cast<RowIndex>(g + r));
            }
          }
        }
      }
    }
    for (std::size_t q = q0; q < q1 && k_rows > 0; ++q) {
      out.rows[q] = selectors[q - q0].finish();
    }
  });

  if (k_cols > 0) {
    out.cols.resize(pool.rows);
    std::vector<detail::Scored> merged;
    for (std::size_t c = 0; c < pool.rows; ++c) {
      merged.clear();
      for (const auto& part : column_parts) {
        const auto list = part.column(c);
        merged.insert(merged.end(), list.begin(), list.end());
      }
      std::sort(merged.begin(), merged.end(), detail::ranks_before);
      const std::size_t keep = std::min(k_cols, merged.size());
      auto& res = out.cols[c];
      res.indices.reserve(keep);
      res.scores.reserve(keep);
      for (std::size_t i = 0; i < keep; ++i) {
        res.indices.push_back(merged[i].index);
        res.scores.push_back(merged[i].score);
      }
    }
  }
  return out;
}

/// For each query row, the K most similar pool rows. K is clamped to the pool
/// size.
inline std::vector<TopKResult> topk(const MatrixView& queries, const MatrixView& pool,
                                    std::size_t k, const KernelOptions& options = {}) {
  if (k == 0) throw Error(ErrorKind::invalid_config, "K must be at least 1");
  return topk_bidirectional(queries, pool, k, 0, options).rows;
}

inline std::vector<TopKResult> topk(const EmbeddingMatrix& queries,
                                    const EmbeddingMatrix& pool, std::size_t k,
                                    const KernelOptions& options = {}) {
  return topk(queries.view(), pool.view(), k, options);
}

/// Element-wise cosine of (mat_a[rows_a[i]], mat_b[rows_b[i]]), scaled by w = 1.
inline std::vector<double> score_pairs(std::span<const RowIndex> rows_a,
                                       const EmbeddingMatrix& mat_a,
                                       std::span<const RowIndex> rows_b,
                                       const EmbeddingMatrix& mat_b,
                                       Accumulation acc = Accumulation::f32) {
  if (rows_a.size() != rows_b.size()) {
    throw Error(ErrorKind::length_mismatch,
                "index lists have lengths " + std::to_string(rows_a.size()) +
                    " and " + std::to_string(rows_b.size()));
  }
  if (!rows_a.empty() && mat_a.dim() != mat_b.dim()) {
    throw Error(ErrorKind::dimension_mismatch, "matrices differ in dimension");
  }
  constexpr double w = 1.0;
  const bool unit = mat_a.normalized() && mat_b.normalized();
  std::vector<double> out;
  out.reserve(rows_a.size());
  for (std::size_t i = 0; i < rows_a.size(); ++i) {
    if (rows_a[i] >= mat_a.rows()) {
      throw Error(ErrorKind::index_out_of_range,
                  "row " + std::to_string(rows_a[i]) + " of " +
                      std::to_string(mat_a.rows()),
                  {}, i);
    }
    if (rows_b[i] >= mat_b.rows()) {
      throw Error(ErrorKind::index_out_of_range,
                  "row " + std::to_string(rows_b[i]) + " of " +
                      std::to_string(mat_b.rows()),
                  {}, i);
    }
    out.push_back(w * cosine(mat_a.row(rows_a[i]), mat_b.row(rows_b[i]), unit, acc));
  }
  return out;
}

}  // namespace syncref::simkernel
