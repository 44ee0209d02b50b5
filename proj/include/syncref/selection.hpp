// SPDX-License-Identifier: Apache-2.0
//
// Candidate selection: which images may a caption be paired with.
//
//   one  the caption's own generated image
//   t2i  top-K images by caption-image similarity (the one-to-many default)
//   t2t  top-K captions by caption-caption similarity, mapped to their images
//   i2t  top-K captions retrieved by the caption's own image, mapped to images
//   i2i  top-K images retrieved by the caption's own image
#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "syncref/embstore.hpp"
#include "syncref/error.hpp"
#include "syncref/simkernel.hpp"

namespace syncref {

enum class SelectionKind { one, t2i, t2t, i2t, i2i };

inline std::string_view to_string(SelectionKind kind) {
  switch (kind) {
    case SelectionKind::one: return "one";
    case SelectionKind::t2i: return "t2i";
    case SelectionKind::t2t: return "t2t";
    case SelectionKind::i2t: return "i2t";
    case SelectionKind::i2i: return "i2i";
  }
  return "?";
}

inline std::optional<SelectionKind> parse_selection_kind(std::string_view s) {
  for (auto k : {SelectionKind::one, SelectionKind::t2i, SelectionKind::t2t,
                 SelectionKind::i2t, SelectionKind::i2i}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

struct SelectionStrategy {
  SelectionKind kind = SelectionKind::t2i;
  std::size_t k = 15;  // ignored for kind == one

  /// Candidates that `select` can return for a pool of `images` rows.
  std::size_t effective_k(std::size_t pool) const {
    return kind == SelectionKind::one ? 1 : std::min(k, pool);
  }
};

inline bool needs_pairing(SelectionKind kind) { return kind != SelectionKind::t2i; }

struct CandidateSet {
  RowIndex caption_index = 0;
  std::vector<RowIndex> image_indices;  // retrieval rank order

  friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

namespace detail {

inline void check_strategy(const DatasetBundle& bundle, const SelectionStrategy& s) {
  if (s.kind != SelectionKind::one && s.k == 0) {
    throw Error(ErrorKind::invalid_config, "K must be at least 1");
  }
  if (needs_pairing(s.kind) && !bundle.paired()) {
    throw Error(ErrorKind::incompatible_strategy,
                "strategy " + std::string(to_string(s.kind)) +
                    " needs one image per caption, got " +
                    std::to_string(bundle.images()) + " images for " +
                    std::to_string(bundle.captions()) + " captions");
  }
}

struct RetrievalRoute {
  const EmbeddingMatrix* queries;
  const EmbeddingMatrix* pool;
};

inline RetrievalRoute route(const DatasetBundle& b, SelectionKind kind) {
  switch (kind) {
    case SelectionKind::t2i: return {&b.text_vlm, &b.image_vlm};
    case SelectionKind::t2t: return {&b.text_vlm, &b.text_vlm};
    case SelectionKind::i2t: return {&b.image_vlm, &b.text_vlm};
    case SelectionKind::i2i: return {&b.image_vlm, &b.image_vlm};
    case SelectionKind::one: break;
  }
  return {nullptr, nullptr};
}

/// Retrieved pool rows -> image indices. Caption hits map to the caption's
/// paired image; repeats keep their best rank.
inline CandidateSet to_candidates(RowIndex caption, SelectionKind kind,
                                  const simkernel::TopKResult& hits) {
  CandidateSet out{caption, {}};
  out.image_indices.reserve(hits.size());
  if (kind == SelectionKind::t2i || kind == SelectionKind::i2i) {
    out.image_indices = hits.indices;
    return out;
  }
  std::unordered_set<RowIndex> seen;
  for (RowIndex caption_hit : hits.indices) {
    const RowIndex image = caption_hit;  // paired bundle: image j belongs to caption j
    if (seen.insert(image).second) out.image_indices.push_back(image);
  }
  return out;
}

inline void check_caption(const DatasetBundle& b, std::size_t i) {
  if (i >= b.captions()) {
    throw Error(ErrorKind::index_out_of_range,
                "caption index " + std::to_string(i) + " outside [0, " +
                    std::to_string(b.captions()) + ")");
  }
}

}  // namespace detail

inline CandidateSet select(const DatasetBundle& bundle, const SelectionStrategy& strategy,
                           std::size_t caption_index,
                           const simkernel::KernelOptions& options = {}) {
  detail::check_caption(bundle, caption_index);
  detail::check_strategy(bundle, strategy);
  const auto caption = static_cast<RowIndex>(caption_index);
  if (strategy.kind == SelectionKind::one) return {caption, {caption}};
  const auto r = detail::route(bundle, strategy.kind);
  const MatrixView query{r.queries->row(caption_index).data(), 1, r.queries->dim()};
  auto hits = simkernel::topk(query, r.pool->view(), strategy.k, options);
  return detail::to_candidates(caption, strategy.kind, hits.front());
}

/// Candidate sets for every caption from one batched retrieval pass.
inline std::vector<CandidateSet> select_all(const DatasetBundle& bundle,
                                            const SelectionStrategy& strategy,
                                            const simkernel::KernelOptions& options = {}) {
  detail::check_strategy(bundle, strategy);
  const std::size_t n = bundle.captions();
  std::vector<CandidateSet> out(n);
  if (strategy.kind == SelectionKind::one) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<RowIndex>(i);
      out[i] = {c, {c}};
    }
    return out;
  }
  if (n == 0) return out;
  const auto r = detail::route(bundle, strategy.kind);
  // Query rows for i2t/i2i are image rows 0..N-1, one per caption.
  const MatrixView queries{r.queries->data().data(), n, r.queries->dim()};
  const auto hits = simkernel::topk(queries, r.pool->view(), strategy.k, options);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = detail::to_candidates(static_cast<RowIndex>(i), strategy.kind, hits[i]);
  }
  return out;
}

}  // namespace syncref
