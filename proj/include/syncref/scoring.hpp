// SPDX-License-Identifier: Apache-2.0
//
// Alignment scorers for an (image, caption) pair.
//
// cos: w * cos(image embedding, caption embedding) in the VLM space.
// ret: the image retrieves its top-K_r captions (I2T, VLM space); the score is
//      the best sentence-embedding similarity between one of those captions
//      and the target caption. A retrieved caption equal to the target scores
//      exactly 1.
//
// Pair scores always accumulate in double; the float/double choice in
// KernelOptions only affects the retrieval passes.
#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "syncref/embstore.hpp"
#include "syncref/error.hpp"
#include "syncref/selection.hpp"
#include "syncref/simkernel.hpp"

namespace syncref {

enum class ScorerKind { cos, ret };

inline std::string_view to_string(ScorerKind kind) {
  return kind == ScorerKind::cos ? "cos" : "ret";
}

inline std::optional<ScorerKind> parse_scorer_kind(std::string_view s) {
  if (s == "cos") return ScorerKind::cos;
  if (s == "ret") return ScorerKind::ret;
  return std::nullopt;
}

struct ScorerConfig {
  ScorerKind kind = ScorerKind::ret;
  double w = 1.0;
  std::size_t k_r = 2;  // ret only

  void validate() const {
    if (w != 1.0) throw Error(ErrorKind::invalid_config, "scale w is fixed at 1.0");
    if (kind == ScorerKind::ret && k_r == 0) {
      throw Error(ErrorKind::invalid_config, "K_r must be at least 1");
    }
  }
};

namespace detail {

inline void check_pair(const DatasetBundle& b, std::size_t image, std::size_t caption) {
  if (image >= b.images()) {
    throw Error(ErrorKind::index_out_of_range,
                "image index " + std::to_string(image) + " outside [0, " +
                    std::to_string(b.images()) + ")");
  }
  check_caption(b, caption);
}

}  // namespace detail

inline constexpr auto kPairAccumulation = simkernel::Accumulation::f64;

inline double score_cos(const DatasetBundle& bundle, std::size_t image_index,
                        std::size_t caption_index) {
  detail::check_pair(bundle, image_index, caption_index);
  constexpr double w = 1.0;
  return w * simkernel::cosine(bundle.image_vlm.row(image_index),
                               bundle.text_vlm.row(caption_index), true, kPairAccumulation);
}

/// Sentence-space cosine between two captions; a caption with itself is 1.
inline double sentence_similarity(const DatasetBundle& bundle, std::size_t a,
                                  std::size_t b) {
  if (a == b) return 1.0;
  return simkernel::cosine(bundle.text_sent.row(a), bundle.text_sent.row(b), true,
                           kPairAccumulation);
}

/// Best sentence similarity between `caption_index` and any retrieved caption.
inline double max_sentence_similarity(const DatasetBundle& bundle,
                                      std::span<const RowIndex> retrieved,
                                      std::size_t caption_index) {
  double best = -1.0;
  for (RowIndex r : retrieved) {
    best = std::max(best, sentence_similarity(bundle, r, caption_index));
  }
  return best;
}

inline double score_ret(const DatasetBundle& bundle, std::size_t image_index,
                        std::size_t caption_index, std::size_t k_r,
                        const simkernel::KernelOptions& options = {}) {
  detail::check_pair(bundle, image_index, caption_index);
  if (k_r == 0) throw Error(ErrorKind::invalid_config, "K_r must be at least 1");
  const MatrixView query{bundle.image_vlm.row(image_index).data(), 1,
                         bundle.image_vlm.dim()};
  const auto hits = simkernel::topk(query, bundle.text_vlm.view(), k_r, options);
  return max_sentence_similarity(bundle, hits.front().indices, caption_index);
}

/// Cached image-to-caption retrievals (top-K_r caption rows per image).
/// Rows for images that were never requested stay empty.
class RetrievalCache {
 public:
  RetrievalCache() = default;

  /// Retrieves for the listed images only, in one batched pass.
  static RetrievalCache build(const DatasetBundle& bundle,
                              std::span<const RowIndex> images, std::size_t k_r,
                              const simkernel::KernelOptions& options) {
    RetrievalCache cache;
    cache.k_r_ = k_r;
    cache.hits_.resize(bundle.images());
    cache.present_.assign(bundle.images(), false);
    if (images.empty()) return cache;
    const std::size_t d = bundle.image_vlm.dim();
    std::vector<float> gathered(images.size() * d);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto row = bundle.image_vlm.row(images[i]);
      std::copy(row.begin(), row.end(), gathered.begin() + i * d);
    }
    const MatrixView queries{gathered.data(), images.size(), d};
    auto results = simkernel::topk(queries, bundle.text_vlm.view(), k_r, options);
    for (std::size_t i = 0; i < images.size(); ++i) {
      cache.hits_[images[i]] = std::move(results[i].indices);
      cache.present_[images[i]] = true;
    }
    return cache;
  }

  /// Adopts per-image results computed elsewhere (e.g. the column side of a
  /// bidirectional pass). `per_image.size()` must equal the image count.
  static RetrievalCache adopt(std::vector<simkernel::TopKResult> per_image,
                              std::size_t k_r) {
    RetrievalCache cache;
    cache.k_r_ = k_r;
    cache.hits_.resize(per_image.size());
    cache.present_.assign(per_image.size(), true);
    for (std::size_t i = 0; i < per_image.size(); ++i) {
      cache.hits_[i] = std::move(per_image[i].indices);
    }
    return cache;
  }

  bool contains(std::size_t image) const {
    return image < present_.size() && present_[image];
  }
  std::span<const RowIndex> captions_for(std::size_t image) const { return hits_[image]; }
  std::size_t k_r() const noexcept { return k_r_; }

 private:
  std::size_t k_r_ = 0;
  std::vector<std::vector<RowIndex>> hits_;
  std::vector<bool> present_;
};

/// A configured scorer bound to one bundle. With kind == ret and a cache,
/// retrievals come from the cache; otherwise they are computed on demand.
class AlignmentScorer {
 public:
  AlignmentScorer(const DatasetBundle& bundle, ScorerConfig config,
                  simkernel::KernelOptions options = {},
                  const RetrievalCache* cache = nullptr)
      : bundle_(bundle), config_(config), options_(options), cache_(cache) {
    config_.validate();
  }

  const ScorerConfig& config() const noexcept { return config_; }

  double operator()(std::size_t image, std::size_t caption) const {
    if (config_.kind == ScorerKind::cos) {
      return score_cos(bundle_, image, caption);
    }
    if (cache_ != nullptr && cache_->contains(image)) {
      detail::check_pair(bundle_, image, caption);
      return max_sentence_similarity(bundle_, cache_->captions_for(image), caption);
    }
    return score_ret(bundle_, image, caption, config_.k_r, options_);
  }

 private:
  const DatasetBundle& bundle_;
  ScorerConfig config_;
  simkernel::KernelOptions options_;
  const RetrievalCache* cache_;
};

struct BestCandidate {
  RowIndex image_index = 0;
  double score = 0.0;
};

/// Highest-scoring candidate; on equal scores the earlier-ranked candidate
/// wins, then the lower image index.
inline BestCandidate score_candidates(const CandidateSet& cand,
                                      const AlignmentScorer& scorer) {
  if (cand.image_indices.empty()) {
    throw Error(ErrorKind::invalid_config, "candidate set is empty", {},
                cand.caption_index);
  }
  BestCandidate best{cand.image_indices.front(),
                     scorer(cand.image_indices.front(), cand.caption_index)};
  for (std::size_t r = 1; r < cand.image_indices.size(); ++r) {
    const RowIndex image = cand.image_indices[r];
    const double s = scorer(image, cand.caption_index);
    if (s > best.score) best = {image, s};
  }
  return best;
}

inline BestCandidate score_candidates(const DatasetBundle& bundle,
                                      const CandidateSet& cand,
                                      const ScorerConfig& config,
                                      const simkernel::KernelOptions& options = {}) {
  return score_candidates(cand, AlignmentScorer(bundle, config, options));
}

}  // namespace syncref
