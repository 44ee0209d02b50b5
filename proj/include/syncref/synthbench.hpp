// SPDX-License-Identifier: Apache-2.0
//
// Planted-alignment benchmark bundles, an auditor that scores a manifest
// against the planted truth, and a brute-force reference refinement.
//
// Generator (bit-reproducible from the seed):
//   * every random stream is SplitMix64 started at
//       state = seed ^ (0x9E3779B97F4A7C15 * (stream + 1))
//     with streams 1 latent, 2 text noise, 3 sentence noise, 4 image noise,
//     5 corruption, 6 projection;
//   * uniform(): (next() >> 11) * 2^-53;
//   * normal(): Box-Muller on u1 = 1 - uniform(), u2 = uniform(), returning
//     r*cos(2 pi u2) and then r*sin(2 pi u2) on the following call;
//   * z_i = normalize(d normals) for i = 0..n-1;
//   * projection P is d_s x d normals / sqrt(d_s), drawn row by row;
//   * text_vlm[i]  = normalize(z_i + sigma_text * d normals);
//   * text_sent[i] = normalize(P z_i + sigma_text * d_s normals);
//   * for each row i: u = uniform() from stream 5; if u < p_corrupt then
//     j = (i + 1 + floor(uniform() * (n - 1))) mod n, else j = i;
//     image_vlm[i] = normalize(z_j + sigma_image * d normals), truth[i] = j.
//   All arithmetic is double; rows are rounded to float after normalizing.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "syncref/embstore.hpp"
#include "syncref/error.hpp"
#include "syncref/pipeline.hpp"

namespace syncref::synthbench {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed, std::uint64_t stream)
      : state_(seed ^ (0x9E3779B97F4A7C15ull * (stream + 1))) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

enum Stream : std::uint64_t {
  kLatent = 1,
  kTextNoise = 2,
  kSentenceNoise = 3,
  kImageNoise = 4,
  kCorruption = 5,
  kProjection = 6,
};

struct BenchSpec {
  std::size_t n = 500;
  std::size_t d = 32;
  std::size_t d_s = 32;
  double sigma_text = 0.05;
  double sigma_image = 0.05;
  double p_corrupt = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 2) throw Error(ErrorKind::invalid_config, "bench needs n >= 2");
    if (d == 0 || d_s == 0) throw Error(ErrorKind::invalid_config, "dimensions must be positive");
    if (!(sigma_text >= 0.0) || !(sigma_image >= 0.0)) {
      throw Error(ErrorKind::invalid_config, "noise scales must be non-negative");
    }
    if (!(p_corrupt >= 0.0 && p_corrupt <= 1.0)) {
      throw Error(ErrorKind::invalid_config, "p_corrupt must lie in [0, 1]");
    }
  }
};

struct PlantedBundle {
  DatasetBundle bundle;
  std::vector<RowIndex> truth;  // latent index of each image row
  std::vector<bool> corrupted;
  BenchSpec spec;
};

namespace detail {

inline void normalize_into(std::vector<double>& v, float* out) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  const double norm = std::sqrt(sum);
  if (norm == 0.0) throw Error(ErrorKind::degenerate_input, "generated a zero vector");
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = static_cast<float>(v[k] / norm);
}

inline std::vector<std::string> numbered(std::string_view prefix, std::size_t n) {
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(std::string(prefix) + std::to_string(i));
  return ids;
}

}  // namespace detail

inline PlantedBundle generate(const BenchSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n, d = spec.d, ds = spec.d_s;

  SplitMix64 latent_rng(spec.seed, kLatent);
  std::vector<double> latent(n * d);
  {
    std::vector<double> v(d);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (auto& x : v) {
        x = latent_rng.normal();
        sum += x * x;
      }
      const double norm = std::sqrt(sum);
      for (std::size_t k = 0; k < d; ++k) latent[i * d + k] = v[k] / norm;
    }
  }

  // Stored transposed (d x d_s) so P z accumulates over k in a fixed order.
  SplitMix64 proj_rng(spec.seed, kProjection);
  std::vector<double> proj_t(d * ds);
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(ds));
  for (std::size_t row = 0; row < ds; ++row) {
    for (std::size_t k = 0; k < d; ++k) proj_t[k * ds + row] = proj_rng.normal() * proj_scale;
  }

  SplitMix64 text_rng(spec.seed, kTextNoise);
  SplitMix64 sent_rng(spec.seed, kSentenceNoise);
  SplitMix64 image_rng(spec.seed, kImageNoise);
  SplitMix64 corrupt_rng(spec.seed, kCorruption);

  std::vector<float> text(n * d), sent(n * ds), image(n * d);
  std::vector<RowIndex> truth(n);
  std::vector<bool> corrupted(n, false);
  std::vector<double> v(d), y(ds);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = latent.data() + i * d;
    for (std::size_t k = 0; k < d; ++k) v[k] = z[k] + spec.sigma_text * text_rng.normal();
    detail::normalize_into(v, text.data() + i * d);

    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      const double zk = z[k];
      const double* p = proj_t.data() + k * ds;
      for (std::size_t r = 0; r < ds; ++r) y[r] += p[r] * zk;
    }
    for (std::size_t r = 0; r < ds; ++r) y[r] += spec.sigma_text * sent_rng.normal();
    detail::normalize_into(y, sent.data() + i * ds);

    std::size_t j = i;
    if (corrupt_rng.uniform() < spec.p_corrupt) {
      const auto offset = static_cast<std::size_t>(
          std::floor(corrupt_rng.uniform() * static_cast<double>(n - 1)));
      j = (i + 1 + offset) % n;
      corrupted[i] = true;
    }
    truth[i] = static_cast<RowIndex>(j);
    const double* zj = latent.data() + j * d;
    for (std::size_t k = 0; k < d; ++k) v[k] = zj[k] + spec.sigma_image * image_rng.normal();
    detail::normalize_into(v, image.data() + i * d);
  }

  auto caption_ids = detail::numbered("cap_", n);
  std::vector<CaptionRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    records.push_back({caption_ids[i], "synthetic caption " + std::to_string(i)});
  }
  const auto dim = static_cast<std::uint32_t>(d);
  PlantedBundle out;
  out.bundle = make_bundle(
      CaptionCorpus(std::move(records)),
      EmbeddingMatrix(n, dim, std::move(text), true, caption_ids),
      EmbeddingMatrix(n, dim, std::move(image), true, detail::numbered("img_", n)),
      EmbeddingMatrix(n, static_cast<std::uint32_t>(ds), std::move(sent), true, caption_ids));
  out.truth = std::move(truth);
  out.corrupted = std::move(corrupted);
  out.spec = spec;
  return out;
}

inline std::size_t corrupted_count(const PlantedBundle& planted) {
  return static_cast<std::size_t>(
      std::count(planted.corrupted.begin(), planted.corrupted.end(), true));
}

/// File names written by `write_bench`.
struct BenchFiles {
  static constexpr const char* captions = "captions.jsonl";
  static constexpr const char* text_vlm = "text_vlm.emb";
  static constexpr const char* image_vlm = "image_vlm.emb";
  static constexpr const char* text_sent = "text_sent.emb";
  static constexpr const char* truth = "truth.json";
};

inline BundlePaths bench_paths(const std::filesystem::path& dir) {
  return {dir / BenchFiles::captions, dir / BenchFiles::text_vlm,
          dir / BenchFiles::image_vlm, dir / BenchFiles::text_sent};
}

inline nlohmann::json truth_json(const PlantedBundle& planted) {
  const auto& s = planted.spec;
  std::vector<int> corrupted(planted.corrupted.begin(), planted.corrupted.end());
  return {{"n", s.n},
          {"d", s.d},
          {"d_s", s.d_s},
          {"sigma_text", s.sigma_text},
          {"sigma_image", s.sigma_image},
          {"p_corrupt", s.p_corrupt},
          {"seed", s.seed},
          {"corrupted_count", corrupted_count(planted)},
          {"truth", planted.truth},
          {"corrupted", corrupted}};
}

/// Full bundle (corpus, three SYNCEMB1 matrices with sidecars) plus truth.json.
inline void write_bench(const PlantedBundle& planted, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto paths = bench_paths(dir);
  write_corpus(planted.bundle.corpus, paths.corpus);
  write_matrix(planted.bundle.text_vlm, paths.text_vlm);
  write_matrix(planted.bundle.image_vlm, paths.image_vlm);
  write_matrix(planted.bundle.text_sent, paths.text_sent);
  write_atomically(dir / BenchFiles::truth,
                   [&](std::ostream& out) { out << truth_json(planted).dump() << '\n'; });
}

// ---------------------------------------------------------------------------
// Audit

struct AuditReport {
  double match_rate = 0.0;       // kept entries whose image's latent is the caption
  double rescue_rate = 0.0;      // corrupted captions kept with a latent-matched image
  double purge_precision = 0.0;  // pruned captions that were corrupted and unmatched
  std::size_t kept = 0;
  std::size_t pruned = 0;
  std::size_t corrupted = 0;
};

inline AuditReport audit(const PlantedBundle& planted, const RefinedManifest& manifest) {
  const std::size_t n = planted.bundle.captions();
  if (manifest.entries.size() + manifest.pruned.size() != n) {
    throw Error(ErrorKind::id_misalignment,
                "manifest covers " +
                    std::to_string(manifest.entries.size() + manifest.pruned.size()) +
                    " captions, bundle has " + std::to_string(n));
  }
  std::vector<bool> seen(n, false);
  auto check = [&](const ScoredTriple& t) {
    if (t.caption_index >= n || t.image_index >= planted.truth.size() ||
        seen[t.caption_index]) {
      throw Error(ErrorKind::id_misalignment, "manifest entry does not belong to the bundle",
                  {}, t.caption_index);
    }
    seen[t.caption_index] = true;
    return planted.truth[t.image_index] == t.caption_index;
  };
  AuditReport r;
  r.kept = manifest.entries.size();
  r.pruned = manifest.pruned.size();
  r.corrupted = corrupted_count(planted);
  std::size_t matched = 0, rescued = 0, purged = 0;
  for (const auto& e : manifest.entries) {
    const bool match = check(e);
    matched += match;
    rescued += match && planted.corrupted[e.caption_index];
  }
  for (const auto& e : manifest.pruned) {
    const bool match = check(e);
    purged += !match && planted.corrupted[e.caption_index];
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  r.match_rate = ratio(matched, r.kept);
  r.rescue_rate = ratio(rescued, r.corrupted);
  r.purge_precision = ratio(purged, r.pruned);
  return r;
}

// ---------------------------------------------------------------------------
// Brute-force reference

inline constexpr std::size_t kOracleMaxRows = 2000;

namespace oracle_detail {

inline double dot64(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    s += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  }
  return s;
}

inline double cos64(std::span<const float> a, std::span<const float> b, bool unit) {
  double value = dot64(a, b);
  if (!unit) value /= std::sqrt(dot64(a, a)) * std::sqrt(dot64(b, b));
  return std::min(1.0, std::max(-1.0, value));
}

/// Every pool row, fully sorted by (similarity desc, index asc).
inline std::vector<RowIndex> full_ranking(std::span<const float> query,
                                          const EmbeddingMatrix& pool) {
  std::vector<double> sims(pool.rows());
  for (std::size_t j = 0; j < pool.rows(); ++j) sims[j] = dot64(query, pool.row(j));
  std::vector<RowIndex> order(pool.rows());
  std::iota(order.begin(), order.end(), RowIndex{0});
  std::sort(order.begin(), order.end(), [&](RowIndex a, RowIndex b) {
    return sims[a] > sims[b] || (sims[a] == sims[b] && a < b);
  });
  return order;
}

inline std::size_t floor_keep(std::size_t n, double tau) {
  const long double x = static_cast<long double>(n) * tau;
  long double f = std::floor(x);
  if (f + 1 - x <= 1e-12L * std::max<long double>(1.0L, x)) f += 1;
  return std::min(n, static_cast<std::size_t>(f));
}

}  // namespace oracle_detail

/// Same contract as `refine`, computed by exhaustive loops, full sorts and
/// double accumulation. Guarded to bundles of at most 2000 rows.
inline RefinedManifest oracle_refine(const DatasetBundle& b, const PipelineConfig& config) {
  using namespace oracle_detail;
  config.validate();
  const std::size_t n = b.captions();
  if (n > kOracleMaxRows || b.images() > kOracleMaxRows) {
    throw Error(ErrorKind::size_guard, "reference refinement is limited to 2000 rows");
  }
  const auto kind = config.strategy.kind;
  if (n > 0 && b.images() == 0) throw Error(ErrorKind::empty_pool, "bundle has no images");
  if (kind != SelectionKind::t2i && b.images() != n) {
    throw Error(ErrorKind::incompatible_strategy, "strategy needs one image per caption");
  }

  auto candidates_for = [&](std::size_t i) {
    std::vector<RowIndex> out;
    if (kind == SelectionKind::one) return std::vector<RowIndex>{static_cast<RowIndex>(i)};
    std::vector<RowIndex> ranking;
    switch (kind) {
      case SelectionKind::t2i: ranking = full_ranking(b.text_vlm.row(i), b.image_vlm); break;
      case SelectionKind::t2t: ranking = full_ranking(b.text_vlm.row(i), b.text_vlm); break;
      case SelectionKind::i2t: ranking = full_ranking(b.image_vlm.row(i), b.text_vlm); break;
      case SelectionKind::i2i: ranking = full_ranking(b.image_vlm.row(i), b.image_vlm); break;
      case SelectionKind::one: break;
    }
    const std::size_t k = std::min(config.strategy.k, ranking.size());
    for (std::size_t r = 0; r < k; ++r) {
      if (std::find(out.begin(), out.end(), ranking[r]) == out.end()) out.push_back(ranking[r]);
    }
    return out;
  };

  const bool unit = b.image_vlm.normalized() && b.text_vlm.normalized();
  const bool unit_sent = b.text_sent.normalized();
  std::unordered_map<RowIndex, std::vector<RowIndex>> image_to_captions;
  auto score = [&](RowIndex image, std::size_t caption) {
    if (config.scorer.kind == ScorerKind::cos) {
      return 1.0 * cos64(b.image_vlm.row(image), b.text_vlm.row(caption), unit);
    }
    auto it = image_to_captions.find(image);
    if (it == image_to_captions.end()) {
      auto ranking = full_ranking(b.image_vlm.row(image), b.text_vlm);
      ranking.resize(std::min(config.scorer.k_r, ranking.size()));
      it = image_to_captions.emplace(image, std::move(ranking)).first;
    }
    double best = -1.0;
    for (RowIndex r : it->second) {
      const double s = r == caption
                           ? 1.0
                           : cos64(b.text_sent.row(r), b.text_sent.row(caption), unit_sent);
      best = std::max(best, s);
    }
    return best;
  };

  std::vector<ScoredTriple> all;
  all.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cands = candidates_for(i);
    RowIndex best_image = cands.front();
    double best = score(best_image, i);
    for (std::size_t r = 1; r < cands.size(); ++r) {
      const double s = score(cands[r], i);
      if (s > best) {
        best = s;
        best_image = cands[r];
      }
    }
    all.push_back({best_image, static_cast<RowIndex>(i), best});
  }
  std::sort(all.begin(), all.end(), [](const ScoredTriple& x, const ScoredTriple& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.caption_index < y.caption_index;
  });

  RefinedManifest m;
  const std::size_t keep = floor_keep(n, config.tau);
  m.entries.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep));
  m.pruned.assign(all.begin() + static_cast<std::ptrdiff_t>(keep), all.end());
  m.stats.n_input = n;
  m.stats.n_kept = keep;
  m.stats.config = config;
  std::size_t moved = 0;
  for (const auto& e : m.entries) moved += e.image_index != e.caption_index;
  m.stats.reassignment_rate = keep == 0 ? 0.0 : static_cast<double>(moved) / keep;
  return m;
}

// ---------------------------------------------------------------------------
// Manifest comparison

struct ManifestDiff {
  bool identical = true;
  std::size_t first_divergent_rank = 0;  // 1-based; 0 when identical
  std::string detail;
};

/// Both the retained and the pruned lists must agree index-for-index (image
/// and caption at every position); scores within `tolerance`. Ranks past the
/// retained count refer to the pruned list.
inline ManifestDiff compare_manifests(const RefinedManifest& engine,
                                      const RefinedManifest& reference,
                                      double tolerance = 1e-5) {
  ManifestDiff diff;
  if (engine.entries.size() != reference.entries.size()) {
    diff.identical = false;
    diff.first_divergent_rank = std::min(engine.entries.size(), reference.entries.size()) + 1;
    diff.detail = "retained counts differ (" + std::to_string(engine.entries.size()) +
                  " vs " + std::to_string(reference.entries.size()) + ")";
    return diff;
  }
  auto at = [](const RefinedManifest& m, std::size_t r) -> const ScoredTriple* {
    if (r < m.entries.size()) return &m.entries[r];
    r -= m.entries.size();
    return r < m.pruned.size() ? &m.pruned[r] : nullptr;
  };
  const std::size_t total = std::max(engine.entries.size() + engine.pruned.size(),
                                     reference.entries.size() + reference.pruned.size());
  for (std::size_t r = 0; r < total; ++r) {
    const ScoredTriple* a = at(engine, r);
    const ScoredTriple* b = at(reference, r);
    std::string why;
    if (a == nullptr || b == nullptr) {
      why = "input counts differ";
    } else if (a->caption_index != b->caption_index || a->image_index != b->image_index) {
      why = "(caption,image) (" + std::to_string(a->caption_index) + "," +
            std::to_string(a->image_index) + ") vs (" + std::to_string(b->caption_index) +
            "," + std::to_string(b->image_index) + ")";
    } else if (!(std::abs(a->score - b->score) <= tolerance)) {
      why = "score " + format_score(a->score) + " vs " + format_score(b->score);
    }
    if (!why.empty()) {
      diff.identical = false;
      diff.first_divergent_rank = r + 1;
      diff.detail = why;
      return diff;
    }
  }
  return diff;
}

}  // namespace syncref::synthbench
