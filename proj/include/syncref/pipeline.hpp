// SPDX-License-Identifier: Apache-2.0
//
// End-to-end refinement: select candidates for every caption, keep the best
// scoring image, sort by score and retain the top floor(N * tau) pairs.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "syncref/embstore.hpp"
#include "syncref/error.hpp"
#include "syncref/parallel.hpp"
#include "syncref/scoring.hpp"
#include "syncref/selection.hpp"
#include "syncref/simkernel.hpp"

namespace syncref {

struct PipelineConfig {
  SelectionStrategy strategy{SelectionKind::t2i, 15};
  ScorerConfig scorer{ScorerKind::ret, 1.0, 2};
  double tau = 0.9;
  std::size_t workers = 1;
  simkernel::Accumulation accumulation = simkernel::Accumulation::f32;

  void validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) {
      throw Error(ErrorKind::invalid_config, "tau must lie in [0, 1]");
    }
    if (strategy.kind != SelectionKind::one && strategy.k == 0) {
      throw Error(ErrorKind::invalid_config, "K must be at least 1");
    }
    if (workers == 0) throw Error(ErrorKind::invalid_config, "workers must be positive");
    scorer.validate();
  }

  simkernel::KernelOptions kernel_options() const {
    simkernel::KernelOptions o;
    o.workers = workers;
    o.accumulation = accumulation;
    return o;
  }
};

struct ScoredTriple {
  RowIndex image_index = 0;
  RowIndex caption_index = 0;
  double score = 0.0;

  friend bool operator==(const ScoredTriple&, const ScoredTriple&) = default;
};

/// Manifest order: score descending, caption index ascending.
inline bool manifest_order(const ScoredTriple& a, const ScoredTriple& b) noexcept {
  return a.score > b.score || (a.score == b.score && a.caption_index < b.caption_index);
}

struct StageTimes {
  double retrieval_ms = 0.0;
  double scoring_ms = 0.0;
  double sort_prune_ms = 0.0;
  double total_ms = 0.0;
};

struct ManifestStats {
  std::size_t n_input = 0;
  std::size_t n_kept = 0;
  PipelineConfig config;
  double reassignment_rate = 0.0;   // kept entries with image != caption
  std::size_t max_image_multiplicity = 0;  // over kept entries
  StageTimes times;
};

/// Retained pairs in manifest order. `pruned` holds the discarded remainder in
/// the same order, so `entries` followed by `pruned` is the full scored set.
struct RefinedManifest {
  std::vector<ScoredTriple> entries;
  std::vector<ScoredTriple> pruned;
  ManifestStats stats;
};

/// floor(n * tau). A product within rounding distance of the next integer
/// snaps up, so decimal ratios such as 0.29 * 100 give 29.
inline std::size_t kept_count(std::size_t n, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorKind::invalid_config, "tau must lie in [0, 1]");
  }
  const long double x = static_cast<long double>(n) * static_cast<long double>(tau);
  auto kept = static_cast<std::size_t>(std::floor(x));
  const long double gap = static_cast<long double>(kept + 1) - x;
  if (gap <= 1e-12L * std::max<long double>(1.0L, x)) ++kept;
  return std::min(kept, n);
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

/// Sorted D' plus pruning into a manifest.
inline RefinedManifest prune(std::vector<ScoredTriple> sorted, const PipelineConfig& config) {
  RefinedManifest m;
  const std::size_t keep = kept_count(sorted.size(), config.tau);
  m.pruned.assign(sorted.begin() + static_cast<std::ptrdiff_t>(keep), sorted.end());
  sorted.resize(keep);
  m.entries = std::move(sorted);
  m.stats.n_input = m.entries.size() + m.pruned.size();
  m.stats.n_kept = keep;
  m.stats.config = config;
  std::size_t moved = 0;
  std::unordered_map<RowIndex, std::size_t> multiplicity;
  for (const auto& e : m.entries) {
    moved += e.image_index != e.caption_index;
    m.stats.max_image_multiplicity =
        std::max(m.stats.max_image_multiplicity, ++multiplicity[e.image_index]);
  }
  m.stats.reassignment_rate = keep == 0 ? 0.0 : static_cast<double>(moved) / keep;
  return m;
}

struct ScoredSet {
  std::vector<ScoredTriple> sorted;
  StageTimes times;
};

/// Selection + scoring + sort, without pruning.
inline ScoredSet score_all(const DatasetBundle& bundle, const PipelineConfig& config) {
  const auto start = Clock::now();
  const auto options = config.kernel_options();
  const std::size_t n = bundle.captions();
  ScoredSet out;
  if (n == 0) return out;
  check_strategy(bundle, config.strategy);

  auto t = Clock::now();
  std::vector<CandidateSet> candidates;
  RetrievalCache cache;
  const bool ret = config.scorer.kind == ScorerKind::ret;
  if (config.strategy.kind == SelectionKind::t2i && ret) {
    // One pass over S = T * I^T yields both T2I rows and I2T columns.
    auto both = simkernel::topk_bidirectional(bundle.text_vlm.view(),
                                              bundle.image_vlm.view(), config.strategy.k,
                                              config.scorer.k_r, options);
    candidates.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      candidates[i] = to_candidates(static_cast<RowIndex>(i), SelectionKind::t2i,
                                    both.rows[i]);
    }
    cache = RetrievalCache::adopt(std::move(both.cols), config.scorer.k_r);
  } else {
    candidates = select_all(bundle, config.strategy, options);
    if (ret) {
      std::vector<bool> wanted(bundle.images(), false);
      for (const auto& c : candidates) {
        for (RowIndex img : c.image_indices) wanted[img] = true;
      }
      std::vector<RowIndex> unique;
      for (std::size_t j = 0; j < wanted.size(); ++j) {
        if (wanted[j]) unique.push_back(static_cast<RowIndex>(j));
      }
      cache = RetrievalCache::build(bundle, unique, config.scorer.k_r, options);
    }
  }
  out.times.retrieval_ms = ms_since(t);

  t = Clock::now();
  const AlignmentScorer scorer(bundle, config.scorer, options, ret ? &cache : nullptr);
  std::vector<ScoredTriple> triples(n);
  constexpr std::size_t chunk = 1024;
  parallel_for((n + chunk - 1) / chunk, config.workers, [&](std::size_t task, std::size_t) {
    const std::size_t end = std::min(n, (task + 1) * chunk);
    for (std::size_t i = task * chunk; i < end; ++i) {
      const auto best = score_candidates(candidates[i], scorer);
      if (!std::isfinite(best.score)) {
        throw Error(ErrorKind::non_finite, "non-finite alignment score", {}, i);
      }
      triples[i] = {best.image_index, static_cast<RowIndex>(i), best.score};
    }
  });
  out.times.scoring_ms = ms_since(t);

  t = Clock::now();
  std::sort(triples.begin(), triples.end(), manifest_order);
  out.sorted = std::move(triples);
  out.times.sort_prune_ms = ms_since(t);
  out.times.total_ms = ms_since(start);
  return out;
}

}  // namespace detail

inline RefinedManifest refine(const DatasetBundle& bundle, const PipelineConfig& config) {
  config.validate();
  auto scored = detail::score_all(bundle, config);
  const auto t = detail::Clock::now();
  auto manifest = detail::prune(std::move(scored.sorted), config);
  scored.times.sort_prune_ms += detail::ms_since(t);
  scored.times.total_ms += detail::ms_since(t);
  manifest.stats.times = scored.times;
  return manifest;
}

/// Per-pair filtering of the original pairing (selection kind one).
inline RefinedManifest refine_one_to_one(const DatasetBundle& bundle,
                                         const ScorerConfig& scorer, double tau,
                                         std::size_t workers = 1) {
  if (!bundle.paired()) {
    throw Error(ErrorKind::incompatible_strategy,
                "one-to-one refinement needs one image per caption");
  }
  PipelineConfig config;
  config.strategy = {SelectionKind::one, 1};
  config.scorer = scorer;
  config.tau = tau;
  config.workers = workers;
  return refine(bundle, config);
}

// ---------------------------------------------------------------------------
// Manifest files

inline std::string format_score(double score) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", score);
  return buf;
}

inline void write_manifest_lines(std::ostream& out, const DatasetBundle& bundle,
                                 const RefinedManifest& m) {
  std::size_t rank = 1;
  for (const auto& e : m.entries) {
    out << "{\"rank\":" << rank++ << ",\"caption_id\":"
        << nlohmann::json(bundle.corpus[e.caption_index].id).dump()
        << ",\"image_id\":" << nlohmann::json(bundle.image_vlm.ids()[e.image_index]).dump()
        << ",\"score\":" << format_score(e.score) << "}\n";
  }
}

inline nlohmann::json stats_json(const ManifestStats& s) {
  const auto& c = s.config;
  return {
      {"n_input", s.n_input},
      {"n_kept", s.n_kept},
      {"tau", c.tau},
      {"K", c.strategy.kind == SelectionKind::one ? 1 : c.strategy.k},
      {"K_r", c.scorer.k_r},
      {"strategy", to_string(c.strategy.kind)},
      {"scorer", to_string(c.scorer.kind)},
      {"accumulation", c.accumulation == simkernel::Accumulation::f64 ? "f64" : "f32"},
      {"reassignment_rate", s.reassignment_rate},
      {"max_image_multiplicity", s.max_image_multiplicity},
      {"wall_time_ms",
       {{"retrieval", s.times.retrieval_ms},
        {"scoring", s.times.scoring_ms},
        {"sort_prune", s.times.sort_prune_ms},
        {"total", s.times.total_ms}}},
  };
}

inline std::filesystem::path stats_path(const std::filesystem::path& manifest) {
  return std::filesystem::path(manifest.string() + ".stats.json");
}

/// Writes the JSON-lines manifest and its ".stats.json" sidecar, each via a
/// temporary file renamed into place.
inline void write_manifest(const DatasetBundle& bundle, const RefinedManifest& m,
                           const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& out) { write_manifest_lines(out, bundle, m); });
  write_atomically(stats_path(path),
                   [&](std::ostream& out) { out << stats_json(m.stats).dump(2) << '\n'; });
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  PipelineConfig config;
  std::size_t n_kept = 0;
  double mean_score = 0.0;
  double min_kept_score = 0.0;
  double reassignment_rate = 0.0;
  double wall_time_ms = 0.0;
};

/// One statistics row per grid entry, in grid order. Configurations that
/// differ only in tau share a single scoring pass.
inline std::vector<AblationRow> ablate(const DatasetBundle& bundle,
                                       const std::vector<PipelineConfig>& grid) {
  if (grid.empty()) throw Error(ErrorKind::invalid_config, "ablation grid is empty");
  using Key = std::tuple<SelectionKind, std::size_t, ScorerKind, std::size_t, int>;
  std::map<Key, detail::ScoredSet> scored;
  std::vector<AblationRow> rows;
  rows.reserve(grid.size());
  for (const auto& config : grid) {
    config.validate();
    const Key key{config.strategy.kind,
                  config.strategy.kind == SelectionKind::one ? 0 : config.strategy.k,
                  config.scorer.kind,
                  config.scorer.kind == ScorerKind::ret ? config.scorer.k_r : 0,
                  static_cast<int>(config.accumulation)};
    auto it = scored.find(key);
    if (it == scored.end()) it = scored.emplace(key, detail::score_all(bundle, config)).first;
    const auto t = detail::Clock::now();
    const auto m = detail::prune(it->second.sorted, config);
    AblationRow row;
    row.config = config;
    row.n_kept = m.stats.n_kept;
    row.reassignment_rate = m.stats.reassignment_rate;
    if (!m.entries.empty()) {
      double sum = 0.0;
      for (const auto& e : m.entries) sum += e.score;
      row.mean_score = sum / static_cast<double>(m.entries.size());
      row.min_kept_score = m.entries.back().score;
    }
    row.wall_time_ms = it->second.times.total_ms + detail::ms_since(t);
    rows.push_back(row);
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "strategy,scorer,K,K_r,tau,n_kept,mean_score,min_kept_score,"
         "reassignment_rate,wall_time_ms\n";
  for (const auto& r : rows) {
    const auto& c = r.config;
    const bool empty = r.n_kept == 0;
    char tau[32];
    std::snprintf(tau, sizeof tau, "%g", c.tau);
    out << to_string(c.strategy.kind) << ',' << to_string(c.scorer.kind) << ','
        << (c.strategy.kind == SelectionKind::one ? 1 : c.strategy.k) << ','
        << (c.scorer.kind == ScorerKind::ret ? std::to_string(c.scorer.k_r) : "")
        << ',' << tau << ',' << r.n_kept << ','
        << (empty ? "" : format_score(r.mean_score)) << ','
        << (empty ? "" : format_score(r.min_kept_score)) << ','
        << format_score(r.reassignment_rate) << ',' << format_score(r.wall_time_ms)
        << '\n';
  }
}

}  // namespace syncref
