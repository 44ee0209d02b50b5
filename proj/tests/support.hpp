// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>

#include "syncref/syncref.hpp"

namespace syncref::testing {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "syncref";
    if (info != nullptr) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = fs::temp_directory_path() /
            (name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::vector<std::string> ids(std::string_view prefix, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::string(prefix) + std::to_string(i));
  return out;
}

/// Matrix from literal rows; normalized flag only when asked.
inline EmbeddingMatrix matrix(const std::vector<std::vector<float>>& rows,
                              bool normalized = false, std::string_view prefix = "r") {
  const auto d = static_cast<std::uint32_t>(rows.empty() ? 1 : rows.front().size());
  std::vector<float> data;
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  return EmbeddingMatrix(rows.size(), d, std::move(data), normalized, ids(prefix, rows.size()));
}

/// Gaussian rows, optionally normalized.
inline EmbeddingMatrix random_matrix(std::mt19937_64& rng, std::size_t n, std::uint32_t d,
                                     bool normalized, std::string_view prefix = "r") {
  std::normal_distribution<float> g;
  std::vector<float> data(n * d);
  for (auto& v : data) v = g(rng);
  EmbeddingMatrix raw(n, d, std::move(data), false, ids(prefix, n));
  return normalized ? raw.normalized_copy() : raw;
}

inline CaptionCorpus corpus(std::size_t n, std::string_view prefix = "cap_") {
  std::vector<CaptionRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    records.push_back({std::string(prefix) + std::to_string(i), "caption " + std::to_string(i)});
  }
  return CaptionCorpus(std::move(records));
}

/// Bundle from literal rows. Image ids are img_i; caption ids cap_i.
inline DatasetBundle bundle(const std::vector<std::vector<float>>& text_vlm,
                            const std::vector<std::vector<float>>& image_vlm,
                            const std::vector<std::vector<float>>& text_sent) {
  return make_bundle(corpus(text_vlm.size()), matrix(text_vlm, false, "cap_"),
                     matrix(image_vlm, false, "img_"), matrix(text_sent, false, "cap_"));
}

inline synthbench::PlantedBundle planted(std::uint64_t seed, std::size_t n = 500,
                                         std::size_t d = 32) {
  synthbench::BenchSpec spec;
  spec.seed = seed;
  spec.n = n;
  spec.d = d;
  spec.d_s = d;
  return synthbench::generate(spec);
}

inline PipelineConfig config(SelectionKind kind, std::size_t k, ScorerKind scorer,
                             std::size_t k_r = 2, double tau = 0.9) {
  PipelineConfig c;
  c.strategy = {kind, k};
  c.scorer = {scorer, 1.0, k_r};
  c.tau = tau;
  return c;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

/// Runs `body` and returns the ErrorKind it throws; fails the test if nothing
/// or something else is thrown.
template <typename Body>
ErrorKind error_kind(Body&& body, Error* captured = nullptr) {
  try {
    body();
  } catch (const Error& e) {
    if (captured != nullptr) *captured = e;
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::io;
}

}  // namespace syncref::testing
