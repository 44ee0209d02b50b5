// SPDX-License-Identifier: Apache-2.0
//
// Embedding storage: SYNCEMB1 matrices, ID sidecars, caption corpora and the
// bundle that ties them together. Everything here is immutable once built.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "syncref/error.hpp"

namespace syncref {

using RowIndex = std::uint32_t;

inline constexpr std::array<char, 8> kMatrixMagic = {'S', 'Y', 'N', 'C',
                                                     'E', 'M', 'B', '1'};
inline constexpr std::size_t kMatrixHeaderBytes = 24;
inline constexpr std::uint32_t kFlagNormalized = 1u;
inline constexpr double kNormTolerance = 1e-4;

/// Non-owning row-major view over n x d floats.
struct MatrixView {
  const float* data = nullptr;
  std::size_t rows = 0;
  std::size_t dim = 0;

  std::span<const float> row(std::size_t i) const {
    return {data + i * dim, dim};
  }
};

namespace detail {

inline double row_norm(std::span<const float> row) {
  double sum = 0.0;
  for (float v : row) sum += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sum);
}

inline void check_ids(const std::vector<std::string>& ids, std::size_t n) {
  if (ids.size() != n) {
    throw Error(ErrorKind::bad_ids, "expected " + std::to_string(n) +
                                        " ids, got " +
                                        std::to_string(ids.size()));
  }
  std::unordered_set<std::string_view> seen;
  seen.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& id = ids[i];
    if (id.empty()) throw Error(ErrorKind::bad_ids, "empty id", {}, i);
    if (id.find_first_of("\r\n") != std::string::npos) {
      throw Error(ErrorKind::bad_ids, "id contains a line break", {}, i);
    }
    if (!seen.insert(id).second) {
      throw Error(ErrorKind::bad_ids, "duplicate id '" + id + "'", {}, i);
    }
  }
}

template <typename T>
void store_le(unsigned char* out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    out[b] = static_cast<unsigned char>(value >> (8 * b));
  }
}

template <typename T>
T load_le(const unsigned char* in) {
  static_assert(std::is_unsigned_v<T>);
  T value = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    value |= static_cast<T>(in[b]) << (8 * b);
  }
  return value;
}

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

// Converts a run of floats between host order and little-endian in place.
inline void floats_host_le(std::span<float> values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : values) {
      f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
    }
  }
}

}  // namespace detail

/// Dense n x d float32 matrix with one unique string ID per row.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  /// Validates every invariant; `check_norms` may be turned off for lazy
  /// verification of the normalized flag.
  EmbeddingMatrix(std::size_t n, std::uint32_t d, std::vector<float> data,
                  bool normalized, std::vector<std::string> ids,
                  bool check_norms = true)
      : n_(n),
        d_(d),
        data_(std::move(data)),
        normalized_(normalized),
        ids_(std::move(ids)) {
    if (d_ == 0) throw Error(ErrorKind::invalid_config, "dimension must be positive");
    if (data_.size() != n_ * d_) {
      throw Error(ErrorKind::length_mismatch,
                  "payload holds " + std::to_string(data_.size()) +
                      " floats, expected " + std::to_string(n_ * d_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw Error(ErrorKind::non_finite, "non-finite value", {}, i / d_);
      }
    }
    detail::check_ids(ids_, n_);
    if (normalized_ && check_norms) verify_norms();
  }

  std::size_t rows() const noexcept { return n_; }
  std::uint32_t dim() const noexcept { return d_; }
  bool normalized() const noexcept { return normalized_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * d_, d_};
  }
  MatrixView view() const noexcept { return {data_.data(), n_, d_}; }

  /// Throws not_normalized naming the first row outside the tolerance.
  void verify_norms() const {
    for (std::size_t i = 0; i < n_; ++i) {
      if (std::abs(detail::row_norm(row(i)) - 1.0) > kNormTolerance) {
        throw Error(ErrorKind::not_normalized,
                    "row norm deviates from 1 by more than 1e-4", {}, i);
      }
    }
  }

  /// Largest |norm - 1| over all rows (0 for an empty matrix).
  double max_norm_deviation() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      worst = std::max(worst, std::abs(detail::row_norm(row(i)) - 1.0));
    }
    return worst;
  }

  /// Unit-norm copy with the flag set. Already-flagged matrices are copied
  /// unchanged.
  EmbeddingMatrix normalized_copy() const {
    if (normalized_) return *this;
    std::vector<float> out(data_.size());
    for (std::size_t i = 0; i < n_; ++i) {
      const double norm = detail::row_norm(row(i));
      if (norm == 0.0) {
        throw Error(ErrorKind::degenerate_input, "zero-norm row", {}, i);
      }
      for (std::size_t k = 0; k < d_; ++k) {
        out[i * d_ + k] = static_cast<float>(data_[i * d_ + k] / norm);
      }
    }
    return EmbeddingMatrix(n_, d_, std::move(out), true, ids_);
  }

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    if (a.n_ != b.n_ || a.d_ != b.d_ || a.normalized_ != b.normalized_ ||
        a.ids_ != b.ids_) {
      return false;
    }
    return a.data_.empty() ||
           std::memcmp(a.data_.data(), b.data_.data(),
                       a.data_.size() * sizeof(float)) == 0;
  }

 private:
  std::size_t n_ = 0;
  std::uint32_t d_ = 1;
  std::vector<float> data_;
  bool normalized_ = false;
  std::vector<std::string> ids_;
};

inline std::filesystem::path ids_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".ids");
}

/// Writes `path` atomically (temp file + rename). `body` receives the stream.
template <typename Body>
void write_atomically(const std::filesystem::path& path, Body&& body) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open for writing", tmp.string());
    body(out);
    out.flush();
    if (!out) throw Error(ErrorKind::io, "write failed", tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::io, "rename failed", path.string());
  }
}

/// SYNCEMB1 header: magic, n (u64), d (u32), flags (u32), all little-endian.
struct MatrixHeader {
  std::uint64_t n = 0;
  std::uint32_t d = 0;
  std::uint32_t flags = 0;
};

inline std::array<unsigned char, kMatrixHeaderBytes> encode_header(
    const MatrixHeader& h) {
  std::array<unsigned char, kMatrixHeaderBytes> bytes{};
  std::memcpy(bytes.data(), kMatrixMagic.data(), kMatrixMagic.size());
  detail::store_le<std::uint64_t>(bytes.data() + 8, h.n);
  detail::store_le<std::uint32_t>(bytes.data() + 16, h.d);
  detail::store_le<std::uint32_t>(bytes.data() + 20, h.flags);
  return bytes;
}

inline MatrixHeader decode_header(std::span<const unsigned char> bytes,
                                  const std::string& file = {}) {
  if (bytes.size() < kMatrixHeaderBytes) {
    throw Error(ErrorKind::truncated,
                "header needs 24 bytes, found " + std::to_string(bytes.size()),
                file);
  }
  if (std::memcmp(bytes.data(), kMatrixMagic.data(), 7) == 0 &&
      bytes[7] != static_cast<unsigned char>(kMatrixMagic[7])) {
    throw Error(ErrorKind::version_mismatch,
                std::string("unsupported format version '") +
                    static_cast<char>(bytes[7]) + "'",
                file);
  }
  if (std::memcmp(bytes.data(), kMatrixMagic.data(), kMatrixMagic.size()) != 0) {
    throw Error(ErrorKind::bad_magic, "not a SYNCEMB1 file", file);
  }
  MatrixHeader h;
  h.n = detail::load_le<std::uint64_t>(bytes.data() + 8);
  h.d = detail::load_le<std::uint32_t>(bytes.data() + 16);
  h.flags = detail::load_le<std::uint32_t>(bytes.data() + 20);
  if (h.d == 0) throw Error(ErrorKind::dimension_mismatch, "dimension is zero", file);
  if ((h.flags & ~kFlagNormalized) != 0) {
    throw Error(ErrorKind::bad_flags, "reserved flag bits are set", file);
  }
  return h;
}

inline void write_ids(const std::filesystem::path& path,
                      const std::vector<std::string>& ids) {
  write_atomically(path, [&](std::ostream& out) {
    for (const auto& id : ids) out << id << '\n';
  });
}

inline std::vector<std::string> read_ids(const std::filesystem::path& path,
                                         std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open id sidecar", path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  std::vector<std::string> ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    const auto stop = end == std::string::npos ? text.size() : end;
    ids.emplace_back(text, pos, stop - pos);
    if (ids.back().empty()) {
      throw Error(ErrorKind::bad_ids, "blank line in id sidecar", path.string(),
                  ids.size() - 1);
    }
    pos = stop + 1;
  }
  if (ids.size() != expected) {
    throw Error(ErrorKind::bad_ids,
                "sidecar has " + std::to_string(ids.size()) +
                    " ids, matrix has " + std::to_string(expected) + " rows",
                path.string());
  }
  return ids;
}

/// Writes the matrix and its ".ids" sidecar.
inline void write_matrix(const EmbeddingMatrix& m,
                         const std::filesystem::path& path) {
  if (m.normalized()) m.verify_norms();
  const auto header = encode_header(
      {m.rows(), m.dim(), m.normalized() ? kFlagNormalized : 0u});
  write_atomically(path, [&](std::ostream& out) {
    out.write(reinterpret_cast<const char*>(header.data()), header.size());
    if constexpr (std::endian::native == std::endian::little) {
      out.write(reinterpret_cast<const char*>(m.data().data()),
                static_cast<std::streamsize>(m.data().size() * sizeof(float)));
    } else {
      std::vector<float> le(m.data().begin(), m.data().end());
      detail::floats_host_le(le);
      out.write(reinterpret_cast<const char*>(le.data()),
                static_cast<std::streamsize>(le.size() * sizeof(float)));
    }
  });
  write_ids(ids_path(path), m.ids());
}

struct ReadOptions {
  bool verify_norms = true;
};

inline MatrixHeader read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open", path.string());
  std::array<unsigned char, kMatrixHeaderBytes> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  return decode_header(std::span(bytes.data(), static_cast<std::size_t>(in.gcount())),
                       path.string());
}

inline EmbeddingMatrix read_matrix(const std::filesystem::path& path,
                                   const ReadOptions& options = {}) {
  const std::string file = path.string();
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw Error(ErrorKind::io, "cannot stat", file);
  const MatrixHeader h = read_header(path);
  const std::uint64_t count = h.n * h.d;
  if (h.d != 0 && count / h.d != h.n) {
    throw Error(ErrorKind::truncated, "declared size overflows", file);
  }
  const std::uint64_t need = count * sizeof(float);
  const std::uint64_t have = size - kMatrixHeaderBytes;
  if (have < need) {
    throw Error(ErrorKind::truncated,
                "payload needs " + std::to_string(need) + " bytes, found " +
                    std::to_string(have),
                file);
  }
  if (have > need) {
    throw Error(ErrorKind::trailing_bytes,
                std::to_string(have - need) + " bytes after payload", file);
  }
  std::vector<float> data(count);
  std::ifstream in(path, std::ios::binary);
  in.seekg(kMatrixHeaderBytes);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(need));
  if (static_cast<std::uint64_t>(in.gcount()) != need) {
    throw Error(ErrorKind::truncated, "short read", file);
  }
  detail::floats_host_le(data);
  auto ids = read_ids(ids_path(path), h.n);
  try {
    return EmbeddingMatrix(h.n, h.d, std::move(data),
                           (h.flags & kFlagNormalized) != 0, std::move(ids),
                           options.verify_norms);
  } catch (const Error& e) {
    throw e.with_file(file);
  }
}

struct CaptionRecord {
  std::string id;
  std::string text;

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

/// Ordered caption records; the position of a record is its caption index.
class CaptionCorpus {
 public:
  CaptionCorpus() = default;
  explicit CaptionCorpus(std::vector<CaptionRecord> records)
      : records_(std::move(records)) {
    std::unordered_set<std::string_view> seen;
    seen.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (r.id.empty()) throw Error(ErrorKind::bad_corpus, "empty id", {}, i);
      if (r.text.empty()) throw Error(ErrorKind::bad_corpus, "empty text", {}, i);
      if (!seen.insert(r.id).second) {
        throw Error(ErrorKind::bad_corpus, "duplicate id '" + r.id + "'", {}, i);
      }
    }
  }

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const CaptionRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<CaptionRecord>& records() const noexcept { return records_; }

 private:
  std::vector<CaptionRecord> records_;
};

inline CaptionCorpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open", path.string());
  std::vector<CaptionRecord> records;
  std::string line;
  std::size_t row = 0;
  for (; std::getline(in, line); ++row) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fail = [&](const std::string& why) {
      return Error(ErrorKind::bad_corpus, why, path.string(), row);
    };
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw fail("line is not valid JSON");
    }
    if (!obj.is_object() || obj.size() != 2 || !obj.contains("id") ||
        !obj.contains("text")) {
      throw fail("expected an object with exactly the fields id and text");
    }
    if (!obj["id"].is_string() || !obj["text"].is_string()) {
      throw fail("id and text must be strings");
    }
    records.push_back({obj["id"].get<std::string>(), obj["text"].get<std::string>()});
  }
  try {
    return CaptionCorpus(std::move(records));
  } catch (const Error& e) {
    throw e.with_file(path.string());
  }
}

inline void write_corpus(const CaptionCorpus& corpus,
                         const std::filesystem::path& path) {
  write_atomically(path, [&](std::ostream& out) {
    for (const auto& r : corpus.records()) {
      out << nlohmann::json{{"id", r.id}, {"text", r.text}}.dump() << '\n';
    }
  });
}

/// Captions plus their three embedding matrices, all rows unit-norm.
struct DatasetBundle {
  CaptionCorpus corpus;
  EmbeddingMatrix text_vlm;
  EmbeddingMatrix image_vlm;
  EmbeddingMatrix text_sent;

  std::size_t captions() const noexcept { return corpus.size(); }
  std::size_t images() const noexcept { return image_vlm.rows(); }
  bool paired() const noexcept { return images() == captions(); }
};

struct BundlePaths {
  std::filesystem::path corpus;
  std::filesystem::path text_vlm;
  std::filesystem::path image_vlm;
  std::filesystem::path text_sent;
};

/// Checks cross-matrix invariants and normalizes any unflagged matrix.
inline DatasetBundle make_bundle(CaptionCorpus corpus, EmbeddingMatrix text_vlm,
                                 EmbeddingMatrix image_vlm,
                                 EmbeddingMatrix text_sent,
                                 const BundlePaths& paths = {}) {
  const std::size_t n = corpus.size();
  auto check_rows = [&](const EmbeddingMatrix& m, const std::filesystem::path& p,
                        std::string_view name) {
    if (m.rows() != n) {
      throw Error(ErrorKind::length_mismatch,
                  std::string(name) + " has " + std::to_string(m.rows()) +
                      " rows but the corpus has " + std::to_string(n) +
                      " captions",
                  p.string());
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (m.ids()[i] != corpus[i].id) {
        throw Error(ErrorKind::id_misalignment,
                    std::string(name) + " id '" + m.ids()[i] +
                        "' does not match caption id '" + corpus[i].id + "'",
                    p.string(), i);
      }
    }
  };
  check_rows(text_vlm, paths.text_vlm, "text_vlm");
  check_rows(text_sent, paths.text_sent, "text_sent");
  if (text_vlm.dim() != image_vlm.dim()) {
    throw Error(ErrorKind::dimension_mismatch,
                "text_vlm has dimension " + std::to_string(text_vlm.dim()) +
                    " but image_vlm has " + std::to_string(image_vlm.dim()),
                paths.image_vlm.string());
  }
  auto normalize = [](EmbeddingMatrix m, const std::filesystem::path& p) {
    try {
      return m.normalized() ? std::move(m) : m.normalized_copy();
    } catch (const Error& e) {
      throw e.with_file(p.string());
    }
  };
  return DatasetBundle{std::move(corpus), normalize(std::move(text_vlm), paths.text_vlm),
                       normalize(std::move(image_vlm), paths.image_vlm),
                       normalize(std::move(text_sent), paths.text_sent)};
}

inline DatasetBundle load_bundle(const BundlePaths& paths,
                                 const ReadOptions& options = {}) {
  auto corpus = read_corpus(paths.corpus);
  auto text_vlm = read_matrix(paths.text_vlm, options);
  auto image_vlm = read_matrix(paths.image_vlm, options);
  auto text_sent = read_matrix(paths.text_sent, options);
  return make_bundle(std::move(corpus), std::move(text_vlm), std::move(image_vlm),
                     std::move(text_sent), paths);
}

}  // namespace syncref
