// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace syncref {

enum class ErrorKind {
  io,
  bad_magic,
  version_mismatch,
  bad_flags,
  truncated,
  trailing_bytes,
  non_finite,
  not_normalized,
  bad_ids,
  bad_corpus,
  length_mismatch,
  dimension_mismatch,
  id_misalignment,
  degenerate_input,
  index_out_of_range,
  empty_pool,
  incompatible_strategy,
  invalid_config,
  size_guard,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::bad_flags: return "bad_flags";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::trailing_bytes: return "trailing_bytes";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::not_normalized: return "not_normalized";
    case ErrorKind::bad_ids: return "bad_ids";
    case ErrorKind::bad_corpus: return "bad_corpus";
    case ErrorKind::length_mismatch: return "length_mismatch";
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::id_misalignment: return "id_misalignment";
    case ErrorKind::degenerate_input: return "degenerate_input";
    case ErrorKind::index_out_of_range: return "index_out_of_range";
    case ErrorKind::empty_pool: return "empty_pool";
    case ErrorKind::incompatible_strategy: return "incompatible_strategy";
    case ErrorKind::invalid_config: return "invalid_config";
    case ErrorKind::size_guard: return "size_guard";
  }
  return "unknown";
}

/// Every failure raised by the engine. Carries an optional file and row so
/// the CLI can report `kind=... file=... row=...` on a single line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::string file = {},
        std::optional<std::uint64_t> row = std::nullopt)
      : std::runtime_error(compose(kind, message, file, row)),
        kind_(kind),
        message_(std::move(message)),
        file_(std::move(file)),
        row_(row) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }
  const std::string& file() const noexcept { return file_; }
  std::optional<std::uint64_t> row() const noexcept { return row_; }

  /// Same error, annotated with a file path (keeps an existing one).
  Error with_file(std::string file) const {
    return Error(kind_, message_, file_.empty() ? std::move(file) : file_, row_);
  }

 private:
  static std::string compose(ErrorKind kind, const std::string& message,
                             const std::string& file,
                             std::optional<std::uint64_t> row) {
    std::ostringstream out;
    out << "kind=" << to_string(kind);
    if (!file.empty()) out << " file=" << file;
    if (row) out << " row=" << *row;
    out << " message=" << message;
    return out.str();
  }

  ErrorKind kind_;
  std::string message_;
  std::string file_;
  std::optional<std::uint64_t> row_;
};

}  // namespace syncref
