#pragma once

// Sparse feature vectors, feature hashing and the dataset line grammar.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cmt {

using FeatureIndex = std::uint64_t;

struct FeatureEntry {
  FeatureIndex index = 0;
  double value = 0.0;

  friend bool operator==(const FeatureEntry&, const FeatureEntry&) = default;
};

/// Sparse real vector with strictly increasing indices and no stored zeros.
///
/// Every constructor canonicalizes its input: entries are sorted, duplicate
/// indices are summed, and entries whose value is exactly zero are dropped.
/// Non-finite values are rejected with std::invalid_argument.
class SparseVector {
 public:
  SparseVector() = default;
  SparseVector(std::initializer_list<FeatureEntry> entries);
  explicit SparseVector(std::vector<FeatureEntry> entries);

  [[nodiscard]] std::span<const FeatureEntry> entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }

  /// Value at `index`, or 0 when absent. O(log nnz).
  [[nodiscard]] double at(FeatureIndex index) const noexcept;

  [[nodiscard]] double squared_norm() const noexcept;
  [[nodiscard]] double norm() const noexcept;

  /// 64-bit FNV-1a digest of the canonical little-endian serialization
  /// (index as u64, value as IEEE-754 bits) of every entry.
  [[nodiscard]] std::uint64_t fingerprint() const noexcept;

  friend bool operator==(const SparseVector&, const SparseVector&) = default;

 private:
  std::vector<FeatureEntry> entries_;
};

[[nodiscard]] double dot(const SparseVector& a, const SparseVector& b) noexcept;
[[nodiscard]] double l2_distance(const SparseVector& a, const SparseVector& b) noexcept;

/// Thrown by cosine() when either argument has zero norm.
class DegenerateVectorError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

[[nodiscard]] double cosine(const SparseVector& a, const SparseVector& b);

/// Elementwise product over the shared support.
[[nodiscard]] SparseVector hadamard(const SparseVector& a, const SparseVector& b);

// ---------------------------------------------------------------------------
// Hashing

inline constexpr int kDefaultHashBits = 20;

[[nodiscard]] constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct NamedFeature {
  std::string name;
  double value = 1.0;

  friend bool operator==(const NamedFeature&, const NamedFeature&) = default;
};

/// Maps each name to fnv1a64(name) masked to the low `bits` bits. Colliding
/// names sum. Requires 1 <= bits <= 31.
[[nodiscard]] SparseVector hash_features(std::span<const NamedFeature> tokens, int bits);

// ---------------------------------------------------------------------------
// Line grammar
//
//   multiclass : LABEL ' | ' FEATURES
//   multilabel : LABEL(,LABEL)* ' | ' FEATURES
//   retrieval  : FEATURES ' | ' FEATURES        (query block, value block)
//   FEATURES   : token (' ' token)*,  token := name[':' real]

enum class LineMode { kMulticlass, kMultilabel, kRetrieval };

[[nodiscard]] std::string_view to_string(LineMode mode) noexcept;
[[nodiscard]] LineMode parse_line_mode(std::string_view text);

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line_number, const std::string& what);
  [[nodiscard]] std::size_t line_number() const noexcept { return line_number_; }

 private:
  std::size_t line_number_;
};

struct LabeledLine {
  LineMode mode = LineMode::kMulticlass;
  std::vector<std::int64_t> labels;       // multiclass: exactly one; retrieval: none
  std::vector<NamedFeature> left_tokens;  // retrieval query block, otherwise empty
  std::vector<NamedFeature> right_tokens;
  SparseVector left_block;  // hash of left_tokens
  SparseVector right_block;
};

/// Parses one line and hashes its feature blocks with `bits` bits.
/// `line_number` is 1-based and is only used in error messages.
[[nodiscard]] LabeledLine parse_line(std::string_view text, LineMode mode,
                                     int bits = kDefaultHashBits, std::size_t line_number = 1);

/// Inverse of parse_line for well-formed lines. Values are written with
/// round-trip precision.
[[nodiscard]] std::string render_line(const LabeledLine& line);

}  // namespace cmt
