#include "cmt/features.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <string>

namespace cmt {

namespace {

std::vector<FeatureEntry> canonicalize(std::vector<FeatureEntry> entries) {
  for (const auto& e : entries) {
    if (!std::isfinite(e.value)) {
      throw std::invalid_argument("SparseVector: non-finite value at index " +
                                  std::to_string(e.index));
    }
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const FeatureEntry& a, const FeatureEntry& b) { return a.index < b.index; });
  std::vector<FeatureEntry> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    if (!out.empty() && out.back().index == e.index) {
      out.back().value += e.value;
    } else {
      out.push_back(e);
    }
  }
  std::erase_if(out, [](const FeatureEntry& e) { return e.value == 0.0; });
  for (const auto& e : out) {
    if (!std::isfinite(e.value)) {
      throw std::invalid_argument("SparseVector: overflow while summing index " +
                                  std::to_string(e.index));
    }
  }
  return out;
}

void mix_u64(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffU;
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

SparseVector::SparseVector(std::initializer_list<FeatureEntry> entries)
    : entries_(canonicalize(std::vector<FeatureEntry>(entries))) {}

SparseVector::SparseVector(std::vector<FeatureEntry> entries)
    : entries_(canonicalize(std::move(entries))) {}

double SparseVector::at(FeatureIndex index) const noexcept {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                             [](const FeatureEntry& e, FeatureIndex i) { return e.index < i; });
  return (it != entries_.end() && it->index == index) ? it->value : 0.0;
}

double SparseVector::squared_norm() const noexcept {
  double s = 0.0;
  for (const auto& e : entries_) s += e.value * e.value;
  return s;
}

double SparseVector::norm() const noexcept { return std::sqrt(squared_norm()); }

std::uint64_t SparseVector::fingerprint() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries_) {
    mix_u64(h, e.index);
    mix_u64(h, std::bit_cast<std::uint64_t>(e.value));
  }
  return h;
}

double dot(const SparseVector& a, const SparseVector& b) noexcept {
  auto ia = a.entries().begin(), ea = a.entries().end();
  auto ib = b.entries().begin(), eb = b.entries().end();
  double s = 0.0;
  while (ia != ea && ib != eb) {
    if (ia->index < ib->index) {
      ++ia;
    } else if (ib->index < ia->index) {
      ++ib;
    } else {
      s += ia->value * ib->value;
      ++ia;
      ++ib;
    }
  }
  return s;
}

double l2_distance(const SparseVector& a, const SparseVector& b) noexcept {
  auto ia = a.entries().begin(), ea = a.entries().end();
  auto ib = b.entries().begin(), eb = b.entries().end();
  double s = 0.0;
  while (ia != ea || ib != eb) {
    double diff;
    if (ib == eb || (ia != ea && ia->index < ib->index)) {
      diff = ia->value;
      ++ia;
    } else if (ia == ea || ib->index < ia->index) {
      diff = -ib->value;
      ++ib;
    } else {
      diff = ia->value - ib->value;
      ++ia;
      ++ib;
    }
    s += diff * diff;
  }
  return std::sqrt(s);
}

double cosine(const SparseVector& a, const SparseVector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw DegenerateVectorError("cosine of a zero-norm vector is undefined");
  }
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

SparseVector hadamard(const SparseVector& a, const SparseVector& b) {
  std::vector<FeatureEntry> out;
  auto ia = a.entries().begin(), ea = a.entries().end();
  auto ib = b.entries().begin(), eb = b.entries().end();
  while (ia != ea && ib != eb) {
    if (ia->index < ib->index) {
      ++ia;
    } else if (ib->index < ia->index) {
      ++ib;
    } else {
      out.push_back({ia->index, ia->value * ib->value});
      ++ia;
      ++ib;
    }
  }
  return SparseVector(std::move(out));
}

SparseVector hash_features(std::span<const NamedFeature> tokens, int bits) {
  if (bits < 1 || bits > 31) {
    throw std::invalid_argument("hash_features: bits must be in [1, 31], got " +
                                std::to_string(bits));
  }
  const std::uint64_t mask = (std::uint64_t{1} << bits) - 1;
  std::vector<FeatureEntry> entries;
  entries.reserve(tokens.size());
  for (const auto& t : tokens) entries.push_back({fnv1a64(t.name) & mask, t.value});
  return SparseVector(std::move(entries));
}

// ---------------------------------------------------------------------------

std::string_view to_string(LineMode mode) noexcept {
  switch (mode) {
    case LineMode::kMulticlass: return "multiclass";
    case LineMode::kMultilabel: return "multilabel";
    case LineMode::kRetrieval: return "retrieval";
  }
  return "unknown";
}

LineMode parse_line_mode(std::string_view text) {
  if (text == "multiclass") return LineMode::kMulticlass;
  if (text == "multilabel") return LineMode::kMultilabel;
  if (text == "retrieval") return LineMode::kRetrieval;
  throw std::invalid_argument("unknown mode '" + std::string(text) + "'");
}

ParseError::ParseError(std::size_t line_number, const std::string& what)
    : std::runtime_error("line " + std::to_string(line_number) + ": " + what),
      line_number_(line_number) {}

namespace {

std::vector<std::string_view> split_spaces(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t next = s.find(' ', pos);
    const std::size_t end = next == std::string_view::npos ? s.size() : next;
    out.push_back(s.substr(pos, end - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::int64_t parse_label(std::string_view text, std::size_t line_number) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || v < 0) {
    throw ParseError(line_number, "bad label '" + std::string(text) + "'");
  }
  return v;
}

std::vector<NamedFeature> parse_features(std::string_view block, std::size_t line_number) {
  std::vector<NamedFeature> out;
  for (std::string_view token : split_spaces(block)) {
    if (token.empty()) throw ParseError(line_number, "empty feature token");
    const std::size_t colon = token.find(':');
    NamedFeature f;
    std::string_view name = token.substr(0, colon);
    if (name.empty()) throw ParseError(line_number, "feature with empty name");
    if (name.find('|') != std::string_view::npos) {
      throw ParseError(line_number, "unexpected '|' in feature '" + std::string(token) + "'");
    }
    f.name = std::string(name);
    if (colon != std::string_view::npos) {
      std::string_view num = token.substr(colon + 1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
      if (num.empty() || ec != std::errc() || ptr != num.data() + num.size() || !std::isfinite(v)) {
        throw ParseError(line_number, "bad feature value in '" + std::string(token) + "'");
      }
      f.value = v;
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void render_features(std::string& out, const std::vector<NamedFeature>& tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i].name;
    if (tokens[i].value != 1.0) {
      out += ':';
      out += format_double(tokens[i].value);
    }
  }
}

}  // namespace

LabeledLine parse_line(std::string_view text, LineMode mode, int bits, std::size_t line_number) {
  while (!text.empty() && (text.back() == '\r' || text.back() == '\n')) text.remove_suffix(1);

  const std::size_t sep = text.find(" | ");
  if (sep == std::string_view::npos) throw ParseError(line_number, "missing ' | ' separator");
  if (text.find('|', sep + 2) != std::string_view::npos) {
    throw ParseError(line_number, "more than one '|' separator");
  }
  std::string_view left = text.substr(0, sep);
  std::string_view right = text.substr(sep + 3);
  if (left.find('|') != std::string_view::npos) {
    throw ParseError(line_number, "more than one '|' separator");
  }

  LabeledLine line;
  line.mode = mode;
  switch (mode) {
    case LineMode::kMulticlass:
      line.labels.push_back(parse_label(left, line_number));
      break;
    case LineMode::kMultilabel: {
      std::size_t pos = 0;
      while (true) {
        const std::size_t comma = left.find(',', pos);
        const std::size_t end = comma == std::string_view::npos ? left.size() : comma;
        line.labels.push_back(parse_label(left.substr(pos, end - pos), line_number));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
      }
      break;
    }
    case LineMode::kRetrieval:
      line.left_tokens = parse_features(left, line_number);
      line.left_block = hash_features(line.left_tokens, bits);
      break;
  }
  line.right_tokens = parse_features(right, line_number);
  line.right_block = hash_features(line.right_tokens, bits);
  return line;
}

std::string render_line(const LabeledLine& line) {
  std::string out;
  if (line.mode == LineMode::kRetrieval) {
    render_features(out, line.left_tokens);
  } else {
    for (std::size_t i = 0; i < line.labels.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(line.labels[i]);
    }
  }
  out += " | ";
  render_features(out, line.right_tokens);
  return out;
}

}  // namespace cmt
