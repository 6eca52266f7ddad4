// Binary snapshot layout (all integers little-endian, reals as IEEE-754 bits):
//
//   magic    8 bytes  "CMTSNAP\0"
//   version  u32
//   record*  u32 tag, u64 payload length, payload
//
//   tag 1 CONFIG   once, first
//   tag 2 SCORER   once
//   tag 3 TREE     rng state, peak size, node count, memory count
//   tag 4 NODE     node count records, preorder
//   tag 5 MEMORY   memory count records, membership order
//   tag 6 OAS      zero or more, one per label scorer, ascending label
//   tag 7 END      empty payload, last
//
// Strings are u32 length + bytes. Sparse vectors are u64 nnz + (u64, f64)*.
// Linear models are f64 base rate, u64 count + (u64 index, f64 w, f64 G)*.

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cmt/harness.hpp"

namespace cmt {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'T', 'S', 'N', 'A', 'P', '\0'};

enum Tag : std::uint32_t {
  kConfig = 1,
  kScorer = 2,
  kTreeHeader = 3,
  kNode = 4,
  kMemory = 5,
  kOas = 6,
  kEnd = 7,
};

enum ValueTag : std::uint8_t { kNone = 0, kLabel = 1, kLabelSet = 2, kVector = 3 };

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  void vec(const SparseVector& v) {
    u64(v.size());
    for (const auto& e : v.entries()) {
      u64(e.index);
      f64(e.value);
    }
  }
  void model(const LinearModel& m) {
    f64(m.base_rate());
    const auto params = m.parameters();
    u64(params.size());
    for (const auto& p : params) {
      u64(p.index);
      f64(p.weight);
      f64(p.grad_sq);
    }
  }
  void router(const RouterModel& r) {
    model(r.model());
    u64(r.update_count());
    u64(r.mistake_count());
  }

  void record(Tag tag, const Writer& payload) {
    u32(tag);
    u64(payload.out_.size());
    out_.append(payload.out_);
  }

  [[nodiscard]] std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : in_(bytes) {}

  std::string_view take(std::size_t n) {
    if (in_.size() - pos_ < n) throw SnapshotError("snapshot is truncated");
    std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{u8()} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{u8()} << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() { return std::string(take(u32())); }

  // Element counts are checked against the remaining bytes before reserving.
  std::uint64_t count(std::size_t min_element_size) {
    const std::uint64_t n = u64();
    if (n > remaining() / std::max<std::size_t>(min_element_size, 1)) {
      throw SnapshotError("snapshot is truncated");
    }
    return n;
  }

  SparseVector vec() {
    const std::uint64_t n = count(16);
    std::vector<FeatureEntry> entries;
    entries.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t index = u64();
      entries.push_back({index, f64()});
    }
    SparseVector v(entries);
    if (v.size() != entries.size()) throw SnapshotError("snapshot vector is not canonical");
    return v;
  }
  LinearModel model() {
    const double base_rate = f64();
    const std::uint64_t n = count(24);
    std::vector<Parameter> params;
    params.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      Parameter p;
      p.index = u64();
      p.weight = f64();
      p.grad_sq = f64();
      params.push_back(p);
    }
    return LinearModel::from_parameters(base_rate, params);
  }
  RouterModel router() {
    LinearModel m = model();
    const std::uint64_t updates = u64();
    const std::uint64_t mistakes = u64();
    return RouterModel::restore(std::move(m), updates, mistakes);
  }

  /// Next record; the returned reader spans exactly its payload.
  std::pair<std::uint32_t, Reader> record() {
    const std::uint32_t tag = u32();
    const std::uint64_t length = u64();
    if (length > remaining()) throw SnapshotError("snapshot is truncated");
    return {tag, Reader(take(static_cast<std::size_t>(length)))};
  }

  [[nodiscard]] std::size_t remaining() const noexcept { return in_.size() - pos_; }
  void expect_end(const char* what) const {
    if (remaining() != 0) throw SnapshotError(std::string("malformed ") + what + " record");
  }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

Reader expect_record(Reader& r, Tag tag, const char* what) {
  auto [got, payload] = r.record();
  if (got != tag) throw SnapshotError(std::string("expected ") + what + " record");
  return payload;
}

void write_value(Writer& w, const MemoryValue& value) {
  if (const auto* l = std::get_if<Label>(&value)) {
    w.u8(kLabel);
    w.i64(*l);
  } else if (const auto* s = std::get_if<LabelSet>(&value)) {
    w.u8(kLabelSet);
    w.u64(s->size());
    for (Label l : *s) w.i64(l);
  } else if (const auto* v = std::get_if<SparseVector>(&value)) {
    w.u8(kVector);
    w.vec(*v);
  } else {
    w.u8(kNone);
  }
}

MemoryValue read_value(Reader& r) {
  switch (r.u8()) {
    case kNone: return std::monostate{};
    case kLabel: return r.i64();
    case kLabelSet: {
      const std::uint64_t n = r.count(8);
      LabelSet s;
      s.reserve(n);
      for (std::uint64_t i = 0; i < n; ++i) s.push_back(r.i64());
      return s;
    }
    case kVector: return r.vec();
    default: throw SnapshotError("unknown memory value tag");
  }
}

void write_config(Writer& w, const RunConfig& c, double base_rate) {
  w.str(to_string(c.mode));
  w.f64(c.alpha);
  w.f64(c.leaf_multiplier);
  w.u32(static_cast<std::uint32_t>(c.reroutes));
  w.f64(c.epsilon);
  w.u64(c.k);
  w.u32(static_cast<std::uint32_t>(c.passes_unsup));
  w.u32(static_cast<std::uint32_t>(c.passes_sup));
  w.u32(static_cast<std::uint32_t>(c.hash_bits));
  w.u64(c.seed);
  w.str(to_string(c.scorer));
  w.u8(c.update_on_exploit ? 1 : 0);
  w.u8(c.replace_duplicates ? 1 : 0);
  w.f64(base_rate);
}

RunConfig read_config(Reader& r, double& base_rate) {
  RunConfig c;
  try {
    c.mode = parse_line_mode(r.str());
    c.alpha = r.f64();
    c.leaf_multiplier = r.f64();
    c.reroutes = static_cast<int>(r.u32());
    c.epsilon = r.f64();
    c.k = r.u64();
    c.passes_unsup = static_cast<int>(r.u32());
    c.passes_sup = static_cast<int>(r.u32());
    c.hash_bits = static_cast<int>(r.u32());
    c.seed = r.u64();
    c.scorer = parse_scorer_mode(r.str());
    c.update_on_exploit = r.u8() != 0;
    c.replace_duplicates = r.u8() != 0;
    base_rate = r.f64();
    c.validate();
  } catch (const SnapshotError&) {
    throw;
  } catch (const std::exception& e) {
    throw SnapshotError(std::string("bad configuration record: ") + e.what());
  }
  return c;
}

}  // namespace

std::string snapshot_encode(const Model& model) {
  if (auto issues = model.tree.check_invariants(); !issues.empty()) {
    throw SnapshotError("refusing to save an inconsistent tree: " + issues.front());
  }
  const TreeImage image = model.tree.export_image();

  Writer out;
  out.raw(std::string_view(kMagic, sizeof kMagic));
  out.u32(kSnapshotVersion);

  Writer config;
  write_config(config, model.config, image.params.base_rate);
  out.record(kConfig, config);

  Writer scorer;
  scorer.str(to_string(image.scorer.mode()));
  scorer.model(image.scorer.model());
  out.record(kScorer, scorer);

  Writer header;
  header.str(image.rng_state);
  header.u64(image.peak_size);
  header.u64(image.nodes.size());
  header.u64(image.memories.size());
  out.record(kTreeHeader, header);

  for (const TreeImage::Node& n : image.nodes) {
    Writer node;
    node.u8(n.leaf ? 1 : 0);
    if (n.leaf) {
      node.u64(n.memories.size());
      for (std::uint32_t m : n.memories) node.u32(m);
    } else {
      node.u64(n.count);
      node.router(n.router);
    }
    out.record(kNode, node);
  }
  for (const Memory& m : image.memories) {
    Writer mem;
    mem.vec(m.key());
    write_value(mem, m.value());
    out.record(kMemory, mem);
  }

  std::vector<Label> labels;
  for (const auto& [label, scorer_model] : model.oas.scorers()) labels.push_back(label);
  std::sort(labels.begin(), labels.end());
  for (Label l : labels) {
    Writer oas;
    oas.i64(l);
    oas.f64(model.oas.base_rate());
    oas.router(model.oas.scorers().at(l));
    out.record(kOas, oas);
  }
  out.record(kEnd, Writer{});
  return out.take();
}

Model snapshot_decode(std::string_view bytes) {
  Reader in(bytes);
  if (in.remaining() < sizeof kMagic || in.take(sizeof kMagic) != std::string_view(kMagic, 8)) {
    throw SnapshotError("not a cmt snapshot (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kSnapshotVersion) {
    throw SnapshotError("unsupported snapshot version " + std::to_string(version));
  }

  try {
    Reader config_rec = expect_record(in, kConfig, "configuration");
    double base_rate = kDefaultBaseRate;
    RunConfig config = read_config(config_rec, base_rate);
    config_rec.expect_end("configuration");

    TreeImage image;
    image.params = config.tree_params();
    image.params.base_rate = base_rate;

    Reader scorer_rec = expect_record(in, kScorer, "scorer");
    const ScorerMode mode = parse_scorer_mode(scorer_rec.str());
    image.scorer = ScorerModel(mode, base_rate);
    image.scorer.mutable_model() = scorer_rec.model();
    scorer_rec.expect_end("scorer");

    Reader header = expect_record(in, kTreeHeader, "tree header");
    image.rng_state = header.str();
    image.peak_size = header.u64();
    const std::uint64_t node_count = header.u64();
    const std::uint64_t memory_count = header.u64();
    header.expect_end("tree header");
    // Every record costs at least 12 bytes of framing.
    if (node_count + memory_count > in.remaining() / 12) throw SnapshotError("snapshot is truncated");

    for (std::uint64_t i = 0; i < node_count; ++i) {
      Reader rec = expect_record(in, kNode, "node");
      TreeImage::Node n;
      n.leaf = rec.u8() != 0;
      if (n.leaf) {
        const std::uint64_t m = rec.count(4);
        for (std::uint64_t j = 0; j < m; ++j) n.memories.push_back(rec.u32());
      } else {
        n.count = rec.u64();
        n.router = rec.router();
      }
      rec.expect_end("node");
      image.nodes.push_back(std::move(n));
    }
    for (std::uint64_t i = 0; i < memory_count; ++i) {
      Reader rec = expect_record(in, kMemory, "memory");
      SparseVector key = rec.vec();
      MemoryValue value = read_value(rec);
      rec.expect_end("memory");
      image.memories.emplace_back(std::move(key), std::move(value));
    }

    OASModel oas(base_rate);
    while (true) {
      auto [tag, rec] = in.record();
      if (tag == kEnd) {
        rec.expect_end("end");
        break;
      }
      if (tag != kOas) throw SnapshotError("unexpected record tag " + std::to_string(tag));
      const Label label = rec.i64();
      const double oas_rate = rec.f64();
      if (oas.label_count() == 0) oas = OASModel(oas_rate);
      if (oas_rate != oas.base_rate()) throw SnapshotError("inconsistent oas base rate");
      RouterModel r = rec.router();
      rec.expect_end("oas");
      oas.restore_scorer(label, std::move(r));
    }
    if (in.remaining() != 0) throw SnapshotError("trailing bytes after end record");

    Tree tree = Tree::from_image(image);
    if (auto issues = tree.check_invariants(); !issues.empty()) {
      throw SnapshotError("snapshot tree is inconsistent: " + issues.front());
    }
    return Model{std::move(config), std::move(tree), std::move(oas)};
  } catch (const SnapshotError&) {
    throw;
  } catch (const std::exception& e) {
    throw SnapshotError(std::string("corrupt snapshot: ") + e.what());
  }
}

void snapshot_save(const Model& model, const std::string& path) {
  const std::string bytes = snapshot_encode(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SnapshotError("cannot open snapshot for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw SnapshotError("failed writing snapshot: " + path);
}

Model snapshot_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SnapshotError("cannot open snapshot: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return snapshot_decode(bytes);
}

}  // namespace cmt
