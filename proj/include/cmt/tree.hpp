#pragma once

// Contextual memory tree: a binary tree of learned routers over leaves of
// memories, with a shared reward scorer selecting memories inside a leaf.
//
// Counts and balance terms use ln(n + 1). A leaf splits once it holds more than
// capacity() = max(ceil(c), ceil(c * ln(max(peak, 2)))) memories, where peak is
// the largest number of memories the tree has held.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "cmt/features.hpp"
#include "cmt/learners.hpp"

namespace cmt {

using Label = std::int64_t;
using LabelSet = std::vector<Label>;  // sorted, unique

using MemoryValue = std::variant<std::monostate, Label, LabelSet, SparseVector>;

/// A stored (key, value) pair. The fingerprint is derived from the key.
class Memory {
 public:
  Memory() = default;
  Memory(SparseVector key, MemoryValue value);

  [[nodiscard]] const SparseVector& key() const noexcept { return key_; }
  [[nodiscard]] const MemoryValue& value() const noexcept { return value_; }
  [[nodiscard]] std::uint64_t fingerprint() const noexcept { return fingerprint_; }

  friend bool operator==(const Memory&, const Memory&) = default;

 private:
  SparseVector key_;
  MemoryValue value_;
  std::uint64_t fingerprint_ = SparseVector{}.fingerprint();
};

/// Handle to a node. The generation makes handles to spliced or promoted
/// nodes compare stale instead of silently aliasing a reused slot.
struct NodeRef {
  std::uint32_t index = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t generation = 0;

  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

enum class Direction : std::uint8_t { kLeft, kRight };

struct PathStep {
  NodeRef node;
  Direction action = Direction::kLeft;
  double prob = 1.0;
};

struct PathRecord {
  std::vector<PathStep> steps;
  NodeRef leaf;
};

struct NoUpdate {
  friend bool operator==(const NoUpdate&, const NoUpdate&) = default;
};
struct Deviation {
  NodeRef node;
  Direction action = Direction::kLeft;
  double prob = 0.5;
  friend bool operator==(const Deviation&, const Deviation&) = default;
};
struct LeafExplore {
  NodeRef leaf;
  friend bool operator==(const LeafExplore&, const LeafExplore&) = default;
};

/// Tells update() which randomized decision produced a query's answer.
using UpdateKey = std::variant<NoUpdate, Deviation, LeafExplore>;

struct QueryResult {
  UpdateKey key;
  std::vector<Memory> memories;  // at most k, all from one leaf
};

/// The random outcome of a query. `step` indexes the deterministic path.
struct Exploit {};
struct ExploreNode {
  std::size_t step = 0;
  Direction action = Direction::kLeft;
};
struct ExploreLeaf {};
using QueryChoice = std::variant<Exploit, ExploreNode, ExploreLeaf>;

enum class DuplicatePolicy : std::uint8_t { kError, kReplace };

struct TreeParams {
  double alpha = 0.9;            // balance weight, in (0, 1]
  double leaf_multiplier = 4.0;  // c
  int reroutes = 5;              // d
  ScorerMode scorer = ScorerMode::kLearned;
  double base_rate = kDefaultBaseRate;
  bool update_scorer_on_exploit = false;
  DuplicatePolicy duplicates = DuplicatePolicy::kError;
  std::uint64_t seed = 1;

  friend bool operator==(const TreeParams&, const TreeParams&) = default;
};

class DuplicateKeyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnknownKeyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct TreeStats {
  std::size_t memories = 0;
  std::size_t leaves = 0;
  std::size_t internal_nodes = 0;
  std::size_t max_depth = 0;  // edges from root to the deepest leaf
  std::size_t max_leaf_size = 0;
  std::optional<double> max_progressive_error;  // over routers with >= 1 update
  std::uint64_t router_updates = 0;
  std::uint64_t router_mistakes = 0;
};

/// Flat, preorder description of a tree, used for persistence. Internal
/// nodes are followed by their left subtree and then their right subtree.
struct TreeImage {
  struct Node {
    bool leaf = true;
    std::uint64_t count = 0;                // internal nodes only
    RouterModel router;                     // internal nodes only
    std::vector<std::uint32_t> memories;    // leaves: indices into `memories`
  };
  TreeParams params;
  ScorerModel scorer;
  std::string rng_state;
  std::uint64_t peak_size = 0;
  std::vector<Node> nodes;
  std::vector<Memory> memories;  // membership order
};

class Tree {
 public:
  explicit Tree(TreeParams params = {});

  [[nodiscard]] const TreeParams& params() const noexcept { return params_; }
  [[nodiscard]] std::size_t size() const noexcept { return order_.size(); }
  [[nodiscard]] bool empty() const noexcept { return order_.empty(); }
  [[nodiscard]] bool contains(const SparseVector& key) const;
  [[nodiscard]] std::size_t capacity() const noexcept;

  // --- node inspection -----------------------------------------------------
  [[nodiscard]] NodeRef root() const noexcept;
  [[nodiscard]] bool is_live(NodeRef node) const noexcept;
  [[nodiscard]] bool is_leaf(NodeRef node) const;
  [[nodiscard]] NodeRef left(NodeRef node) const;
  [[nodiscard]] NodeRef right(NodeRef node) const;
  [[nodiscard]] std::optional<NodeRef> parent(NodeRef node) const;
  /// Memories beneath `node` (a leaf's memory count, an internal node's n).
  [[nodiscard]] std::uint64_t count(NodeRef node) const;
  [[nodiscard]] const RouterModel& router(NodeRef node) const;
  RouterModel& mutable_router(NodeRef node);
  [[nodiscard]] const std::vector<Memory>& leaf_memories(NodeRef node) const;
  /// Leaf currently holding `key`, if stored.
  [[nodiscard]] std::optional<NodeRef> owner(const SparseVector& key) const;
  /// All stored memories in membership order.
  [[nodiscard]] std::vector<Memory> stored_memories() const;
  [[nodiscard]] TreeStats stats() const;

  [[nodiscard]] const ScorerModel& scorer() const noexcept { return scorer_; }
  ScorerModel& mutable_scorer() noexcept { return scorer_; }

  // --- core operations -----------------------------------------------------

  /// Deterministic descent from `from` (the root by default).
  [[nodiscard]] PathRecord path(const SparseVector& x) const { return path(x, root()); }
  [[nodiscard]] PathRecord path(const SparseVector& x, NodeRef from) const;

  /// With probability 1 - epsilon returns the best k memories of the leaf
  /// reached by descent. Otherwise explores: a uniformly chosen node among
  /// the N path nodes and the leaf. An empty tree yields (NoUpdate, []).
  QueryResult query(const SparseVector& x, std::size_t k, double epsilon);

  /// The epsilon = 0 query. Read-only.
  [[nodiscard]] QueryResult query_exploit(const SparseVector& x, std::size_t k) const;

  /// Query with an explicit random outcome. Only ExploreLeaf draws from the
  /// tree's random source (for rand_k).
  QueryResult query_with(const SparseVector& x, std::size_t k, const QueryChoice& choice);

  /// min(k, |leaf|) memories with the highest score, best first. Exact score
  /// ties are ordered by a hash of the query and memory fingerprints.
  [[nodiscard]] std::vector<Memory> top_k(NodeRef leaf, const SparseVector& x,
                                          std::size_t k) const;
  /// Uniform random subset of min(k, |leaf|) memories.
  std::vector<Memory> rand_k(NodeRef leaf, std::size_t k);

  /// Credits `reward` for memory `z` returned under `key`, then reroutes d
  /// times. Stale keys skip the learner update. Throws std::invalid_argument
  /// when reward is outside [0, 1].
  void update(const SparseVector& x, const Memory& z, double reward, const UpdateKey& key);

  /// Insert at the root followed by d reroutes.
  void insert(Memory z) { insert(root(), std::move(z), params_.reroutes); }
  void insert(NodeRef from, Memory z, int reroutes);

  /// Removes the memory keyed by `key` and returns it. Throws UnknownKeyError.
  Memory remove(const SparseVector& key);

  /// Removes a uniformly sampled memory and re-inserts it from the root.
  void reroute();

  /// Structural violations; empty when healthy.
  [[nodiscard]] std::vector<std::string> check_invariants() const;

  /// The router-credit term (r / p) * (+1 right, -1 left) of a deviation.
  [[nodiscard]] static double reward_difference_estimate(double reward, const Deviation& key);

  [[nodiscard]] TreeImage export_image() const;
  /// Rebuilds a tree from an image. Validates shape and references but not
  /// counts; run check_invariants() for that.
  static Tree from_image(const TreeImage& image);

  std::mt19937_64& rng() noexcept { return rng_; }

 private:
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  struct Node {
    std::uint32_t generation = 0;
    bool live = false;
    bool leaf = true;
    std::uint32_t parent = kNone;
    std::uint32_t left = kNone;
    std::uint32_t right = kNone;
    std::uint64_t count = 0;
    RouterModel router;
    std::vector<Memory> mem;
  };

  struct Membership {
    std::uint32_t leaf = kNone;
    std::size_t order_pos = 0;
  };

  std::uint32_t allocate_node(bool leaf, std::uint32_t parent);
  void release_node(std::uint32_t index);
  [[nodiscard]] NodeRef ref(std::uint32_t index) const noexcept;
  [[nodiscard]] const Node& node_at(NodeRef node) const;
  [[nodiscard]] std::uint64_t n_of(std::uint32_t index) const noexcept;
  [[nodiscard]] double balance_term(const Node& internal) const noexcept;
  [[nodiscard]] std::uint32_t descend(std::uint32_t from, const SparseVector& x) const;

  void insert_leaf(std::uint32_t leaf, Memory z);
  void split(std::uint32_t leaf);
  void register_memory(std::uint64_t fingerprint, std::uint32_t leaf);
  void forget_memory(std::uint64_t fingerprint);
  Memory remove_fingerprint(std::uint64_t fingerprint);

  TreeParams params_;
  ScorerModel scorer_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> free_;
  std::uint32_t root_ = kNone;
  std::unordered_map<std::uint64_t, Membership> members_;
  std::vector<std::uint64_t> order_;
  std::uint64_t peak_size_ = 0;
  std::uint64_t tie_salt_ = 0;
  std::mt19937_64 rng_;
};

/// Fraction of `sample` whose own key, queried with k = 1 and epsilon = 0,
/// does not return that memory.
[[nodiscard]] double measure_self_consistency(const Tree& tree, const std::vector<Memory>& sample);

/// Partition-balance factor K guaranteed by a router with progressive error
/// `p` under balance weight `alpha` after T updates (T may be infinity).
/// Throws std::domain_error when the bound is vacuous.
[[nodiscard]] double balance_bound(double p, double alpha,
                                   double updates = std::numeric_limits<double>::infinity());

}  // namespace cmt
