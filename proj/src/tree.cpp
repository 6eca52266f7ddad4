#include "cmt/tree.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace cmt {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

int sign_or_left(double s) noexcept { return s > 0.0 ? 1 : -1; }

}  // namespace

Memory::Memory(SparseVector key, MemoryValue value)
    : key_(std::move(key)), value_(std::move(value)), fingerprint_(key_.fingerprint()) {}

Tree::Tree(TreeParams params)
    : params_(params),
      scorer_(params.scorer, params.base_rate),
      tie_salt_(splitmix64(params.seed)),
      rng_(params.seed) {
  if (!(params_.alpha > 0.0 && params_.alpha <= 1.0)) {
    throw std::invalid_argument("alpha must lie in (0, 1]");
  }
  if (!(params_.leaf_multiplier > 0.0) || !std::isfinite(params_.leaf_multiplier)) {
    throw std::invalid_argument("leaf multiplier c must be finite and > 0");
  }
  if (params_.reroutes < 0) throw std::invalid_argument("reroutes d must be >= 0");
  root_ = allocate_node(true, kNone);
}

// ---------------------------------------------------------------------------
// Arena

std::uint32_t Tree::allocate_node(bool leaf, std::uint32_t parent) {
  std::uint32_t index;
  if (!free_.empty()) {
    index = free_.back();
    free_.pop_back();
  } else {
    index = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
  }
  Node& n = nodes_[index];
  const std::uint32_t generation = n.generation + 1;
  n = Node{};
  n.generation = generation;
  n.live = true;
  n.leaf = leaf;
  n.parent = parent;
  n.router = RouterModel(params_.base_rate);
  return index;
}

void Tree::release_node(std::uint32_t index) {
  Node& n = nodes_[index];
  const std::uint32_t generation = n.generation + 1;
  n = Node{};
  n.generation = generation;
  free_.push_back(index);
}

NodeRef Tree::ref(std::uint32_t index) const noexcept { return {index, nodes_[index].generation}; }

NodeRef Tree::root() const noexcept { return ref(root_); }

bool Tree::is_live(NodeRef node) const noexcept {
  return node.index < nodes_.size() && nodes_[node.index].live &&
         nodes_[node.index].generation == node.generation;
}

const Tree::Node& Tree::node_at(NodeRef node) const {
  if (!is_live(node)) throw std::out_of_range("stale or invalid node reference");
  return nodes_[node.index];
}

bool Tree::is_leaf(NodeRef node) const { return node_at(node).leaf; }

NodeRef Tree::left(NodeRef node) const {
  const Node& n = node_at(node);
  if (n.leaf) throw std::logic_error("leaf has no children");
  return ref(n.left);
}

NodeRef Tree::right(NodeRef node) const {
  const Node& n = node_at(node);
  if (n.leaf) throw std::logic_error("leaf has no children");
  return ref(n.right);
}

std::optional<NodeRef> Tree::parent(NodeRef node) const {
  const Node& n = node_at(node);
  if (n.parent == kNone) return std::nullopt;
  return ref(n.parent);
}

std::uint64_t Tree::count(NodeRef node) const {
  (void)node_at(node);
  return n_of(node.index);
}

const RouterModel& Tree::router(NodeRef node) const {
  const Node& n = node_at(node);
  if (n.leaf) throw std::logic_error("leaf has no router");
  return n.router;
}

RouterModel& Tree::mutable_router(NodeRef node) {
  (void)node_at(node);
  Node& n = nodes_[node.index];
  if (n.leaf) throw std::logic_error("leaf has no router");
  return n.router;
}

const std::vector<Memory>& Tree::leaf_memories(NodeRef node) const {
  const Node& n = node_at(node);
  if (!n.leaf) throw std::logic_error("internal node holds no memories");
  return n.mem;
}

std::uint64_t Tree::n_of(std::uint32_t index) const noexcept {
  const Node& n = nodes_[index];
  return n.leaf ? n.mem.size() : n.count;
}

double Tree::balance_term(const Node& internal) const noexcept {
  return std::log(static_cast<double>(n_of(internal.left)) + 1.0) -
         std::log(static_cast<double>(n_of(internal.right)) + 1.0);
}

// ---------------------------------------------------------------------------
// Membership

bool Tree::contains(const SparseVector& key) const {
  return members_.contains(key.fingerprint());
}

std::optional<NodeRef> Tree::owner(const SparseVector& key) const {
  auto it = members_.find(key.fingerprint());
  if (it == members_.end()) return std::nullopt;
  return ref(it->second.leaf);
}

std::size_t Tree::capacity() const noexcept {
  const double c = params_.leaf_multiplier;
  const double n = static_cast<double>(std::max<std::uint64_t>(peak_size_, 2));
  const auto floor_cap = static_cast<std::size_t>(std::ceil(c));
  const auto log_cap = static_cast<std::size_t>(std::ceil(c * std::log(n)));
  return std::max(floor_cap, log_cap);
}

void Tree::register_memory(std::uint64_t fingerprint, std::uint32_t leaf) {
  auto [it, inserted] = members_.try_emplace(fingerprint);
  if (inserted) {
    it->second.order_pos = order_.size();
    order_.push_back(fingerprint);
  }
  it->second.leaf = leaf;
  peak_size_ = std::max<std::uint64_t>(peak_size_, order_.size());
}

void Tree::forget_memory(std::uint64_t fingerprint) {
  auto it = members_.find(fingerprint);
  const std::size_t pos = it->second.order_pos;
  const std::uint64_t moved = order_.back();
  order_[pos] = moved;
  members_[moved].order_pos = pos;
  order_.pop_back();
  members_.erase(fingerprint);
}

std::vector<Memory> Tree::stored_memories() const {
  std::vector<Memory> out;
  out.reserve(order_.size());
  for (std::uint64_t fp : order_) {
    const Node& leaf = nodes_[members_.at(fp).leaf];
    auto it = std::find_if(leaf.mem.begin(), leaf.mem.end(),
                           [fp](const Memory& m) { return m.fingerprint() == fp; });
    out.push_back(*it);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Path / Query

std::uint32_t Tree::descend(std::uint32_t from, const SparseVector& x) const {
  std::uint32_t v = from;
  while (!nodes_[v].leaf) {
    const Node& n = nodes_[v];
    v = n.router.routes_right(x) ? n.right : n.left;
  }
  return v;
}

PathRecord Tree::path(const SparseVector& x, NodeRef from) const {
  (void)node_at(from);
  PathRecord rec;
  std::uint32_t v = from.index;
  while (!nodes_[v].leaf) {
    const Node& n = nodes_[v];
    const bool right = n.router.routes_right(x);
    rec.steps.push_back({ref(v), right ? Direction::kRight : Direction::kLeft, 1.0});
    v = right ? n.right : n.left;
  }
  rec.leaf = ref(v);
  return rec;
}

std::vector<Memory> Tree::top_k(NodeRef leaf, const SparseVector& x, std::size_t k) const {
  const std::vector<Memory>& mem = leaf_memories(leaf);
  const std::size_t take = std::min(k, mem.size());
  if (take == 0) return {};

  struct Scored {
    double score;
    std::uint64_t tie;
    std::size_t pos;
  };
  const std::uint64_t xfp = splitmix64(x.fingerprint() ^ tie_salt_);
  std::vector<Scored> scored;
  scored.reserve(mem.size());
  for (std::size_t i = 0; i < mem.size(); ++i) {
    scored.push_back({scorer_.predict(x, mem[i].key()), splitmix64(xfp ^ mem[i].fingerprint()), i});
  }
  auto better = [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tie < b.tie;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), better);
  std::vector<Memory> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(mem[scored[i].pos]);
  return out;
}

std::vector<Memory> Tree::rand_k(NodeRef leaf, std::size_t k) {
  const std::vector<Memory>& mem = leaf_memories(leaf);
  const std::size_t take = std::min(k, mem.size());
  std::vector<std::size_t> idx(mem.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng_)]);
  }
  std::vector<Memory> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(mem[idx[i]]);
  return out;
}

QueryResult Tree::query_exploit(const SparseVector& x, std::size_t k) const {
  if (empty()) return {};
  return {NoUpdate{}, top_k(ref(descend(root_, x)), x, k)};
}

QueryResult Tree::query(const SparseVector& x, std::size_t k, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("epsilon must lie in [0, 1]");
  }
  if (empty()) return {};
  if (epsilon == 0.0) return query_exploit(x, k);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng_) >= epsilon) return query_with(x, k, Exploit{});

  std::size_t depth = 0;
  for (std::uint32_t v = root_; !nodes_[v].leaf; ++depth) {
    v = nodes_[v].router.routes_right(x) ? nodes_[v].right : nodes_[v].left;
  }
  std::uniform_int_distribution<std::size_t> pick(0, depth);
  const std::size_t i = pick(rng_);
  if (i == depth) return query_with(x, k, ExploreLeaf{});
  std::bernoulli_distribution coin(0.5);
  return query_with(x, k, ExploreNode{i, coin(rng_) ? Direction::kRight : Direction::kLeft});
}

QueryResult Tree::query_with(const SparseVector& x, std::size_t k, const QueryChoice& choice) {
  if (empty()) return {};
  if (std::holds_alternative<Exploit>(choice)) return query_exploit(x, k);

  const PathRecord p = path(x);
  if (std::holds_alternative<ExploreLeaf>(choice)) {
    return {LeafExplore{p.leaf}, rand_k(p.leaf, k)};
  }
  const auto& explore = std::get<ExploreNode>(choice);
  if (explore.step >= p.steps.size()) throw std::out_of_range("exploration step beyond path");
  const Node& v = nodes_[p.steps[explore.step].node.index];
  const std::uint32_t child = explore.action == Direction::kRight ? v.right : v.left;
  const NodeRef leaf = ref(descend(child, x));
  return {Deviation{p.steps[explore.step].node, explore.action, 0.5}, top_k(leaf, x, k)};
}

// ---------------------------------------------------------------------------
// Update

double Tree::reward_difference_estimate(double reward, const Deviation& key) {
  const double sign = key.action == Direction::kRight ? 1.0 : -1.0;
  return reward / key.prob * sign;
}

void Tree::update(const SparseVector& x, const Memory& z, double reward, const UpdateKey& key) {
  if (!(reward >= 0.0 && reward <= 1.0)) {
    throw std::invalid_argument("reward must lie in [0, 1]");
  }
  if (std::holds_alternative<NoUpdate>(key)) {
    if (params_.update_scorer_on_exploit) scorer_.update(x, z.key(), reward);
  } else if (const auto* leaf = std::get_if<LeafExplore>(&key)) {
    if (is_live(leaf->leaf) && nodes_[leaf->leaf.index].leaf) scorer_.update(x, z.key(), reward);
  } else {
    const auto& dev = std::get<Deviation>(key);
    if (!(dev.prob > 0.0 && dev.prob <= 1.0)) {
      throw std::invalid_argument("deviation probability must lie in (0, 1]");
    }
    if (is_live(dev.node) && !nodes_[dev.node.index].leaf) {
      Node& v = nodes_[dev.node.index];
      const double y = (1.0 - params_.alpha) * reward_difference_estimate(reward, dev) +
                       params_.alpha * balance_term(v);
      if (y != 0.0) v.router.update(x, y > 0.0 ? 1 : -1, std::abs(y));
    }
  }
  for (int i = 0; i < params_.reroutes; ++i) reroute();
}

// ---------------------------------------------------------------------------
// Insert / split

void Tree::insert(NodeRef from, Memory z, int reroutes) {
  (void)node_at(from);
  if (reroutes < 0) throw std::invalid_argument("reroutes must be >= 0");
  if (members_.contains(z.fingerprint())) {
    if (params_.duplicates == DuplicatePolicy::kError) {
      throw DuplicateKeyError("memory with this key is already stored");
    }
    remove_fingerprint(z.fingerprint());
    if (!is_live(from)) from = root();
  }

  std::uint32_t v = from.index;
  while (!nodes_[v].leaf) {
    Node& n = nodes_[v];
    const double score = (1.0 - params_.alpha) * n.router.raw(z.key()) +
                         params_.alpha * balance_term(n);
    n.router.update(z.key(), sign_or_left(score), 1.0);
    ++n.count;
    v = n.router.routes_right(z.key()) ? n.right : n.left;
  }
  insert_leaf(v, std::move(z));

  for (int i = 0; i < reroutes; ++i) reroute();
}

void Tree::insert_leaf(std::uint32_t leaf, Memory z) {
  const std::uint64_t fp = z.fingerprint();
  nodes_[leaf].mem.push_back(std::move(z));
  register_memory(fp, leaf);
  if (nodes_[leaf].mem.size() > capacity()) split(leaf);
}

void Tree::split(std::uint32_t index) {
  std::vector<Memory> held = std::move(nodes_[index].mem);
  const std::uint32_t parent = nodes_[index].parent;

  // The promoted node gets a new generation so handles to the old leaf go stale.
  release_node(index);
  free_.pop_back();
  Node& fresh = nodes_[index];
  fresh.live = true;
  fresh.leaf = false;
  fresh.parent = parent;
  fresh.router = RouterModel(params_.base_rate);

  const std::uint32_t l = allocate_node(true, index);
  const std::uint32_t r = allocate_node(true, index);
  nodes_[index].left = l;
  nodes_[index].right = r;

  // Equivalent to inserting each memory from the new node with no reroutes:
  // one routing step, then straight into a child without a capacity check.
  for (Memory& m : held) {
    Node& v = nodes_[index];
    const double score = (1.0 - params_.alpha) * v.router.raw(m.key()) +
                         params_.alpha * balance_term(v);
    v.router.update(m.key(), sign_or_left(score), 1.0);
    ++v.count;
    const std::uint32_t dest = v.router.routes_right(m.key()) ? v.right : v.left;
    members_[m.fingerprint()].leaf = dest;
    nodes_[dest].mem.push_back(std::move(m));
  }

  // A fresh router can send everything one way. Move the half that sits
  // closest to the empty side by router score, ties by fingerprint.
  const bool left_empty = nodes_[l].mem.empty();
  if (left_empty || nodes_[r].mem.empty()) {
    const std::uint32_t full = left_empty ? r : l;
    const std::uint32_t empty_child = left_empty ? l : r;
    const RouterModel& g = nodes_[index].router;
    std::vector<Memory>& mem = nodes_[full].mem;
    std::stable_sort(mem.begin(), mem.end(), [&g](const Memory& a, const Memory& b) {
      const double sa = g.raw(a.key());
      const double sb = g.raw(b.key());
      if (sa != sb) return sa < sb;
      return a.fingerprint() < b.fingerprint();
    });
    const std::size_t half = mem.size() / 2;
    // Left child takes the lowest scores, right child the highest.
    auto first = left_empty ? mem.begin() : mem.end() - static_cast<std::ptrdiff_t>(half);
    auto last = first + static_cast<std::ptrdiff_t>(half);
    std::vector<Memory> moved(std::make_move_iterator(first), std::make_move_iterator(last));
    mem.erase(first, last);
    for (const Memory& m : moved) members_[m.fingerprint()].leaf = empty_child;
    nodes_[empty_child].mem = std::move(moved);
  }
}

// ---------------------------------------------------------------------------
// Remove / reroute

Memory Tree::remove(const SparseVector& key) {
  const std::uint64_t fp = key.fingerprint();
  if (!members_.contains(fp)) throw UnknownKeyError("no memory stored under this key");
  return remove_fingerprint(fp);
}

Memory Tree::remove_fingerprint(std::uint64_t fp) {
  const std::uint32_t leaf = members_.at(fp).leaf;
  std::vector<Memory>& mem = nodes_[leaf].mem;
  auto it = std::find_if(mem.begin(), mem.end(),
                         [fp](const Memory& m) { return m.fingerprint() == fp; });
  Memory removed = std::move(*it);
  mem.erase(it);
  forget_memory(fp);

  for (std::uint32_t v = nodes_[leaf].parent; v != kNone; v = nodes_[v].parent) {
    --nodes_[v].count;
  }

  if (mem.empty() && leaf != root_) {
    const std::uint32_t p = nodes_[leaf].parent;
    const std::uint32_t sibling = nodes_[p].left == leaf ? nodes_[p].right : nodes_[p].left;
    const std::uint32_t grand = nodes_[p].parent;
    nodes_[sibling].parent = grand;
    if (grand == kNone) {
      root_ = sibling;
    } else if (nodes_[grand].left == p) {
      nodes_[grand].left = sibling;
    } else {
      nodes_[grand].right = sibling;
    }
    release_node(leaf);
    release_node(p);
  }
  return removed;
}

void Tree::reroute() {
  if (order_.empty()) return;
  std::uniform_int_distribution<std::size_t> pick(0, order_.size() - 1);
  Memory z = remove_fingerprint(order_[pick(rng_)]);
  insert(root(), std::move(z), 0);
}

// ---------------------------------------------------------------------------
// Diagnostics

std::vector<std::string> Tree::check_invariants() const {
  std::vector<std::string> issues;
  auto report = [&issues](std::string s) { issues.push_back(std::move(s)); };

  if (root_ >= nodes_.size() || !nodes_[root_].live) {
    report("root is not a live node");
    return issues;
  }
  if (nodes_[root_].parent != kNone) report("root has a parent");

  const std::size_t cap = capacity();
  std::size_t reachable = 0;
  std::size_t total = 0;
  std::unordered_map<std::uint64_t, std::uint32_t> seen;

  // Returns the number of memories beneath `v`.
  std::function<std::uint64_t(std::uint32_t)> visit = [&](std::uint32_t v) -> std::uint64_t {
    ++reachable;
    const Node& n = nodes_[v];
    if (n.leaf) {
      if (n.mem.size() > cap) {
        report("leaf " + std::to_string(v) + " holds " + std::to_string(n.mem.size()) +
               " memories, capacity " + std::to_string(cap));
      }
      if (n.mem.empty() && v != root_) report("non-root leaf " + std::to_string(v) + " is empty");
      for (const Memory& m : n.mem) {
        if (!seen.emplace(m.fingerprint(), v).second) {
          report("memory stored twice (leaf " + std::to_string(v) + ")");
        }
        auto it = members_.find(m.fingerprint());
        if (it == members_.end()) {
          report("memory in leaf " + std::to_string(v) + " missing from membership map");
        } else if (it->second.leaf != v) {
          report("membership map points memory of leaf " + std::to_string(v) + " elsewhere");
        }
      }
      total += n.mem.size();
      return n.mem.size();
    }
    std::uint64_t below = 0;
    for (std::uint32_t c : {n.left, n.right}) {
      if (c >= nodes_.size() || !nodes_[c].live) {
        report("internal node " + std::to_string(v) + " has a dead child");
        continue;
      }
      if (nodes_[c].parent != v) {
        report("child " + std::to_string(c) + " does not point back to parent " +
               std::to_string(v));
      }
      below += visit(c);
    }
    if (n.count != below) {
      report("count mismatch at node " + std::to_string(v) + ": stored " +
             std::to_string(n.count) + ", actual " + std::to_string(below));
    }
    return below;
  };
  visit(root_);

  const auto live = static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.live; }));
  if (live != reachable) {
    report(std::to_string(live - std::min(live, reachable)) + " live nodes are unreachable");
  }
  if (members_.size() != total) {
    report("membership map has " + std::to_string(members_.size()) + " entries, leaves hold " +
           std::to_string(total));
  }
  if (order_.size() != members_.size()) report("membership order out of sync");
  for (std::size_t i = 0; i < order_.size(); ++i) {
    auto it = members_.find(order_[i]);
    if (it == members_.end() || it->second.order_pos != i) {
      report("membership order entry " + std::to_string(i) + " is inconsistent");
    }
  }
  for (const auto& [fp, m] : members_) {
    if (!seen.contains(fp)) report("membership map entry refers to an unreachable memory");
  }
  return issues;
}

TreeStats Tree::stats() const {
  TreeStats s;
  s.memories = size();
  std::vector<std::pair<std::uint32_t, std::size_t>> stack{{root_, 0}};
  while (!stack.empty()) {
    auto [v, depth] = stack.back();
    stack.pop_back();
    const Node& n = nodes_[v];
    if (n.leaf) {
      ++s.leaves;
      s.max_depth = std::max(s.max_depth, depth);
      s.max_leaf_size = std::max(s.max_leaf_size, n.mem.size());
      continue;
    }
    ++s.internal_nodes;
    s.router_updates += n.router.update_count();
    s.router_mistakes += n.router.mistake_count();
    if (n.router.update_count() > 0) {
      const double p = n.router.progressive_error();
      s.max_progressive_error = std::max(s.max_progressive_error.value_or(0.0), p);
    }
    stack.push_back({n.left, depth + 1});
    stack.push_back({n.right, depth + 1});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Images

TreeImage Tree::export_image() const {
  TreeImage image;
  image.params = params_;
  image.scorer = scorer_;
  std::ostringstream rng_text;
  rng_text << rng_;
  image.rng_state = rng_text.str();
  image.peak_size = peak_size_;
  image.memories = stored_memories();

  std::unordered_map<std::uint64_t, std::uint32_t> memory_index;
  for (std::size_t i = 0; i < order_.size(); ++i) {
    memory_index.emplace(order_[i], static_cast<std::uint32_t>(i));
  }
  std::vector<std::uint32_t> stack{root_};
  while (!stack.empty()) {
    const std::uint32_t v = stack.back();
    stack.pop_back();
    const Node& n = nodes_[v];
    TreeImage::Node out;
    out.leaf = n.leaf;
    if (n.leaf) {
      for (const Memory& m : n.mem) out.memories.push_back(memory_index.at(m.fingerprint()));
    } else {
      out.count = n.count;
      out.router = n.router;
      stack.push_back(n.right);
      stack.push_back(n.left);
    }
    image.nodes.push_back(std::move(out));
  }
  return image;
}

Tree Tree::from_image(const TreeImage& image) {
  Tree t(image.params);
  t.scorer_ = image.scorer;
  std::istringstream rng_text(image.rng_state);
  rng_text >> t.rng_;
  if (!rng_text) throw std::invalid_argument("tree image: bad random state");
  if (image.nodes.empty()) throw std::invalid_argument("tree image: no nodes");

  t.nodes_.clear();
  t.free_.clear();
  std::vector<bool> placed(image.memories.size(), false);
  std::size_t cursor = 0;

  std::function<std::uint32_t(std::uint32_t)> build = [&](std::uint32_t parent) -> std::uint32_t {
    if (cursor >= image.nodes.size()) throw std::invalid_argument("tree image: truncated preorder");
    const TreeImage::Node& in = image.nodes[cursor++];
    const std::uint32_t v = t.allocate_node(in.leaf, parent);
    if (in.leaf) {
      for (std::uint32_t mi : in.memories) {
        if (mi >= image.memories.size() || placed[mi]) {
          throw std::invalid_argument("tree image: bad memory reference");
        }
        placed[mi] = true;
        t.nodes_[v].mem.push_back(image.memories[mi]);
      }
    } else {
      t.nodes_[v].count = in.count;
      t.nodes_[v].router = in.router;
      const std::uint32_t l = build(v);
      const std::uint32_t r = build(v);
      t.nodes_[v].left = l;
      t.nodes_[v].right = r;
    }
    return v;
  };
  t.root_ = build(kNone);
  if (cursor != image.nodes.size()) throw std::invalid_argument("tree image: trailing nodes");
  if (std::find(placed.begin(), placed.end(), false) != placed.end()) {
    throw std::invalid_argument("tree image: memory not placed in any leaf");
  }

  for (std::uint32_t v = 0; v < t.nodes_.size(); ++v) {
    for (const Memory& m : t.nodes_[v].mem) {
      auto [it, inserted] = t.members_.try_emplace(m.fingerprint(), Membership{v, 0});
      if (!inserted) throw std::invalid_argument("tree image: duplicate memory key");
    }
  }
  for (const Memory& m : image.memories) {
    t.members_.at(m.fingerprint()).order_pos = t.order_.size();
    t.order_.push_back(m.fingerprint());
  }
  t.peak_size_ = std::max<std::uint64_t>(image.peak_size, t.order_.size());
  return t;
}

// ---------------------------------------------------------------------------

double measure_self_consistency(const Tree& tree, const std::vector<Memory>& sample) {
  if (sample.empty()) return 0.0;
  std::size_t misses = 0;
  for (const Memory& z : sample) {
    const QueryResult q = tree.query_exploit(z.key(), 1);
    if (q.memories.empty() || q.memories.front().fingerprint() != z.fingerprint()) ++misses;
  }
  return static_cast<double>(misses) / static_cast<double>(sample.size());
}

double balance_bound(double p, double alpha, double updates) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("balance_bound: p must lie in [0, 1)");
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("balance_bound: alpha must lie in (0, 1]");
  }
  if (!(updates > 0.0)) throw std::invalid_argument("balance_bound: T must be positive");
  const double numerator = 1.0 + std::exp((1.0 - alpha) / alpha);
  const double denominator = (1.0 - p) - numerator / updates;
  if (!(denominator > 0.0)) throw std::domain_error("balance_bound: bound is vacuous");
  return numerator / denominator;
}

}  // namespace cmt
