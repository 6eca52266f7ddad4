#include "cmt/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>

namespace cmt {

Label label_of(const Memory& z) noexcept {
  if (const auto* l = std::get_if<Label>(&z.value())) return *l;
  return kNoPrediction;
}

LabelSet labels_of(const Memory& z) {
  if (const auto* s = std::get_if<LabelSet>(&z.value())) return *s;
  if (const auto* l = std::get_if<Label>(&z.value())) return {*l};
  return {};
}

LabelSet make_label_set(std::vector<Label> labels) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

namespace {

bool should_update(const Tree& tree, const UpdateKey& key) {
  return !std::holds_alternative<NoUpdate>(key) || tree.params().update_scorer_on_exploit;
}

void insert_if_new(Tree& tree, Memory z) {
  if (tree.contains(z.key()) && tree.params().duplicates == DuplicatePolicy::kError) return;
  tree.insert(std::move(z));
}

}  // namespace

// ---------------------------------------------------------------------------

McOutcome mc_step(Tree& tree, const MulticlassExample& ex, double epsilon, StepMode mode) {
  const double eps = mode == StepMode::kOnline ? epsilon : 0.0;
  QueryResult q = tree.query(ex.x, 1, eps);

  McOutcome out;
  if (!q.memories.empty()) {
    out.predicted = label_of(q.memories.front());
    out.correct = out.predicted == ex.label;
  }
  if (mode == StepMode::kEvaluate) return out;

  if (mode == StepMode::kOnline && !q.memories.empty() && should_update(tree, q.key)) {
    tree.update(ex.x, q.memories.front(), out.correct ? 1.0 : 0.0, q.key);
  }
  insert_if_new(tree, Memory(ex.x, ex.label));
  return out;
}

ProgressiveResult mc_progressive_run(Tree& tree, std::span<const MulticlassExample> stream,
                                     double epsilon, std::size_t window, StepMode mode) {
  ProgressiveResult result;
  std::deque<bool> recent;
  std::size_t recent_correct = 0;
  window = std::max<std::size_t>(window, 1);

  for (const MulticlassExample& ex : stream) {
    const McOutcome o = mc_step(tree, ex, epsilon, mode);
    ++result.examples;
    result.correct += o.correct ? 1 : 0;
    recent.push_back(o.correct);
    recent_correct += o.correct ? 1 : 0;
    if (recent.size() > window) {
      recent_correct -= recent.front() ? 1 : 0;
      recent.pop_front();
    }
    if (result.examples % window == 0 || result.examples == stream.size()) {
      result.trace.push_back({result.examples,
                              static_cast<double>(result.correct) / result.examples,
                              static_cast<double>(recent_correct) / recent.size()});
    }
  }
  result.accuracy =
      result.examples ? static_cast<double>(result.correct) / result.examples : 0.0;
  return result;
}

double entropy_reduction(double p_a, double p_b) {
  if (!(p_a > 0.0) || !(p_b > 0.0)) {
    throw std::domain_error("entropy_reduction: accuracies must be positive");
  }
  return std::log2(p_a) - std::log2(p_b);
}

double constant_predictor_accuracy(std::span<const MulticlassExample> train,
                                   std::span<const MulticlassExample> test) {
  if (test.empty()) return 0.0;
  std::map<Label, std::size_t> freq;
  for (const auto& ex : train) ++freq[ex.label];
  Label best = kNoPrediction;
  std::size_t best_count = 0;
  for (const auto& [label, n] : freq) {
    if (n > best_count) {
      best = label;
      best_count = n;
    }
  }
  const auto hits = std::count_if(test.begin(), test.end(),
                                  [best](const MulticlassExample& ex) { return ex.label == best; });
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------

double f1_reward(const LabelSet& truth, const LabelSet& returned) {
  if (truth.empty() || returned.empty()) return 0.0;
  LabelSet common;
  std::set_intersection(truth.begin(), truth.end(), returned.begin(), returned.end(),
                        std::back_inserter(common));
  return 2.0 * static_cast<double>(common.size()) /
         static_cast<double>(truth.size() + returned.size());
}

std::size_t hamming_loss(const LabelSet& predicted, const LabelSet& truth) {
  LabelSet diff;
  std::set_symmetric_difference(predicted.begin(), predicted.end(), truth.begin(), truth.end(),
                                std::back_inserter(diff));
  return diff.size();
}

double OASModel::score(Label label, const SparseVector& x) const {
  auto it = scorers_.find(label);
  return it == scorers_.end() ? 0.0 : it->second.raw(x);
}

LabelSet OASModel::predict(const LabelSet& candidates, const SparseVector& x) const {
  LabelSet out;
  for (Label l : candidates) {
    if (score(l, x) > 0.0) out.push_back(l);
  }
  return out;
}

void OASModel::train(const LabelSet& candidates, const LabelSet& truth, const SparseVector& x) {
  LabelSet all;
  std::set_union(candidates.begin(), candidates.end(), truth.begin(), truth.end(),
                 std::back_inserter(all));
  for (Label l : all) {
    const bool positive = std::binary_search(truth.begin(), truth.end(), l);
    scorers_.try_emplace(l, base_rate_).first->second.update(x, positive ? 1 : -1, 1.0);
  }
}

OasOutcome oas_step(Tree& tree, OASModel& oas, const MultilabelExample& ex, StepMode mode,
                    double epsilon) {
  QueryResult q = tree.query(ex.x, tree.capacity(), mode == StepMode::kOnline ? epsilon : 0.0);

  OasOutcome out;
  out.returned = q.memories.size();
  std::vector<Label> pooled;
  for (const Memory& z : q.memories) {
    const LabelSet ls = labels_of(z);
    out.max_labels_per_memory = std::max(out.max_labels_per_memory, ls.size());
    pooled.insert(pooled.end(), ls.begin(), ls.end());
  }
  const LabelSet candidates = make_label_set(std::move(pooled));
  out.candidates = candidates.size();
  out.predicted = oas.predict(candidates, ex.x);
  if (mode == StepMode::kEvaluate) return out;

  oas.train(candidates, ex.labels, ex.x);
  if (mode == StepMode::kOnline && !q.memories.empty() && should_update(tree, q.key)) {
    const Memory& top = q.memories.front();
    tree.update(ex.x, top, f1_reward(ex.labels, labels_of(top)), q.key);
  }
  insert_if_new(tree, Memory(ex.x, ex.labels));
  return out;
}

// ---------------------------------------------------------------------------

RetrievalOutcome retrieval_step(Tree& tree, const RetrievalPair& pair, StepMode mode,
                                double epsilon) {
  if (pair.value.norm() == 0.0) {
    throw DegenerateVectorError("retrieval value vector has zero norm");
  }
  QueryResult q = tree.query(pair.x, 1, mode == StepMode::kOnline ? epsilon : 0.0);

  RetrievalOutcome out;
  if (!q.memories.empty()) {
    const Memory& top = q.memories.front();
    const auto& value = std::get<SparseVector>(top.value());
    out.returned = value;
    out.cosine = cosine(value, pair.value);
    if (mode == StepMode::kOnline && should_update(tree, q.key)) {
      tree.update(pair.x, top, std::clamp((1.0 + out.cosine) / 2.0, 0.0, 1.0), q.key);
    }
  }
  if (mode != StepMode::kEvaluate) insert_if_new(tree, Memory(pair.x, pair.value));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Memory> nn_linear_scan(std::span<const Memory> store, const SparseVector& x,
                                   std::size_t k) {
  struct Candidate {
    double distance;
    std::uint64_t fingerprint;
    std::size_t pos;
  };
  std::vector<Candidate> all;
  all.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    all.push_back({l2_distance(x, store[i].key()), store[i].fingerprint(), i});
  }
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const Candidate& a, const Candidate& b) {
                      if (a.distance != b.distance) return a.distance < b.distance;
                      return a.fingerprint < b.fingerprint;
                    });
  std::vector<Memory> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(store[all[i].pos]);
  return out;
}

}  // namespace cmt
