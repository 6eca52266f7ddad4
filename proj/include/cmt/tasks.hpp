#pragma once

// Task drivers built on the memory tree: online/batch multiclass, multilabel
// with one-against-some inference, caption-to-image retrieval, and the exact
// linear-scan nearest-neighbor baseline.

#include <cstddef>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "cmt/features.hpp"
#include "cmt/learners.hpp"
#include "cmt/tree.hpp"

namespace cmt {

struct MulticlassExample {
  SparseVector x;
  Label label = 0;
};

struct MultilabelExample {
  SparseVector x;
  LabelSet labels;
};

struct RetrievalPair {
  SparseVector x;
  SparseVector value;
};

/// How a step touches the tree. kEvaluate is a pure epsilon = 0 read.
enum class StepMode { kOnline, kInsertOnly, kEvaluate };

inline constexpr Label kNoPrediction = -1;

/// Returns the label carried by a memory, or kNoPrediction for other values.
[[nodiscard]] Label label_of(const Memory& z) noexcept;
[[nodiscard]] LabelSet labels_of(const Memory& z);

/// Sorts and deduplicates.
[[nodiscard]] LabelSet make_label_set(std::vector<Label> labels);

// --- multiclass ------------------------------------------------------------

struct McOutcome {
  Label predicted = kNoPrediction;
  bool correct = false;
};

/// Query, score with the 0/1 reward, update on exploration, then insert the
/// example (skipped when its key is already stored, unless the tree replaces
/// duplicates).
McOutcome mc_step(Tree& tree, const MulticlassExample& ex, double epsilon, StepMode mode);

struct TracePoint {
  std::size_t step = 0;          // examples seen so far
  double cumulative_accuracy = 0.0;
  double window_accuracy = 0.0;  // over the last `window` examples
};

struct ProgressiveResult {
  std::size_t examples = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::vector<TracePoint> trace;
};

/// Progressive validation: each example is predicted before it is learned.
ProgressiveResult mc_progressive_run(Tree& tree, std::span<const MulticlassExample> stream,
                                     double epsilon, std::size_t window = 100,
                                     StepMode mode = StepMode::kOnline);

/// log2(p_a) - log2(p_b). Throws std::domain_error on nonpositive input.
[[nodiscard]] double entropy_reduction(double p_a, double p_b);

/// Accuracy on `test` of always predicting the most frequent `train` label
/// (smallest label on ties).
[[nodiscard]] double constant_predictor_accuracy(std::span<const MulticlassExample> train,
                                                 std::span<const MulticlassExample> test);

// --- multilabel ------------------------------------------------------------

/// 2|A ∩ B| / (|A| + |B|); 0 if either set is empty.
[[nodiscard]] double f1_reward(const LabelSet& truth, const LabelSet& returned);

/// Size of the symmetric difference.
[[nodiscard]] std::size_t hamming_loss(const LabelSet& predicted, const LabelSet& truth);

/// Lazily created per-label logistic scorers. Predicts the candidates whose
/// score is strictly positive.
class OASModel {
 public:
  explicit OASModel(double base_rate = kDefaultBaseRate) : base_rate_(base_rate) {}

  [[nodiscard]] double score(Label label, const SparseVector& x) const;
  [[nodiscard]] LabelSet predict(const LabelSet& candidates, const SparseVector& x) const;
  /// Trains every label in candidates ∪ truth toward membership in truth.
  void train(const LabelSet& candidates, const LabelSet& truth, const SparseVector& x);

  [[nodiscard]] std::size_t label_count() const noexcept { return scorers_.size(); }
  [[nodiscard]] double base_rate() const noexcept { return base_rate_; }
  [[nodiscard]] const std::unordered_map<Label, RouterModel>& scorers() const noexcept {
    return scorers_;
  }
  void restore_scorer(Label label, RouterModel model) { scorers_.insert_or_assign(label, std::move(model)); }

 private:
  double base_rate_;
  std::unordered_map<Label, RouterModel> scorers_;
};

struct OasOutcome {
  LabelSet predicted;
  std::size_t candidates = 0;
  std::size_t returned = 0;
  std::size_t max_labels_per_memory = 0;
};

/// Retrieves a whole leaf (k = capacity) and runs one-against-some over the
/// labels found there. Outside kEvaluate the OAS scorers are trained and the
/// example is inserted; kOnline also rewards the top returned memory with F1.
OasOutcome oas_step(Tree& tree, OASModel& oas, const MultilabelExample& ex, StepMode mode,
                    double epsilon);

// --- retrieval -------------------------------------------------------------

struct RetrievalOutcome {
  std::optional<SparseVector> returned;
  double cosine = 0.0;  // raw cosine, 0 when nothing was returned
};

/// Top-1 retrieval. Learners see (1 + cos) / 2; the raw cosine is reported.
/// Throws DegenerateVectorError when pair.value is zero.
RetrievalOutcome retrieval_step(Tree& tree, const RetrievalPair& pair, StepMode mode,
                                double epsilon);

// --- baseline --------------------------------------------------------------

/// Exact k nearest memories by Euclidean key distance, ties by fingerprint.
[[nodiscard]] std::vector<Memory> nn_linear_scan(std::span<const Memory> store,
                                                 const SparseVector& x, std::size_t k);

}  // namespace cmt
