#pragma once

// Online linear learners: the importance-weighted router and the reward scorer.

#include <cstdint>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmt/features.hpp"

namespace cmt {

inline constexpr double kDefaultBaseRate = 0.1;

// Reserved feature namespaces. Hashed ids are always < 2^31 so none of these
// can collide with an input feature.
inline constexpr FeatureIndex kRouterBiasIndex = FeatureIndex{3} << 32;
inline constexpr FeatureIndex kPairProductNamespace = FeatureIndex{1} << 32;
inline constexpr FeatureIndex kPairCosineIndex = (FeatureIndex{2} << 32) + 0;
inline constexpr FeatureIndex kPairDistanceIndex = (FeatureIndex{2} << 32) + 1;
inline constexpr FeatureIndex kPairBiasIndex = (FeatureIndex{2} << 32) + 2;

struct Parameter {
  FeatureIndex index = 0;
  double weight = 0.0;
  double grad_sq = 0.0;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

/// Sparse linear model trained by per-coordinate adaptive gradient steps:
/// w_j -= base_rate / sqrt(G_j + 1) * g_j, with G_j accumulating g_j^2.
class LinearModel {
 public:
  LinearModel() : LinearModel(kDefaultBaseRate) {}
  explicit LinearModel(double base_rate);

  [[nodiscard]] double predict(const SparseVector& features) const noexcept;

  /// One step for a loss whose derivative w.r.t. the linear output is
  /// `dloss_doutput`; coordinates outside `features` are untouched.
  void step(const SparseVector& features, double dloss_doutput);

  [[nodiscard]] double weight(FeatureIndex index) const noexcept;
  void set_weight(FeatureIndex index, double value);
  [[nodiscard]] double base_rate() const noexcept { return base_rate_; }

  /// Parameters sorted by index.
  [[nodiscard]] std::vector<Parameter> parameters() const;
  static LinearModel from_parameters(double base_rate, const std::vector<Parameter>& params);

  friend bool operator==(const LinearModel& a, const LinearModel& b) {
    return a.base_rate_ == b.base_rate_ && a.parameters() == b.parameters();
  }

 private:
  struct Slot {
    double weight = 0.0;
    double grad_sq = 0.0;
  };
  std::unordered_map<FeatureIndex, Slot> params_;
  double base_rate_;
};

/// Routing classifier at an internal node. Uses logistic loss over the input
/// features plus a constant bias feature.
class RouterModel {
 public:
  RouterModel() = default;
  explicit RouterModel(double base_rate) : model_(base_rate) {}

  /// Linear score; the node routes right iff this is > 0.
  [[nodiscard]] double raw(const SparseVector& x) const noexcept;
  [[nodiscard]] bool routes_right(const SparseVector& x) const noexcept { return raw(x) > 0.0; }

  /// Importance-weighted logistic step toward `label` (+1 or -1). A mistake
  /// is recorded when the post-update route disagrees with `label`. Zero
  /// importance only advances update_count.
  void update(const SparseVector& x, int label, double importance);

  /// Fraction of updates whose post-update prediction disagreed with the
  /// label. Throws std::logic_error before the first update.
  [[nodiscard]] double progressive_error() const;

  [[nodiscard]] std::uint64_t update_count() const noexcept { return update_count_; }
  [[nodiscard]] std::uint64_t mistake_count() const noexcept { return mistake_count_; }
  [[nodiscard]] const LinearModel& model() const noexcept { return model_; }
  LinearModel& mutable_model() noexcept { return model_; }

  static RouterModel restore(LinearModel model, std::uint64_t updates, std::uint64_t mistakes);

  friend bool operator==(const RouterModel&, const RouterModel&) = default;

 private:
  LinearModel model_;
  std::uint64_t update_count_ = 0;
  std::uint64_t mistake_count_ = 0;
};

[[nodiscard]] SparseVector router_features(const SparseVector& x);

/// Scorer input for a (query, stored key) pair: the elementwise product moved
/// into its own namespace, plus cosine, d/(1+d) for the Euclidean distance d,
/// and a constant 1.
[[nodiscard]] SparseVector pair_features(const SparseVector& query, const SparseVector& key);

enum class ScorerMode { kLearned, kEuclidean };

[[nodiscard]] std::string_view to_string(ScorerMode mode) noexcept;
[[nodiscard]] ScorerMode parse_scorer_mode(std::string_view text);

/// Predicts the reward of returning a memory with key `key` for `query`.
class ScorerModel {
 public:
  explicit ScorerModel(ScorerMode mode = ScorerMode::kLearned,
                       double base_rate = kDefaultBaseRate)
      : mode_(mode), model_(base_rate) {}

  /// Learned: linear score over pair_features clamped to [0, 1].
  /// Euclidean: negative distance, unclamped.
  [[nodiscard]] double predict(const SparseVector& query, const SparseVector& key) const;

  /// Squared-loss step toward `reward` in [0, 1]; no-op in Euclidean mode.
  void update(const SparseVector& query, const SparseVector& key, double reward);

  /// 0.5 * (w . phi - reward)^2 on the unclamped output.
  [[nodiscard]] double loss(const SparseVector& query, const SparseVector& key,
                            double reward) const;
  /// Analytic gradient of loss() w.r.t. the weights, keyed by parameter index.
  [[nodiscard]] SparseVector gradient(const SparseVector& query, const SparseVector& key,
                                      double reward) const;

  [[nodiscard]] ScorerMode mode() const noexcept { return mode_; }
  [[nodiscard]] const LinearModel& model() const noexcept { return model_; }
  LinearModel& mutable_model() noexcept { return model_; }

  friend bool operator==(const ScorerModel&, const ScorerModel&) = default;

 private:
  ScorerMode mode_;
  LinearModel model_;
};

}  // namespace cmt
