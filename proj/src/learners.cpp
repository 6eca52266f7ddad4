#include "cmt/learners.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cmt {

LinearModel::LinearModel(double base_rate) : base_rate_(base_rate) {
  if (!(base_rate > 0.0) || !std::isfinite(base_rate)) {
    throw std::invalid_argument("LinearModel: base_rate must be finite and > 0");
  }
}

double LinearModel::predict(const SparseVector& features) const noexcept {
  double s = 0.0;
  for (const auto& e : features.entries()) {
    auto it = params_.find(e.index);
    if (it != params_.end()) s += it->second.weight * e.value;
  }
  return s;
}

void LinearModel::step(const SparseVector& features, double dloss_doutput) {
  if (!std::isfinite(dloss_doutput)) throw std::invalid_argument("LinearModel: non-finite gradient");
  if (dloss_doutput == 0.0) return;
  for (const auto& e : features.entries()) {
    const double g = dloss_doutput * e.value;
    Slot& slot = params_[e.index];
    slot.grad_sq += g * g;
    slot.weight -= base_rate_ / std::sqrt(slot.grad_sq + 1.0) * g;
  }
}

double LinearModel::weight(FeatureIndex index) const noexcept {
  auto it = params_.find(index);
  return it == params_.end() ? 0.0 : it->second.weight;
}

void LinearModel::set_weight(FeatureIndex index, double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("LinearModel: non-finite weight");
  params_[index].weight = value;
}

std::vector<Parameter> LinearModel::parameters() const {
  std::vector<Parameter> out;
  out.reserve(params_.size());
  for (const auto& [index, slot] : params_) out.push_back({index, slot.weight, slot.grad_sq});
  std::sort(out.begin(), out.end(),
            [](const Parameter& a, const Parameter& b) { return a.index < b.index; });
  return out;
}

LinearModel LinearModel::from_parameters(double base_rate, const std::vector<Parameter>& params) {
  LinearModel m(base_rate);
  for (const auto& p : params) {
    if (!std::isfinite(p.weight) || !std::isfinite(p.grad_sq) || p.grad_sq < 0.0) {
      throw std::invalid_argument("LinearModel: invalid stored parameter");
    }
    m.params_[p.index] = Slot{p.weight, p.grad_sq};
  }
  return m;
}

// ---------------------------------------------------------------------------

SparseVector router_features(const SparseVector& x) {
  std::vector<FeatureEntry> entries(x.entries().begin(), x.entries().end());
  entries.push_back({kRouterBiasIndex, 1.0});
  return SparseVector(std::move(entries));
}

double RouterModel::raw(const SparseVector& x) const noexcept {
  return model_.predict(x) + model_.weight(kRouterBiasIndex);
}

void RouterModel::update(const SparseVector& x, int label, double importance) {
  if (label != 1 && label != -1) throw std::invalid_argument("RouterModel: label must be +1 or -1");
  if (!std::isfinite(importance) || importance < 0.0) {
    throw std::invalid_argument("RouterModel: importance must be finite and >= 0");
  }
  ++update_count_;
  if (importance == 0.0) return;

  const double margin = label * raw(x);
  // d/ds of importance * log(1 + exp(-y s)) is -importance * y * sigmoid(-y s).
  const double sig = 1.0 / (1.0 + std::exp(margin));
  model_.step(router_features(x), -importance * label * sig);

  const int predicted = routes_right(x) ? 1 : -1;
  if (predicted != label) ++mistake_count_;
}

double RouterModel::progressive_error() const {
  if (update_count_ == 0) throw std::logic_error("progressive_error: no updates yet");
  return static_cast<double>(mistake_count_) / static_cast<double>(update_count_);
}

RouterModel RouterModel::restore(LinearModel model, std::uint64_t updates,
                                 std::uint64_t mistakes) {
  if (mistakes > updates) throw std::invalid_argument("RouterModel: mistakes exceed updates");
  RouterModel r;
  r.model_ = std::move(model);
  r.update_count_ = updates;
  r.mistake_count_ = mistakes;
  return r;
}

// ---------------------------------------------------------------------------

SparseVector pair_features(const SparseVector& query, const SparseVector& key) {
  std::vector<FeatureEntry> entries;
  const SparseVector product = hadamard(query, key);
  for (const auto& e : product.entries()) {
    entries.push_back({kPairProductNamespace | e.index, e.value});
  }
  const double nq = query.norm();
  const double nk = key.norm();
  const double cos = (nq > 0.0 && nk > 0.0) ? std::clamp(dot(query, key) / (nq * nk), -1.0, 1.0)
                                            : 0.0;
  const double dist = l2_distance(query, key);
  entries.push_back({kPairCosineIndex, cos});
  entries.push_back({kPairDistanceIndex, dist / (1.0 + dist)});
  entries.push_back({kPairBiasIndex, 1.0});
  return SparseVector(std::move(entries));
}

std::string_view to_string(ScorerMode mode) noexcept {
  return mode == ScorerMode::kLearned ? "learned" : "euclidean";
}

ScorerMode parse_scorer_mode(std::string_view text) {
  if (text == "learned") return ScorerMode::kLearned;
  if (text == "euclidean") return ScorerMode::kEuclidean;
  throw std::invalid_argument("unknown scorer mode '" + std::string(text) + "'");
}

double ScorerModel::predict(const SparseVector& query, const SparseVector& key) const {
  if (mode_ == ScorerMode::kEuclidean) return -l2_distance(query, key);
  return std::clamp(model_.predict(pair_features(query, key)), 0.0, 1.0);
}

namespace {
void check_reward(double reward) {
  if (!(reward >= 0.0 && reward <= 1.0)) {
    throw std::invalid_argument("reward must lie in [0, 1], got " + std::to_string(reward));
  }
}
}  // namespace

void ScorerModel::update(const SparseVector& query, const SparseVector& key, double reward) {
  check_reward(reward);
  if (mode_ == ScorerMode::kEuclidean) return;
  const SparseVector phi = pair_features(query, key);
  model_.step(phi, model_.predict(phi) - reward);
}

double ScorerModel::loss(const SparseVector& query, const SparseVector& key,
                         double reward) const {
  const double residual = model_.predict(pair_features(query, key)) - reward;
  return 0.5 * residual * residual;
}

SparseVector ScorerModel::gradient(const SparseVector& query, const SparseVector& key,
                                   double reward) const {
  const SparseVector phi = pair_features(query, key);
  const double residual = model_.predict(phi) - reward;
  std::vector<FeatureEntry> g;
  g.reserve(phi.size());
  for (const auto& e : phi.entries()) g.push_back({e.index, residual * e.value});
  return SparseVector(std::move(g));
}

}  // namespace cmt
