#include "cmt/synthetic.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>
#include <string>

namespace cmt::synthetic {

namespace {

using Rng = std::mt19937_64;
using Point = std::vector<double>;

Point gaussian_point(Rng& rng, std::size_t dims, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Point p(dims);
  for (double& v : p) v = normal(rng);
  return p;
}

Point perturb(Rng& rng, const Point& center, double noise) {
  std::normal_distribution<double> normal(0.0, noise);
  Point p = center;
  for (double& v : p) v += normal(rng);
  return p;
}

std::vector<NamedFeature> tokens(const Point& p, const char* prefix) {
  std::vector<NamedFeature> out;
  out.reserve(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] != 0.0) out.push_back({prefix + std::to_string(j), p[j]});
  }
  return out;
}

LabeledLine labeled(LineMode mode, std::vector<Label> labels, const Point& p, int bits) {
  LabeledLine line;
  line.mode = mode;
  line.labels = std::move(labels);
  line.right_tokens = tokens(p, "f");
  line.right_block = hash_features(line.right_tokens, bits);
  return line;
}

void check_dims(std::size_t dims) {
  if (dims == 0) throw std::invalid_argument("synthetic: dims must be >= 1");
}

}  // namespace

LineSplit multiclass_lines(const ClusterSpec& spec) {
  check_dims(spec.dims);
  Rng rng(spec.seed);
  LineSplit out;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const Point center = gaussian_point(rng, spec.dims, spec.center_scale);
    const auto label = static_cast<Label>(c);
    for (std::size_t i = 0; i < spec.train_per_class; ++i) {
      out.train.push_back(labeled(LineMode::kMulticlass, {label},
                                  perturb(rng, center, spec.noise), spec.hash_bits));
    }
    for (std::size_t i = 0; i < spec.test_per_class; ++i) {
      out.test.push_back(labeled(LineMode::kMulticlass, {label},
                                 perturb(rng, center, spec.noise), spec.hash_bits));
    }
  }
  std::shuffle(out.train.begin(), out.train.end(), rng);
  std::shuffle(out.test.begin(), out.test.end(), rng);
  return out;
}

LineSplit multilabel_lines(const MultilabelSpec& spec) {
  check_dims(spec.dims);
  if (spec.labels == 0 || spec.clusters == 0 || spec.max_labels_per_cluster == 0) {
    throw std::invalid_argument("synthetic: labels, clusters and max labels must be >= 1");
  }
  Rng rng(spec.seed);
  std::vector<Point> centers;
  std::vector<std::vector<Label>> label_sets;
  std::uniform_int_distribution<std::size_t> how_many(1, spec.max_labels_per_cluster);
  std::uniform_int_distribution<Label> which(0, static_cast<Label>(spec.labels) - 1);
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    centers.push_back(gaussian_point(rng, spec.dims, 1.0));
    std::vector<Label> ls;
    const std::size_t n = how_many(rng);
    for (std::size_t i = 0; i < n; ++i) ls.push_back(which(rng));
    label_sets.push_back(make_label_set(std::move(ls)));
  }
  std::uniform_int_distribution<std::size_t> cluster(0, spec.clusters - 1);
  auto draw = [&](std::size_t count, std::vector<LabeledLine>& sink) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t c = cluster(rng);
      sink.push_back(labeled(LineMode::kMultilabel, label_sets[c],
                             perturb(rng, centers[c], spec.noise), spec.hash_bits));
    }
  };
  LineSplit out;
  draw(spec.train_examples, out.train);
  draw(spec.test_examples, out.test);
  return out;
}

LineSplit retrieval_lines(const RetrievalSpec& spec) {
  check_dims(spec.dims);
  if (spec.clusters == 0) throw std::invalid_argument("synthetic: clusters must be >= 1");
  Rng rng(spec.seed);
  std::vector<Point> captions;
  std::vector<Point> images;
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    captions.push_back(gaussian_point(rng, spec.dims, 1.0));
    images.push_back(gaussian_point(rng, spec.dims, 1.0));
  }
  std::uniform_int_distribution<std::size_t> cluster(0, spec.clusters - 1);
  auto draw = [&](std::size_t count, std::vector<LabeledLine>& sink) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t c = cluster(rng);
      LabeledLine line;
      line.mode = LineMode::kRetrieval;
      line.left_tokens = tokens(perturb(rng, captions[c], spec.noise), "f");
      line.right_tokens = tokens(perturb(rng, images[c], spec.noise), "v");
      line.left_block = hash_features(line.left_tokens, spec.hash_bits);
      line.right_block = hash_features(line.right_tokens, spec.hash_bits);
      sink.push_back(std::move(line));
    }
  };
  LineSplit out;
  draw(spec.train_pairs, out.train);
  draw(spec.test_pairs, out.test);
  return out;
}

std::vector<MulticlassExample> to_multiclass(std::span<const LabeledLine> lines) {
  std::vector<MulticlassExample> out;
  out.reserve(lines.size());
  for (const auto& l : lines) {
    if (l.mode != LineMode::kMulticlass || l.labels.size() != 1) {
      throw std::invalid_argument("to_multiclass: not a multiclass line");
    }
    out.push_back({l.right_block, l.labels.front()});
  }
  return out;
}

std::vector<MultilabelExample> to_multilabel(std::span<const LabeledLine> lines) {
  std::vector<MultilabelExample> out;
  out.reserve(lines.size());
  for (const auto& l : lines) {
    if (l.mode != LineMode::kMultilabel) {
      throw std::invalid_argument("to_multilabel: not a multilabel line");
    }
    out.push_back({l.right_block, make_label_set(l.labels)});
  }
  return out;
}

std::vector<RetrievalPair> to_retrieval(std::span<const LabeledLine> lines) {
  std::vector<RetrievalPair> out;
  out.reserve(lines.size());
  for (const auto& l : lines) {
    if (l.mode != LineMode::kRetrieval) {
      throw std::invalid_argument("to_retrieval: not a retrieval line");
    }
    out.push_back({l.left_block, l.right_block});
  }
  return out;
}

}  // namespace cmt::synthetic
