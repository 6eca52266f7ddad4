#pragma once

// Seeded synthetic datasets. Every generator draws Gaussian cluster centers
// over named dense features ("f0".."f{dims-1}"; retrieval values use "v*"),
// perturbs them with isotropic Gaussian noise, and hashes the names into
// sparse vectors. Output is shuffled with the same seed.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cmt/features.hpp"
#include "cmt/tasks.hpp"

namespace cmt::synthetic {

struct ClusterSpec {
  std::size_t classes = 100;
  std::size_t train_per_class = 3;
  std::size_t test_per_class = 1;
  std::size_t dims = 32;
  double center_scale = 1.0;  // centers ~ N(0, center_scale^2) per dimension
  double noise = 0.25;        // examples = center + N(0, noise^2) per dimension
  std::uint64_t seed = 1;
  int hash_bits = kDefaultHashBits;
};

struct LineSplit {
  std::vector<LabeledLine> train;
  std::vector<LabeledLine> test;
};

/// Class c has train_per_class training and test_per_class test lines.
[[nodiscard]] LineSplit multiclass_lines(const ClusterSpec& spec);

struct MultilabelSpec {
  std::size_t train_examples = 1000;
  std::size_t test_examples = 200;
  std::size_t labels = 200;
  std::size_t clusters = 50;
  std::size_t max_labels_per_cluster = 3;
  std::size_t dims = 32;
  double noise = 0.3;
  std::uint64_t seed = 1;
  int hash_bits = kDefaultHashBits;
};

/// Each cluster owns 1..max_labels_per_cluster labels drawn from [0, labels).
[[nodiscard]] LineSplit multilabel_lines(const MultilabelSpec& spec);

struct RetrievalSpec {
  std::size_t train_pairs = 1000;
  std::size_t test_pairs = 200;
  std::size_t clusters = 50;
  std::size_t dims = 32;
  double noise = 0.3;
  std::uint64_t seed = 1;
  int hash_bits = kDefaultHashBits;
};

/// Caption (query) and image (value) share a cluster but not a feature space.
[[nodiscard]] LineSplit retrieval_lines(const RetrievalSpec& spec);

[[nodiscard]] std::vector<MulticlassExample> to_multiclass(std::span<const LabeledLine> lines);
[[nodiscard]] std::vector<MultilabelExample> to_multilabel(std::span<const LabeledLine> lines);
[[nodiscard]] std::vector<RetrievalPair> to_retrieval(std::span<const LabeledLine> lines);

}  // namespace cmt::synthetic
