#pragma once

// Operational surface: run configuration, dataset files, metrics output and
// the train / test / ablate / bench drivers behind the `cmt` command line.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmt/features.hpp"
#include "cmt/tasks.hpp"
#include "cmt/tree.hpp"

namespace cmt {

enum class ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kSnapshot = 4 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable or malformed dataset (parse errors keep their line number).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Defaults follow the few-shot profile: alpha 0.9, c 4, d 5, one
/// unsupervised pass and one supervised pass.
struct RunConfig {
  LineMode mode = LineMode::kMulticlass;
  double alpha = 0.9;
  double leaf_multiplier = 4.0;
  int reroutes = 5;
  double epsilon = 0.1;
  std::size_t k = 1;
  int passes_unsup = 1;
  int passes_sup = 1;
  int hash_bits = kDefaultHashBits;
  std::uint64_t seed = 1;
  ScorerMode scorer = ScorerMode::kLearned;
  bool update_on_exploit = false;
  bool replace_duplicates = false;

  std::string data;
  std::string test_data;
  std::string snapshot;
  std::string metrics;
  bool timing = false;  // include wall-clock columns in the metrics file

  /// Throws UsageError naming the first out-of-range field.
  void validate() const;
  [[nodiscard]] TreeParams tree_params() const;
};

// --- metrics ----------------------------------------------------------------

struct MetricRecord {
  std::string run_id;
  std::string phase;
  std::size_t step = 0;
  std::string metric;
  double value = 0.0;
  double wall_ms = 0.0;
};

/// Append-only metric rows written as UTF-8 TSV with a header. The wall_ms
/// column is only emitted with timing enabled so that default output is
/// byte-for-byte reproducible.
class MetricsLog {
 public:
  explicit MetricsLog(std::string run_id, bool timing = false);

  void add(std::string phase, std::size_t step, std::string metric, double value);
  [[nodiscard]] const std::vector<MetricRecord>& records() const noexcept { return records_; }
  [[nodiscard]] std::optional<double> find(std::string_view phase, std::string_view metric) const;
  [[nodiscard]] bool timing() const noexcept { return timing_; }

  [[nodiscard]] std::string to_tsv() const;
  void write(const std::string& path) const;

 private:
  std::string run_id_;
  bool timing_;
  std::chrono::steady_clock::time_point start_;
  std::vector<MetricRecord> records_;
};

// --- datasets ---------------------------------------------------------------

/// Reads every non-empty line. Throws DataError carrying the 1-based line
/// number of the first malformed line.
[[nodiscard]] std::vector<LabeledLine> read_dataset(const std::string& path, LineMode mode,
                                                    int hash_bits);
void write_dataset(const std::string& path, std::span<const LabeledLine> lines);

// --- model + snapshot -------------------------------------------------------

struct Model {
  RunConfig config;
  Tree tree;
  OASModel oas;
};

inline constexpr std::uint32_t kSnapshotVersion = 1;

[[nodiscard]] std::string snapshot_encode(const Model& model);
/// Throws SnapshotError on bad magic, version mismatch, truncation, or a
/// tree that fails check_invariants().
[[nodiscard]] Model snapshot_decode(std::string_view bytes);

void snapshot_save(const Model& model, const std::string& path);
[[nodiscard]] Model snapshot_load(const std::string& path);

// --- drivers ----------------------------------------------------------------

/// passes_unsup insert-only passes, then passes_sup query/update/insert
/// passes. Per-pass metrics go to `log`.
[[nodiscard]] Model train_model(const RunConfig& config, std::span<const LabeledLine> lines,
                                MetricsLog& log);

struct Evaluation {
  std::size_t examples = 0;
  std::string metric_name;  // error_pct | mean_hamming_loss | mean_cosine
  double metric = 0.0;
  double baseline = 0.0;  // constant predictor / empty predictor / linear-scan NN
  std::optional<double> entropy_reduction;
  double mean_ms = 0.0;
  double p99_ms = 0.0;
};

/// Epsilon = 0 evaluation. The tree is not modified.
[[nodiscard]] Evaluation evaluate_model(Model& model, std::span<const LabeledLine> lines,
                                        MetricsLog& log);

Model cmd_train(const RunConfig& config, MetricsLog& log);
Evaluation cmd_test(const RunConfig& config, MetricsLog& log);

enum class AblateParam { kReroutes, kLeafMultiplier, kShots, kPasses };
[[nodiscard]] AblateParam parse_ablate_param(std::string_view text);
[[nodiscard]] std::string_view to_string(AblateParam param) noexcept;

struct AblationRow {
  double value = 0.0;
  std::size_t train_examples = 0;
  std::size_t memories = 0;
  double self_consistency_error = 0.0;
  std::string metric_name;
  double test_metric = 0.0;
  double test_ms = 0.0;
};

/// One full train + test per value. Tests on config.test_data, or on the
/// training data when that is empty.
[[nodiscard]] std::vector<AblationRow> cmd_ablate(const RunConfig& config, AblateParam param,
                                                  std::span<const double> values);
[[nodiscard]] std::string render_ablation(AblateParam param, std::span<const AblationRow> rows);

struct BenchRow {
  std::size_t n = 0;
  double insert_ms = 0.0;
  double query_ms = 0.0;
  std::size_t max_depth = 0;
  std::size_t max_leaf = 0;
  std::size_t capacity = 0;
  double progressive_error = 0.0;  // max over routers
  double k_bound = 0.0;            // infinity when the bound is vacuous
  double depth_limit = 0.0;        // k_bound * ln(n) + ceil(log2(capacity))
  double mean_progressive_error = 0.0;  // all router mistakes / all router updates
};

/// Builds a synthetic clustered store of n memories per size and times
/// inserts and epsilon = 0 queries.
[[nodiscard]] std::vector<BenchRow> cmd_bench(const RunConfig& config,
                                              std::span<const std::size_t> sizes);
[[nodiscard]] std::string render_bench(std::span<const BenchRow> rows);

}  // namespace cmt
