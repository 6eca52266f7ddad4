#include "cmt/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "cmt/synthetic.hpp"

namespace cmt {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return format_real(v);
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
  return samples[std::clamp<std::size_t>(rank, 1, samples.size()) - 1];
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string run_id_for(std::string_view command, const RunConfig& c) {
  return std::string(command) + "-" + std::string(to_string(c.mode)) + "-s" +
         std::to_string(c.seed);
}

template <class Fn>
auto with_line(std::size_t index, Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw DataError("line " + std::to_string(index + 1) + ": " + e.what());
  }
}

// Converts every line, reporting the 1-based line of the first bad one.
template <class Example, class Convert>
std::vector<Example> convert_lines(std::span<const LabeledLine> lines, Convert convert) {
  std::vector<Example> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out.push_back(with_line(i, [&] { return convert(lines.subspan(i, 1)).front(); }));
  }
  return out;
}

void record_tree(MetricsLog& log, const std::string& phase, std::size_t step, const Tree& tree) {
  const TreeStats s = tree.stats();
  log.add(phase, step, "memories", static_cast<double>(s.memories));
  log.add(phase, step, "leaves", static_cast<double>(s.leaves));
  log.add(phase, step, "max_depth", static_cast<double>(s.max_depth));
  log.add(phase, step, "self_consistency_error",
          measure_self_consistency(tree, tree.stored_memories()));
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw UsageError("--alpha must lie in (0, 1]");
  if (!(leaf_multiplier > 0.0) || !std::isfinite(leaf_multiplier)) {
    throw UsageError("--leaf-mult must be finite and > 0");
  }
  if (reroutes < 0) throw UsageError("--reroutes must be >= 0");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw UsageError("--epsilon must lie in [0, 1]");
  if (k < 1) throw UsageError("--k must be >= 1");
  if (passes_unsup < 0 || passes_sup < 0) throw UsageError("pass counts must be >= 0");
  if (hash_bits < 1 || hash_bits > 31) throw UsageError("--hash-bits must lie in [1, 31]");
}

TreeParams RunConfig::tree_params() const {
  TreeParams p;
  p.alpha = alpha;
  p.leaf_multiplier = leaf_multiplier;
  p.reroutes = reroutes;
  p.scorer = scorer;
  p.update_scorer_on_exploit = update_on_exploit;
  p.duplicates = replace_duplicates ? DuplicatePolicy::kReplace : DuplicatePolicy::kError;
  p.seed = seed;
  return p;
}

// ---------------------------------------------------------------------------
// MetricsLog

MetricsLog::MetricsLog(std::string run_id, bool timing)
    : run_id_(std::move(run_id)), timing_(timing), start_(Clock::now()) {}

void MetricsLog::add(std::string phase, std::size_t step, std::string metric, double value) {
  records_.push_back({run_id_, std::move(phase), step, std::move(metric), value,
                      timing_ ? elapsed_ms(start_) : 0.0});
}

std::optional<double> MetricsLog::find(std::string_view phase, std::string_view metric) const {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->phase == phase && it->metric == metric) return it->value;
  }
  return std::nullopt;
}

std::string MetricsLog::to_tsv() const {
  std::string out = timing_ ? "run_id\tphase\tstep\tmetric\tvalue\twall_ms\n"
                            : "run_id\tphase\tstep\tmetric\tvalue\n";
  for (const MetricRecord& r : records_) {
    out += r.run_id + '\t' + r.phase + '\t' + std::to_string(r.step) + '\t' + r.metric + '\t' +
           format_real(r.value);
    if (timing_) out += '\t' + fixed(r.wall_ms, 3);
    out += '\n';
  }
  return out;
}

void MetricsLog::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open metrics file for writing: " + path);
  out << to_tsv();
  if (!out) throw DataError("failed writing metrics file: " + path);
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<LabeledLine> read_dataset(const std::string& path, LineMode mode, int hash_bits) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file: " + path);
  std::vector<LabeledLine> lines;
  std::string text;
  std::size_t number = 0;
  while (std::getline(in, text)) {
    ++number;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    try {
      lines.push_back(parse_line(text, mode, hash_bits, number));
    } catch (const ParseError& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  return lines;
}

void write_dataset(const std::string& path, std::span<const LabeledLine> lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open data file for writing: " + path);
  for (const LabeledLine& l : lines) out << render_line(l) << '\n';
  if (!out) throw DataError("failed writing data file: " + path);
}

// ---------------------------------------------------------------------------
// Training

Model train_model(const RunConfig& config, std::span<const LabeledLine> lines, MetricsLog& log) {
  config.validate();
  Model model{config, Tree(config.tree_params()), OASModel{}};
  Tree& tree = model.tree;

  const int total = config.passes_unsup + config.passes_sup;
  for (int pass = 0; pass < total; ++pass) {
    const bool supervised = pass >= config.passes_unsup;
    const StepMode mode = supervised ? StepMode::kOnline : StepMode::kInsertOnly;
    const std::string phase = (supervised ? "sup_pass_" : "unsup_pass_") + std::to_string(pass + 1);

    double progressive = 0.0;
    std::size_t step = 0;
    for (; step < lines.size(); ++step) {
      const LabeledLine& line = lines[step];
      switch (config.mode) {
        case LineMode::kMulticlass: {
          const auto ex = with_line(step, [&] { return synthetic::to_multiclass({&line, 1}); });
          progressive += mc_step(tree, ex.front(), config.epsilon, mode).correct ? 1.0 : 0.0;
          break;
        }
        case LineMode::kMultilabel: {
          const auto ex = with_line(step, [&] { return synthetic::to_multilabel({&line, 1}); });
          const OasOutcome o = oas_step(tree, model.oas, ex.front(), mode, config.epsilon);
          progressive += static_cast<double>(hamming_loss(o.predicted, ex.front().labels));
          break;
        }
        case LineMode::kRetrieval: {
          const auto ex = with_line(step, [&] { return synthetic::to_retrieval({&line, 1}); });
          const RetrievalOutcome o =
              with_line(step, [&] { return retrieval_step(tree, ex.front(), mode, config.epsilon); });
          progressive += o.cosine;
          break;
        }
      }
    }

    log.add(phase, step, "examples", static_cast<double>(step));
    if (supervised) {
      const char* name = config.mode == LineMode::kMulticlass   ? "progressive_accuracy"
                         : config.mode == LineMode::kMultilabel ? "progressive_hamming_loss"
                                                                : "progressive_cosine";
      log.add(phase, step, name, step ? progressive / static_cast<double>(step) : 0.0);
    }
    record_tree(log, phase, step, tree);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

Evaluation evaluate_model(Model& model, std::span<const LabeledLine> lines, MetricsLog& log) {
  const Tree& tree = model.tree;
  const RunConfig& config = model.config;
  Evaluation ev;
  ev.examples = lines.size();
  std::vector<double> latency;
  latency.reserve(lines.size());

  switch (config.mode) {
    case LineMode::kMulticlass: {
      ev.metric_name = "error_pct";
      const auto examples = convert_lines<MulticlassExample>(lines, synthetic::to_multiclass);
      std::size_t correct = 0;
      for (const MulticlassExample& ex : examples) {
        const auto t0 = Clock::now();
        const QueryResult q = tree.query_exploit(ex.x, 1);
        latency.push_back(elapsed_ms(t0));
        if (!q.memories.empty() && label_of(q.memories.front()) == ex.label) ++correct;
      }
      std::vector<MulticlassExample> stored;
      for (const Memory& z : tree.stored_memories()) stored.push_back({z.key(), label_of(z)});
      const double acc = examples.empty() ? 0.0 : static_cast<double>(correct) / examples.size();
      const double base = constant_predictor_accuracy(stored, examples);
      ev.metric = examples.empty() ? 0.0 : 100.0 * (1.0 - acc);
      ev.baseline = examples.empty() ? 0.0 : 100.0 * (1.0 - base);
      if (acc > 0.0 && base > 0.0) ev.entropy_reduction = entropy_reduction(acc, base);
      break;
    }
    case LineMode::kMultilabel: {
      ev.metric_name = "mean_hamming_loss";
      const auto examples = convert_lines<MultilabelExample>(lines, synthetic::to_multilabel);
      double loss = 0.0;
      double empty_loss = 0.0;
      for (const MultilabelExample& ex : examples) {
        const auto t0 = Clock::now();
        const QueryResult q = tree.query_exploit(ex.x, tree.capacity());
        std::vector<Label> pooled;
        for (const Memory& z : q.memories) {
          const LabelSet ls = labels_of(z);
          pooled.insert(pooled.end(), ls.begin(), ls.end());
        }
        const LabelSet predicted = model.oas.predict(make_label_set(std::move(pooled)), ex.x);
        latency.push_back(elapsed_ms(t0));
        loss += static_cast<double>(hamming_loss(predicted, ex.labels));
        empty_loss += static_cast<double>(ex.labels.size());
      }
      const double n = static_cast<double>(std::max<std::size_t>(examples.size(), 1));
      ev.metric = loss / n;
      ev.baseline = empty_loss / n;
      break;
    }
    case LineMode::kRetrieval: {
      ev.metric_name = "mean_cosine";
      const auto pairs = convert_lines<RetrievalPair>(lines, synthetic::to_retrieval);
      const std::vector<Memory> store = tree.stored_memories();
      double total = 0.0;
      double nn_total = 0.0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const RetrievalPair& p = pairs[i];
        if (p.value.norm() == 0.0) {
          throw DataError("line " + std::to_string(i + 1) + ": retrieval value vector is zero");
        }
        const auto t0 = Clock::now();
        const QueryResult q = tree.query_exploit(p.x, 1);
        latency.push_back(elapsed_ms(t0));
        if (!q.memories.empty()) {
          total += cosine(std::get<SparseVector>(q.memories.front().value()), p.value);
        }
        const auto nn = nn_linear_scan(store, p.x, 1);
        if (!nn.empty()) nn_total += cosine(std::get<SparseVector>(nn.front().value()), p.value);
      }
      const double n = static_cast<double>(std::max<std::size_t>(pairs.size(), 1));
      ev.metric = total / n;
      ev.baseline = nn_total / n;
      break;
    }
  }

  ev.mean_ms = mean(latency);
  ev.p99_ms = percentile(latency, 0.99);

  log.add("test", ev.examples, "examples", static_cast<double>(ev.examples));
  log.add("test", ev.examples, ev.metric_name, ev.metric);
  log.add("test", ev.examples, "baseline_" + ev.metric_name, ev.baseline);
  if (ev.entropy_reduction) log.add("test", ev.examples, "entropy_reduction_bits", *ev.entropy_reduction);
  if (log.timing()) {
    log.add("test", ev.examples, "mean_ms", ev.mean_ms);
    log.add("test", ev.examples, "p99_ms", ev.p99_ms);
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Commands

Model cmd_train(const RunConfig& config, MetricsLog& log) {
  config.validate();
  if (config.data.empty()) throw UsageError("train requires --data");
  const auto lines = read_dataset(config.data, config.mode, config.hash_bits);
  Model model = train_model(config, lines, log);
  if (!config.snapshot.empty()) snapshot_save(model, config.snapshot);
  if (!config.metrics.empty()) log.write(config.metrics);
  return model;
}

Evaluation cmd_test(const RunConfig& config, MetricsLog& log) {
  if (config.snapshot.empty()) throw UsageError("test requires --snapshot");
  if (config.data.empty()) throw UsageError("test requires --data");
  Model model = snapshot_load(config.snapshot);
  if (model.config.mode != config.mode) {
    throw UsageError("snapshot was trained in " + std::string(to_string(model.config.mode)) +
                     " mode, not " + std::string(to_string(config.mode)));
  }
  const auto lines = read_dataset(config.data, model.config.mode, model.config.hash_bits);
  Evaluation ev = evaluate_model(model, lines, log);
  if (!config.metrics.empty()) log.write(config.metrics);
  return ev;
}

AblateParam parse_ablate_param(std::string_view text) {
  if (text == "d" || text == "reroutes") return AblateParam::kReroutes;
  if (text == "c" || text == "leaf-mult") return AblateParam::kLeafMultiplier;
  if (text == "shots") return AblateParam::kShots;
  if (text == "passes") return AblateParam::kPasses;
  throw UsageError("unknown ablation parameter '" + std::string(text) +
                   "' (expected d, c, shots or passes)");
}

std::string_view to_string(AblateParam param) noexcept {
  switch (param) {
    case AblateParam::kReroutes: return "d";
    case AblateParam::kLeafMultiplier: return "c";
    case AblateParam::kShots: return "shots";
    case AblateParam::kPasses: return "passes";
  }
  return "?";
}

namespace {

int whole(double v, std::string_view what) {
  if (!(v >= 0.0) || v != std::floor(v) || v > std::numeric_limits<int>::max()) {
    throw UsageError(std::string(what) + " values must be non-negative integers");
  }
  return static_cast<int>(v);
}

// First `shots` lines per label, in file order. Multilabel lines count
// toward every label they carry; retrieval lines are never limited.
std::vector<LabeledLine> limit_shots(std::span<const LabeledLine> lines, int shots) {
  std::map<std::int64_t, int> seen;
  std::vector<LabeledLine> out;
  for (const LabeledLine& l : lines) {
    bool keep = l.labels.empty();
    for (auto label : l.labels) keep = keep || seen[label] < shots;
    if (!keep) continue;
    for (auto label : l.labels) ++seen[label];
    out.push_back(l);
  }
  return out;
}

}  // namespace

std::vector<AblationRow> cmd_ablate(const RunConfig& config, AblateParam param,
                                    std::span<const double> values) {
  if (values.empty()) throw UsageError("ablate requires at least one value");
  config.validate();
  if (config.data.empty()) throw UsageError("ablate requires --data");
  const auto train_lines = read_dataset(config.data, config.mode, config.hash_bits);
  const auto test_lines = config.test_data.empty()
                              ? train_lines
                              : read_dataset(config.test_data, config.mode, config.hash_bits);

  std::vector<AblationRow> rows;
  for (double v : values) {
    RunConfig c = config;
    std::vector<LabeledLine> lines = train_lines;
    switch (param) {
      case AblateParam::kReroutes: c.reroutes = whole(v, "d"); break;
      case AblateParam::kLeafMultiplier: c.leaf_multiplier = v; break;
      case AblateParam::kShots: lines = limit_shots(train_lines, whole(v, "shots")); break;
      case AblateParam::kPasses: c.passes_sup = whole(v, "passes"); break;
    }
    c.validate();
    MetricsLog log(run_id_for("ablate", c));
    Model model = train_model(c, lines, log);
    const Evaluation ev = evaluate_model(model, test_lines, log);

    AblationRow row;
    row.value = v;
    row.train_examples = lines.size();
    row.memories = model.tree.size();
    row.self_consistency_error =
        measure_self_consistency(model.tree, model.tree.stored_memories());
    row.metric_name = ev.metric_name;
    row.test_metric = ev.metric;
    row.test_ms = ev.mean_ms;
    rows.push_back(row);
  }
  return rows;
}

std::string render_ablation(AblateParam param, std::span<const AblationRow> rows) {
  std::ostringstream os;
  const std::string metric = rows.empty() ? "metric" : rows.front().metric_name;
  os << std::left << std::setw(10) << to_string(param) << '\t' << std::setw(10) << "train_n"
     << '\t' << std::setw(10) << "memories" << '\t' << std::setw(22) << "self_consistency_err"
     << '\t' << std::setw(18) << metric << '\t' << "test_ms\n";
  for (const AblationRow& r : rows) {
    os << std::setw(10) << format_real(r.value) << '\t' << std::setw(10) << r.train_examples
       << '\t' << std::setw(10) << r.memories << '\t' << std::setw(22)
       << fixed(r.self_consistency_error, 6) << '\t' << std::setw(18) << fixed(r.test_metric, 6)
       << '\t' << fixed(r.test_ms, 6) << '\n';
  }
  return os.str();
}

std::vector<BenchRow> cmd_bench(const RunConfig& config, std::span<const std::size_t> sizes) {
  config.validate();
  constexpr std::size_t kPerClass = 10;
  constexpr std::size_t kProbes = 2000;

  std::vector<BenchRow> rows;
  for (std::size_t n : sizes) {
    synthetic::ClusterSpec spec;
    spec.classes = std::max<std::size_t>(1, (n + kPerClass - 1) / kPerClass);
    spec.train_per_class = kPerClass;
    spec.test_per_class = 0;
    spec.seed = config.seed;
    spec.hash_bits = config.hash_bits;
    auto lines = synthetic::multiclass_lines(spec).train;
    lines.resize(std::min(lines.size(), n));
    const auto examples = synthetic::to_multiclass(lines);

    Tree tree(config.tree_params());
    const auto t0 = Clock::now();
    for (const MulticlassExample& ex : examples) {
      if (!tree.contains(ex.x)) tree.insert(Memory(ex.x, ex.label));
    }
    const double insert_total = elapsed_ms(t0);

    const std::size_t probes = std::min(kProbes, examples.size());
    std::size_t sink = 0;
    const auto t1 = Clock::now();
    for (std::size_t i = 0; i < probes; ++i) {
      sink += tree.query_exploit(examples[(i * 7919) % examples.size()].x, 1).memories.size();
    }
    const double query_total = elapsed_ms(t1);
    (void)sink;

    const TreeStats s = tree.stats();
    BenchRow row;
    row.n = examples.size();
    row.insert_ms = examples.empty() ? 0.0 : insert_total / static_cast<double>(examples.size());
    row.query_ms = probes ? query_total / static_cast<double>(probes) : 0.0;
    row.max_depth = s.max_depth;
    row.max_leaf = s.max_leaf_size;
    row.capacity = tree.capacity();
    row.progressive_error = s.max_progressive_error.value_or(0.0);
    row.mean_progressive_error =
        s.router_updates ? static_cast<double>(s.router_mistakes) / s.router_updates : 0.0;
    try {
      row.k_bound = balance_bound(row.progressive_error, config.alpha,
                                  static_cast<double>(std::max<std::size_t>(row.n, 1)));
    } catch (const std::domain_error&) {
      row.k_bound = std::numeric_limits<double>::infinity();
    }
    row.depth_limit = row.k_bound * std::log(static_cast<double>(std::max<std::size_t>(row.n, 1))) +
                      std::ceil(std::log2(static_cast<double>(std::max<std::size_t>(row.capacity, 1))));
    rows.push_back(row);
  }
  return rows;
}

std::string render_bench(std::span<const BenchRow> rows) {
  std::ostringstream os;
  os << "n\tinsert_ms\tquery_ms\tmax_depth\tmax_leaf\tcapacity\tprogressive_error\t"
        "mean_progressive_error\tK_bound\tdepth_limit\n";
  for (const BenchRow& r : rows) {
    os << r.n << '\t' << fixed(r.insert_ms, 6) << '\t' << fixed(r.query_ms, 6) << '\t'
       << r.max_depth << '\t' << r.max_leaf << '\t' << r.capacity << '\t'
       << fixed(r.progressive_error, 6) << '\t' << fixed(r.mean_progressive_error, 6) << '\t'
       << fixed(r.k_bound, 4) << '\t' << fixed(r.depth_limit, 2) << '\n';
  }
  return os.str();
}

}  // namespace cmt
