#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sys/wait.h>

#include "cmt/harness.hpp"
#include "cmt/synthetic.hpp"

using namespace cmt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cmt_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

synthetic::LineSplit small_multiclass(std::uint64_t seed = 1) {
  synthetic::ClusterSpec spec;
  spec.classes = 30;
  spec.seed = seed;
  return synthetic::multiclass_lines(spec);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CMT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("RunConfig validation") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.alpha == 0.9);
  CHECK(c.leaf_multiplier == 4.0);
  CHECK(c.reroutes == 5);
  CHECK(c.epsilon == 0.1);
  CHECK(c.hash_bits == 20);
  c.alpha = 0.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = RunConfig{};
  c.hash_bits = 32;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = RunConfig{};
  c.epsilon = -0.1;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("metrics TSV") {
  MetricsLog log("r1");
  log.add("p", 3, "m", 0.25);
  log.add("p", 4, "m", 0.5);
  CHECK(log.to_tsv() == "run_id\tphase\tstep\tmetric\tvalue\nr1\tp\t3\tm\t0.25\nr1\tp\t4\tm\t0.5\n");
  CHECK(log.find("p", "m") == 0.5);
  CHECK_FALSE(log.find("p", "x").has_value());

  MetricsLog timed("r2", true);
  timed.add("p", 0, "m", 1.0);
  CHECK(timed.to_tsv().rfind("run_id\tphase\tstep\tmetric\tvalue\twall_ms\n", 0) == 0);
}

TEST_CASE("dataset I/O") {
  TempDir dir;
  const auto split = small_multiclass();
  write_dataset(dir.file("d.txt"), split.train);
  const auto back = read_dataset(dir.file("d.txt"), LineMode::kMulticlass, 20);
  REQUIRE(back.size() == split.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].right_block == split.train[i].right_block);

  spit(dir.file("bad.txt"), "1 | a\n\n2 | b\n3 b\n");
  try {
    (void)read_dataset(dir.file("bad.txt"), LineMode::kMulticlass, 20);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
  CHECK_THROWS_AS((void)read_dataset(dir.file("missing.txt"), LineMode::kMulticlass, 20), DataError);
}

TEST_CASE("training is deterministic") {
  const auto split = small_multiclass(2);
  RunConfig c;
  c.seed = 9;
  MetricsLog a("run"), b("run");
  Model ma = train_model(c, split.train, a);
  Model mb = train_model(c, split.train, b);
  CHECK(a.to_tsv() == b.to_tsv());
  CHECK(snapshot_encode(ma) == snapshot_encode(mb));
}

TEST_CASE("unsupervised only build") {
  const auto split = small_multiclass();
  RunConfig c;
  c.passes_sup = 0;
  MetricsLog log("run");
  Model m = train_model(c, split.train, log);
  CHECK(m.tree.size() == split.train.size());
  CHECK(m.tree.scorer().model().parameters().empty());
  CHECK(log.find("unsup_pass_1", "examples") == static_cast<double>(split.train.size()));
  CHECK_FALSE(log.find("sup_pass_2", "examples").has_value());
}

TEST_CASE("empty data") {
  RunConfig c;
  MetricsLog log("run");
  Model m = train_model(c, {}, log);
  CHECK(m.tree.size() == 0);
  CHECK(log.find("unsup_pass_1", "examples") == 0.0);
  const Model back = snapshot_decode(snapshot_encode(m));
  CHECK(back.tree.size() == 0);
  CHECK(back.tree.check_invariants().empty());

  Model copy = snapshot_decode(snapshot_encode(m));
  const Evaluation ev = evaluate_model(copy, {}, log);
  CHECK(ev.examples == 0);
  CHECK(ev.metric == 0.0);
  CHECK(ev.mean_ms == 0.0);
}

TEST_CASE("training-set error equals self-consistency error") {
  auto lines = small_multiclass(3).train;
  RunConfig c;
  c.scorer = ScorerMode::kEuclidean;
  MetricsLog log("run");
  {
    // Shared labels: another memory of the same class also counts as correct.
    Model m = train_model(c, lines, log);
    const double sc = measure_self_consistency(m.tree, m.tree.stored_memories());
    const Evaluation ev = evaluate_model(m, lines, log);
    CHECK(ev.metric / 100.0 <= sc + 1e-12);
    CHECK(ev.entropy_reduction.has_value());
  }
  // Unique labels: a wrong memory is always a wrong label.
  for (std::size_t i = 0; i < lines.size(); ++i) lines[i].labels = {static_cast<std::int64_t>(i + 1)};
  Model m = train_model(c, lines, log);
  const double sc = measure_self_consistency(m.tree, m.tree.stored_memories());
  const Evaluation ev = evaluate_model(m, lines, log);
  CHECK(ev.metric / 100.0 == doctest::Approx(sc).epsilon(1e-12));
  CHECK(ev.p99_ms >= 0.0);
}

TEST_CASE("snapshot round trip") {
  for (LineMode mode : {LineMode::kMulticlass, LineMode::kMultilabel, LineMode::kRetrieval}) {
    CAPTURE(to_string(mode));
    synthetic::LineSplit split;
    if (mode == LineMode::kMulticlass) split = small_multiclass(4);
    if (mode == LineMode::kMultilabel) {
      synthetic::MultilabelSpec spec;
      spec.train_examples = 300;
      split = synthetic::multilabel_lines(spec);
    }
    if (mode == LineMode::kRetrieval) {
      synthetic::RetrievalSpec spec;
      spec.train_pairs = 300;
      split = synthetic::retrieval_lines(spec);
    }
    RunConfig c;
    c.mode = mode;
    c.passes_sup = 2;
    MetricsLog log("run");
    Model m = train_model(c, split.train, log);
    const std::string bytes = snapshot_encode(m);
    Model back = snapshot_decode(bytes);
    CHECK(snapshot_encode(back) == bytes);
    CHECK(back.tree.check_invariants().empty());
    CHECK(back.oas.label_count() == m.oas.label_count());

    std::mt19937_64 rng(5);
    const auto memories = m.tree.stored_memories();
    for (std::size_t i = 0; i < 300; ++i) {
      const SparseVector& x = memories[rng() % memories.size()].key();
      CHECK(back.tree.query_exploit(x, 3).memories == m.tree.query_exploit(x, 3).memories);
    }
    MetricsLog la("t"), lb("t");
    const Evaluation ea = evaluate_model(m, split.test, la);
    const Evaluation eb = evaluate_model(back, split.test, lb);
    CHECK(ea.metric == eb.metric);
    CHECK(la.to_tsv() == lb.to_tsv());
  }
}

TEST_CASE("snapshot corruption") {
  RunConfig c;
  MetricsLog log("run");
  const Model m = train_model(c, small_multiclass(6).train, log);
  const std::string bytes = snapshot_encode(m);

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(cut);
    CHECK_THROWS_AS((void)snapshot_decode(std::string_view(bytes).substr(0, cut)), SnapshotError);
  }
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS((void)snapshot_decode(bad_magic), SnapshotError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_WITH_AS((void)snapshot_decode(bad_version), doctest::Contains("version"), SnapshotError);
  CHECK_THROWS_AS((void)snapshot_decode(bytes + "x"), SnapshotError);
  CHECK_THROWS_AS((void)snapshot_load("/nonexistent/snapshot.bin"), SnapshotError);

  // Flipping bytes never crashes: the decoder either rejects or yields a
  // healthy tree.
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    std::string mutated = bytes;
    mutated[12 + rng() % (mutated.size() - 12)] ^= static_cast<char>(1 + rng() % 255);
    try {
      const Model back = snapshot_decode(mutated);
      CHECK(back.tree.check_invariants().empty());
    } catch (const SnapshotError&) {
    }
  }
}

TEST_CASE("cmd_train and cmd_test") {
  TempDir dir;
  const auto split = small_multiclass(8);
  write_dataset(dir.file("train.txt"), split.train);
  write_dataset(dir.file("test.txt"), split.test);

  RunConfig c;
  c.data = dir.file("train.txt");
  c.snapshot = dir.file("s.bin");
  c.metrics = dir.file("m1.tsv");
  MetricsLog l1("run");
  (void)cmd_train(c, l1);
  c.metrics = dir.file("m2.tsv");
  MetricsLog l2("run");
  (void)cmd_train(c, l2);
  CHECK(slurp(dir.file("m1.tsv")) == slurp(dir.file("m2.tsv")));

  RunConfig t;
  t.data = dir.file("test.txt");
  t.snapshot = dir.file("s.bin");
  t.metrics = dir.file("t1.tsv");
  MetricsLog l3("test");
  const Evaluation e1 = cmd_test(t, l3);
  t.metrics = dir.file("t2.tsv");
  MetricsLog l4("test");
  const Evaluation e2 = cmd_test(t, l4);
  CHECK(e1.metric == e2.metric);
  CHECK(slurp(dir.file("t1.tsv")) == slurp(dir.file("t2.tsv")));
  CHECK(e1.examples == split.test.size());

  t.mode = LineMode::kRetrieval;
  MetricsLog l5("test");
  CHECK_THROWS_AS((void)cmd_test(t, l5), UsageError);
}

TEST_CASE("cmd_ablate") {
  TempDir dir;
  const auto split = small_multiclass(9);
  write_dataset(dir.file("train.txt"), split.train);
  RunConfig c;
  c.data = dir.file("train.txt");
  c.scorer = ScorerMode::kEuclidean;

  const std::vector<double> ds{0, 1, 5, 10};
  const auto rows = cmd_ablate(c, AblateParam::kReroutes, ds);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].value == ds[i]);
    CHECK(rows[i].memories == split.train.size());
    CHECK(rows[i].self_consistency_error >= 0.0);
  }
  const std::string table = render_ablation(AblateParam::kReroutes, rows);
  CHECK(table.find("self_consistency_err") != std::string::npos);
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);

  CHECK_THROWS_AS((void)cmd_ablate(c, AblateParam::kReroutes, {}), UsageError);

  const std::vector<double> shots{1};
  const auto one_shot = cmd_ablate(c, AblateParam::kShots, shots);
  CHECK(one_shot.front().train_examples == 30);

  // A single value equals one train + test run.
  const std::vector<double> single{5};
  const auto row = cmd_ablate(c, AblateParam::kReroutes, single).front();
  MetricsLog log("x");
  Model m = train_model(c, split.train, log);
  CHECK(row.test_metric == evaluate_model(m, split.train, log).metric);

  CHECK(parse_ablate_param("c") == AblateParam::kLeafMultiplier);
  CHECK_THROWS_AS((void)parse_ablate_param("z"), UsageError);
}

TEST_CASE("cmd_bench") {
  RunConfig c;
  const std::vector<std::size_t> sizes{100, 1000};
  const auto rows = cmd_bench(c, sizes);
  REQUIRE(rows.size() == 2);
  for (const BenchRow& r : rows) {
    CHECK(r.max_leaf <= r.capacity);
    CHECK(r.query_ms > 0.0);
    if (std::isfinite(r.k_bound)) CHECK(static_cast<double>(r.max_depth) <= r.depth_limit);
  }
  CHECK(rows[1].n == 1000);
  CHECK(render_bench(rows).find("K_bound") != std::string::npos);
}

TEST_CASE("command line exit codes") {
  TempDir dir;
  const auto split = small_multiclass(10);
  write_dataset(dir.file("train.txt"), split.train);
  spit(dir.file("bad.txt"), "1 | a\nnot a line\n");
  spit(dir.file("junk.bin"), "garbage");
  const std::string train = "train --data " + dir.file("train.txt") + " --snapshot " + dir.file("s.bin");

  CHECK(run_cli(train) == 0);
  CHECK(run_cli("test --data " + dir.file("train.txt") + " --snapshot " + dir.file("s.bin")) == 0);
  CHECK(run_cli("train --alpha 2 --data " + dir.file("train.txt")) == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("train --data " + dir.file("bad.txt")) == 3);
  CHECK(run_cli("train --data " + dir.file("missing.txt")) == 3);
  CHECK(run_cli("test --data " + dir.file("train.txt") + " --snapshot " + dir.file("junk.bin")) == 4);
}
