// cmt: train, test, ablate and benchmark contextual memory trees.

#include <cstdio>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "cmt/harness.hpp"
#include "cmt/synthetic.hpp"

namespace {

using cmt::ExitCode;

int code(ExitCode c) { return static_cast<int>(c); }

void add_common(CLI::App* app, cmt::RunConfig& c, std::string& mode, std::string& scorer) {
  app->add_option("--mode", mode, "multiclass | multilabel | retrieval")
      ->check(CLI::IsMember({"multiclass", "multilabel", "retrieval"}));
  app->add_option("--data", c.data, "dataset file");
  app->add_option("--snapshot", c.snapshot, "snapshot path");
  app->add_option("--metrics", c.metrics, "metrics TSV path");
  app->add_option("--alpha", c.alpha, "balance weight in (0, 1]");
  app->add_option("--leaf-mult", c.leaf_multiplier, "leaf capacity multiplier c");
  app->add_option("--reroutes", c.reroutes, "reroutes per insert/update d");
  app->add_option("--epsilon", c.epsilon, "exploration rate");
  app->add_option("--k", c.k, "memories returned per query");
  app->add_option("--passes-unsup", c.passes_unsup, "insert-only passes");
  app->add_option("--passes-sup", c.passes_sup, "supervised passes");
  app->add_option("--hash-bits", c.hash_bits, "feature hash width");
  app->add_option("--scorer", scorer, "learned | euclidean")
      ->check(CLI::IsMember({"learned", "euclidean"}));
  app->add_option("--seed", c.seed, "random seed");
  app->add_flag("--update-on-exploit", c.update_on_exploit, "also update on exploit queries");
  app->add_flag("--replace-duplicates", c.replace_duplicates, "replace memories with equal keys");
  app->add_flag("--timing", c.timing, "add a wall_ms column to metrics");
}

void print_evaluation(const cmt::Evaluation& ev) {
  std::cout << "examples\t" << ev.examples << '\n'
            << ev.metric_name << '\t' << ev.metric << '\n'
            << "baseline_" << ev.metric_name << '\t' << ev.baseline << '\n';
  if (ev.entropy_reduction) std::cout << "entropy_reduction_bits\t" << *ev.entropy_reduction << '\n';
  std::cout << "mean_ms\t" << ev.mean_ms << '\n' << "p99_ms\t" << ev.p99_ms << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextual memory tree"};
  app.require_subcommand(1);

  cmt::RunConfig config;
  std::string mode = "multiclass";
  std::string scorer = "learned";

  auto* train = app.add_subcommand("train", "build a tree from --data and write --snapshot");
  auto* test = app.add_subcommand("test", "evaluate --snapshot on --data at epsilon 0");
  auto* ablate = app.add_subcommand("ablate", "sweep one parameter, train and test per value");
  auto* bench = app.add_subcommand("bench", "time inserts and queries on synthetic stores");
  auto* generate = app.add_subcommand("generate", "write a synthetic train/test split");
  for (auto* sub : {train, test, ablate, bench, generate}) add_common(sub, config, mode, scorer);

  std::string param;
  std::vector<double> values;
  ablate->add_option("--param", param, "d | c | shots | passes")->required();
  ablate->add_option("--values", values, "parameter values")->required()->delimiter(',');
  ablate->add_option("--test-data", config.test_data, "held-out data (defaults to --data)");

  std::vector<std::size_t> sizes{1000, 10000, 100000};
  bench->add_option("--sizes", sizes, "store sizes")->delimiter(',');

  std::string train_out;
  std::string test_out;
  std::size_t classes = 100;
  std::size_t shots = 3;
  generate->add_option("--train-out", train_out, "training file")->required();
  generate->add_option("--test-out", test_out, "test file")->required();
  generate->add_option("--classes", classes, "classes / clusters");
  generate->add_option("--shots", shots, "training examples per class (multiclass)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : code(ExitCode::kUsage);
  }

  try {
    config.mode = cmt::parse_line_mode(mode);
    config.scorer = cmt::parse_scorer_mode(scorer);
    config.validate();
    const std::string cmd = app.get_subcommands().front()->get_name();
    cmt::MetricsLog log(cmd + "-" + mode + "-s" + std::to_string(config.seed), config.timing);

    if (cmd == "train") {
      const cmt::Model model = cmt::cmd_train(config, log);
      const auto s = model.tree.stats();
      std::cout << "memories\t" << s.memories << "\nleaves\t" << s.leaves << "\nmax_depth\t"
                << s.max_depth << '\n';
    } else if (cmd == "test") {
      print_evaluation(cmt::cmd_test(config, log));
    } else if (cmd == "ablate") {
      const auto p = cmt::parse_ablate_param(param);
      std::cout << cmt::render_ablation(p, cmt::cmd_ablate(config, p, values));
    } else if (cmd == "bench") {
      std::cout << cmt::render_bench(cmt::cmd_bench(config, sizes));
    } else {
      cmt::synthetic::LineSplit split;
      if (config.mode == cmt::LineMode::kMulticlass) {
        cmt::synthetic::ClusterSpec spec;
        spec.classes = classes;
        spec.train_per_class = shots;
        spec.seed = config.seed;
        spec.hash_bits = config.hash_bits;
        split = cmt::synthetic::multiclass_lines(spec);
      } else if (config.mode == cmt::LineMode::kMultilabel) {
        cmt::synthetic::MultilabelSpec spec;
        spec.clusters = classes;
        spec.seed = config.seed;
        spec.hash_bits = config.hash_bits;
        split = cmt::synthetic::multilabel_lines(spec);
      } else {
        cmt::synthetic::RetrievalSpec spec;
        spec.clusters = classes;
        spec.seed = config.seed;
        spec.hash_bits = config.hash_bits;
        split = cmt::synthetic::retrieval_lines(spec);
      }
      cmt::write_dataset(train_out, split.train);
      cmt::write_dataset(test_out, split.test);
    }
    return code(ExitCode::kOk);
  } catch (const cmt::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return code(ExitCode::kUsage);
  } catch (const cmt::SnapshotError& e) {
    std::cerr << "snapshot error: " << e.what() << '\n';
    return code(ExitCode::kSnapshot);
  } catch (const cmt::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return code(ExitCode::kData);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return code(ExitCode::kUsage);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
