#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hdfa/harness.hpp"
#include "hdfa/selfcheck.hpp"

namespace {

using namespace hdfa;

// Expands `--config FILE` (key=value lines) into flags placed right after the
// subcommand name; explicit command-line flags come later and win by the
// take-last policy.
std::vector<std::string> effective_args(int argc, char** argv) {
  std::vector<std::string> raw(argv + 1, argv + argc);
  std::string config_path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == "--config" && i + 1 < raw.size()) {
      config_path = raw[++i];
    } else if (raw[i].rfind("--config=", 0) == 0) {
      config_path = raw[i].substr(9);
    } else {
      rest.push_back(raw[i]);
    }
  }
  if (config_path.empty()) return rest;

  std::ifstream in(config_path);
  if (!in) {
    throw std::invalid_argument("config: cannot open " + config_path);
  }
  std::vector<std::string> expanded;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=', first);
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: expected key=value, got '" + line + "'");
    }
    const auto key_end = line.find_last_not_of(" \t", eq - 1);
    const auto val_end = line.find_last_not_of(" \t\r");
    expanded.push_back("--" + line.substr(first, key_end - first + 1) + "=" +
                       line.substr(eq + 1, val_end - eq));
  }
  std::vector<std::string> out;
  if (!rest.empty()) out.push_back(rest.front());  // the subcommand
  out.insert(out.end(), expanded.begin(), expanded.end());
  if (rest.size() > 1) out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

std::vector<int> parse_branching(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    out.push_back(std::stoi(part));
  }
  return out;
}

std::pair<int, int> parse_split(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw CLI::ValidationError("--split", "expected the form a:b");
  }
  return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
}

struct GenArgs {
  int classes = 8;
  int dim = 16;
  int samples = 20;
  double class_spread = 0.15;
  double within_spread = 1.0;
  double curvature = -1.0;
  std::string branching;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  SyntheticTreeSpec spec;
  spec.leaf_classes = a.classes;
  if (!a.branching.empty()) spec.branching = parse_branching(a.branching);
  spec.samples_per_class = a.samples;
  spec.class_spread = a.class_spread;
  spec.within_spread = a.within_spread;
  spec.dimension = a.dim;
  spec.curvature = a.curvature;
  spec.seed = a.seed;
  save_features(generate_tree_data(spec), a.out);
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  int iters = 100;
  double outer_lr = 1e-3;
  double beta = 10.0;
  double gamma = 0.1;
  std::string split = "1:1";
  double c0 = -1.0;
  int hidden = 64;
  int ode_steps = 10;
  double horizon = 1.0;
  int inner_k = 50;
  double inner_lr = 0.1;
  double inner_tol = 1e-6;
  bool raw_ball = false;
  std::uint64_t seed = 0;
};

int cmd_meta_train(const TrainArgs& a) {
  const FeatureTable table = load_features(a.data);
  const auto dataset = group_by_class(ingest_features(table, a.c0, a.raw_ball));
  auto bank = make_bank<double>(table.dim, a.hidden, a.horizon, a.ode_steps, a.c0, a.seed);

  MetaConfig cfg;
  cfg.outer_iterations = a.iters;
  cfg.outer_learning_rate = a.outer_lr;
  cfg.beta = a.beta;
  cfg.gamma = a.gamma;
  std::tie(cfg.split_train, cfg.split_val) = parse_split(a.split);
  cfg.seed = a.seed;
  cfg.inner = InnerConfig{a.inner_k, a.inner_lr, a.inner_tol};

  auto result = meta_train(bank, dataset, cfg, [](int it, double loss) {
    std::printf("iter=%d meta_loss=%.12g\n", it, loss);
    std::fflush(stdout);
  });
  save_bank(result.bank, a.out);
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string bank_path;
  std::string mode = "dual_aug";
  std::string protocol = "episodes";
  int ways = 5;
  int shots = 1;
  int queries = 15;
  int episodes = 200;
  int stages = 2;
  int buffer = 20;
  int threads = 1;
  double c0 = -1.0;
  bool raw_ball = false;
  int inner_k = 50;
  double inner_lr = 0.1;
  double inner_tol = 1e-6;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const FeatureTable table = load_features(a.data);
  const AugMode mode = parse_aug_mode(a.mode);

  EstimatorBank<double> bank;
  const bool has_bank = !a.bank_path.empty();
  if (has_bank) {
    bank = load_bank(a.bank_path);
  } else if (mode != AugMode::kNone) {
    throw std::invalid_argument("eval: --mode " + a.mode + " requires --bank");
  }

  EvalOptions opts;
  opts.c0 = a.c0;
  opts.raw_ball = a.raw_ball;
  opts.inner = InnerConfig{a.inner_k, a.inner_lr, a.inner_tol};
  opts.threads = a.threads;

  if (a.protocol == "episodes") {
    EpisodeSpec spec;
    spec.ways = a.ways;
    spec.shots = a.shots;
    spec.queries = a.queries;
    spec.episodes = a.episodes;
    spec.seed = a.seed;
    const auto m = run_episodes(has_bank ? &bank : nullptr, table, spec, mode, opts);
    std::printf("%s\n", to_json_string(m).c_str());
    return 0;
  }
  if (a.protocol == "replay") {
    if (a.stages < 1) throw std::invalid_argument("eval: --stages must be >= 1");
    // contiguous label blocks form the disjoint task stream
    std::vector<std::string> labels;
    for (const auto& [label, v] : table.rows) {
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
        labels.push_back(label);
      }
    }
    std::sort(labels.begin(), labels.end());
    if (static_cast<int>(labels.size()) < a.stages) {
      throw std::invalid_argument("eval: fewer classes than stages");
    }
    std::vector<FeatureTable> stream(static_cast<std::size_t>(a.stages));
    const int per_stage =
        (static_cast<int>(labels.size()) + a.stages - 1) / a.stages;
    for (auto& s : stream) {
      s.dim = table.dim;
      s.curvature_hint = table.curvature_hint;
    }
    for (const auto& row : table.rows) {
      const auto pos = std::find(labels.begin(), labels.end(), row.first);
      const int stage = static_cast<int>(pos - labels.begin()) / per_stage;
      stream[static_cast<std::size_t>(stage)].rows.push_back(row);
    }
    auto m = run_replay_lite(has_bank ? &bank : nullptr, stream, a.buffer, mode, opts);
    m.seed = a.seed;
    std::printf("%s\n", to_json_string(m).c_str());
    return 0;
  }
  throw std::invalid_argument("eval: unknown protocol '" + a.protocol + "'");
}

struct SelfcheckArgs {
  std::string suite = "all";
  int trials = 200;
  int draws = 100000;
  long checks = 1000000;
  double eps_ball = kBallEps;
  std::uint64_t seed = 0;
};

int cmd_selfcheck(const SelfcheckArgs& a) {
  std::vector<selfcheck::SuiteResult> results;
  if (a.suite == "all" || a.suite == "geometry") {
    results.push_back(selfcheck::geometry_suite(a.seed, a.checks, a.eps_ball));
  }
  if (a.suite == "all" || a.suite == "rk4") {
    results.push_back(selfcheck::rk4_suite());
  }
  if (a.suite == "all" || a.suite == "bound") {
    results.push_back(selfcheck::bound_suite(a.seed, a.trials, a.draws));
  }
  if (results.empty()) {
    throw std::invalid_argument("selfcheck: unknown suite '" + a.suite + "'");
  }
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%s: %s (%ld checks, %ld failures) %s\n", r.name.c_str(),
                r.pass ? "PASS" : "FAIL", r.checks, r.failures, r.detail.c_str());
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperbolic dual feature augmentation toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic hierarchical feature file");
  gen_cmd->add_option("--config", "key=value file; command-line flags take precedence");
  gen_cmd->add_option("--classes", gen.classes, "number of leaf classes")
      ->check(CLI::Range(1, 1000000000));
  gen_cmd->add_option("--dim", gen.dim, "feature dimension")->check(CLI::Range(1, 1000000000));
  gen_cmd->add_option("--samples", gen.samples, "samples per class")
      ->check(CLI::Range(1, 1000000000));
  gen_cmd->add_option("--class-spread", gen.class_spread, "tangent step per tree level");
  gen_cmd->add_option("--within-spread", gen.within_spread, "within-class scale");
  gen_cmd->add_option("--curvature", gen.curvature, "ball curvature (negative)");
  gen_cmd->add_option("--branching", gen.branching, "per-level branching, e.g. 2,2,2");
  gen_cmd->add_option("--seed", gen.seed, "random seed");
  gen_cmd->add_option("--out", gen.out, "output feature file")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("meta-train", "meta-train the estimator bank");
  train_cmd->add_option("--config", "key=value file; command-line flags take precedence");
  train_cmd->add_option("--data", train.data, "feature file")->required();
  train_cmd->add_option("--out", train.out, "checkpoint path")->required();
  train_cmd->add_option("--iters", train.iters, "outer iterations")
      ->check(CLI::Range(0, 1000000000));
  train_cmd->add_option("--outer-lr", train.outer_lr, "outer learning rate");
  train_cmd->add_option("--beta", train.beta, "hierarchy regularizer strength");
  train_cmd->add_option("--gamma", train.gamma, "uncertainty level in [0.01, 0.25]");
  train_cmd->add_option("--split", train.split, "D_t:D_v ratio, e.g. 1:1 or 1:15");
  train_cmd->add_option("--c0", train.c0, "initial curvature");
  train_cmd->add_option("--hidden", train.hidden, "flow network width")
      ->check(CLI::Range(1, 1000000000));
  train_cmd->add_option("--ode-steps", train.ode_steps, "RK4 steps")
      ->check(CLI::Range(1, 1000000000));
  train_cmd->add_option("--horizon", train.horizon, "ODE end time");
  train_cmd->add_option("--inner-k", train.inner_k, "inner loop steps")
      ->check(CLI::Range(1, 1000000000));
  train_cmd->add_option("--inner-lr", train.inner_lr, "inner learning rate");
  train_cmd->add_option("--inner-tol", train.inner_tol, "inner early-stop tolerance");
  train_cmd->add_flag("--raw-ball", train.raw_ball,
                      "rows are ball points, not tangent features");
  train_cmd->add_option("--seed", train.seed, "random seed");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "episodic or replay evaluation");
  eval_cmd->add_option("--config", "key=value file; command-line flags take precedence");
  eval_cmd->add_option("--data", eval.data, "feature file")->required();
  eval_cmd->add_option("--bank", eval.bank_path, "estimator checkpoint");
  eval_cmd->add_option("--mode", eval.mode, "no_aug | seen_aug | dual_aug");
  eval_cmd->add_option("--protocol", eval.protocol, "episodes | replay");
  eval_cmd->add_option("--ways", eval.ways, "classes per episode")
      ->check(CLI::Range(2, 1000000));
  eval_cmd->add_option("--shots", eval.shots, "support samples per class")
      ->check(CLI::Range(1, 1000000000));
  eval_cmd->add_option("--queries", eval.queries, "query samples per class")
      ->check(CLI::Range(1, 1000000000));
  eval_cmd->add_option("--episodes", eval.episodes, "episode count")
      ->check(CLI::Range(1, 1000000000));
  eval_cmd->add_option("--stages", eval.stages, "replay stages");
  eval_cmd->add_option("--buffer", eval.buffer, "replay buffer per class");
  eval_cmd->add_option("--threads", eval.threads, "episode parallelism")
      ->check(CLI::Range(1, 1000000000));
  eval_cmd->add_option("--c0", eval.c0, "ingestion curvature when no bank is given");
  eval_cmd->add_flag("--raw-ball", eval.raw_ball,
                     "rows are ball points, not tangent features");
  eval_cmd->add_option("--inner-k", eval.inner_k, "inner loop steps");
  eval_cmd->add_option("--inner-lr", eval.inner_lr, "inner learning rate");
  eval_cmd->add_option("--inner-tol", eval.inner_tol, "inner early-stop tolerance");
  eval_cmd->add_option("--seed", eval.seed, "episode sampling seed");

  SelfcheckArgs selfcheck_args;
  auto* check_cmd = app.add_subcommand("selfcheck", "run the numerical check suites");
  check_cmd->add_option("--config", "key=value file; command-line flags take precedence");
  check_cmd->add_option("--suite", selfcheck_args.suite, "all | geometry | rk4 | bound");
  check_cmd->add_option("--trials", selfcheck_args.trials, "bound dominance trials")
      ->check(CLI::Range(1, 1000000000));
  check_cmd->add_option("--draws", selfcheck_args.draws, "Monte-Carlo draws per trial")
      ->check(CLI::Range(1, 1000000000));
  check_cmd->add_option("--checks", selfcheck_args.checks, "geometry identity count")
      ->check(CLI::Range(1, 1000000000));
  check_cmd->add_option("--eps-ball", selfcheck_args.eps_ball,
                        "containment margin override (diagnostic)");
  check_cmd->add_option("--seed", selfcheck_args.seed, "random seed");

  try {
    std::vector<std::string> args = effective_args(argc, argv);
    std::reverse(args.begin(), args.end());  // CLI11's vector overload wants it reversed
    app.parse(std::move(args));
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen(gen);
    if (train_cmd->parsed()) return cmd_meta_train(train);
    if (eval_cmd->parsed()) return cmd_eval(eval);
    if (check_cmd->parsed()) return cmd_selfcheck(selfcheck_args);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
