// psmlc: generate data, simulate partial labels, train, sweep alpha, render tables.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "psmlc/psmlc.hpp"

namespace {

using namespace psmlc;

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  for (auto item : detail::split_commas(text)) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) {
      throw ConfigError("malformed number '" + std::string(item) + "'");
    }
    out.push_back(v);
  }
  return out;
}

// Experiment flags shared by train and sweep. Unset options leave the
// config file (or the defaults) untouched.
struct RunFlags {
  std::string config_path;
  std::optional<std::string> strategy;
  std::optional<double> alpha;
  std::optional<std::string> alpha_k;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> num_seeds;
  std::optional<std::string> data_csv;
  std::optional<std::string> simulator;
  std::optional<double> bernoulli_p;
  std::optional<std::uint64_t> data_seed;
  std::optional<std::size_t> n_train;
  std::optional<std::size_t> n_test;
  bool holdout_validation = false;
  std::string out_dir = "results";

  void attach(CLI::App* cmd, bool with_strategy) {
    cmd->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    if (with_strategy) {
      cmd->add_option("--strategy", strategy, "vanilla | mixup | mixup_pme | amp | oracle");
      cmd->add_option("--alpha", alpha, "Beta alpha for mixup, lower bound for mixup_pme");
      cmd->add_option("--alpha-k", alpha_k, "per-class bounds for amp: k=v,... or @file");
    }
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--threshold", threshold, "decision threshold");
    cmd->add_option("--seed", seed, "first run seed");
    cmd->add_option("--num-seeds", num_seeds, "number of consecutive run seeds");
    cmd->add_option("--data", data_csv, "read data from CSV instead of generating it")->check(CLI::ExistingFile);
    cmd->add_option("--simulator", simulator, "none | single_class | bernoulli");
    cmd->add_option("--bernoulli-p", bernoulli_p, "keep probability for the bernoulli simulator");
    cmd->add_option("--data-seed", data_seed, "seed for the generator and the simulator");
    cmd->add_option("--n-train", n_train);
    cmd->add_option("--n-test", n_test);
    cmd->add_flag("--holdout-validation", holdout_validation,
                  "select the best epoch on a slice of the training split instead of the test split");
    cmd->add_option("--out", out_dir, "output directory");
  }

  ExperimentConfig build() const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (strategy) c.strategy = strategy_from_string(*strategy);
    if (data_csv) {
      c.data.kind = DataConfig::Kind::csv;
      c.data.csv_path = *data_csv;
    }
    if (simulator) c.simulator = simulator_from_string(*simulator);
    if (c.strategy == Strategy::oracle && !simulator) c.simulator = Simulator::none;
    if (bernoulli_p) c.bernoulli_p = *bernoulli_p;
    if (data_seed) c.data.seed = *data_seed;
    if (n_train) c.data.n_train = *n_train;
    if (n_test) c.data.n_test = *n_test;
    if (alpha) (c.strategy == Strategy::mixup ? c.mixup_alpha : c.pme_alpha) = *alpha;
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (lr) c.learning_rate = *lr;
    if (threshold) c.threshold = *threshold;
    if (seed || num_seeds) {
      const std::uint64_t first = seed ? *seed : c.seeds.front();
      const std::size_t count = num_seeds ? *num_seeds : c.seeds.size();
      c.seeds.clear();
      for (std::size_t i = 0; i < count; ++i) c.seeds.push_back(first + i);
    }
    if (holdout_validation) c.holdout_validation = true;
    if (alpha_k) {
      std::vector<std::string> names;
      if (c.data.kind == DataConfig::Kind::csv) {
        names = read_csv(c.data.csv_path).class_names;
      } else {
        const auto& s = c.data.synthetic;
        names = s.class_names.empty() ? default_class_names(s.k) : s.class_names;
      }
      c.alpha_k = parse_alpha_k(*alpha_k, names.size(), names);
    }
    return c;
  }
};

void print_warnings(const RunResult& r) {
  for (const auto& s : r.seeds) {
    for (const auto& w : s.warnings) std::cerr << "warning: seed " << s.seed << ", " << w << '\n';
  }
}

int cmd_generate(const SyntheticSpec& base, const std::string& rates, const std::string& names, std::uint64_t seed,
                 const std::string& out) {
  SyntheticSpec spec = base;
  if (!rates.empty()) spec.positive_rates = parse_doubles(rates);
  if (!names.empty()) {
    spec.class_names.clear();
    for (auto n : detail::split_commas(names)) spec.class_names.emplace_back(n);
  }
  Dataset ds = generate_synthetic(spec, seed);
  write_csv(ds, out);
  std::cout << "wrote " << ds.size() << " rows, " << ds.num_features() << " features, " << ds.num_classes()
            << " classes to " << out << '\n';
  return 0;
}

int cmd_partition(const std::string& in, const std::string& simulator, double p, std::uint64_t seed,
                  std::optional<std::size_t> n_train, const std::string& out) {
  Dataset ds = read_csv(in);
  const std::size_t n = n_train ? *n_train : ds.size();
  if (n > ds.size()) throw InputError("--n-train exceeds the number of rows");
  const PartialLabelMatrix head = ds.labels.slice_rows(0, n);
  PartialLabelMatrix masked;
  switch (simulator_from_string(simulator)) {
    case Simulator::single_class: masked = make_single_class_partition(head, seed); break;
    case Simulator::bernoulli: masked = make_bernoulli_partial(head, p, seed); break;
    case Simulator::none: masked = head; break;
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < ds.num_classes(); ++k) ds.labels(r, k) = masked(r, k);
  }
  const auto report = validate_partial_dataset(masked, {}, ds.class_names);
  for (const auto& v : report.violations) {
    if (v.kind != Violation::Kind::unlabeled_sample) std::cerr << "warning: " << v.message << '\n';
  }
  const std::size_t unlabeled = report.count(Violation::Kind::unlabeled_sample);
  if (unlabeled) std::cerr << "warning: " << unlabeled << " rows have no labeled class\n";
  write_csv(ds, out);
  std::cout << "wrote " << ds.size() << " rows to " << out << " (first " << n << " rows masked)\n";
  return 0;
}

int cmd_train(const RunFlags& flags, bool checkpoints) {
  const ExperimentConfig config = flags.build();
  std::filesystem::create_directories(flags.out_dir);
  SeedFinishedHook hook;
  if (checkpoints) {
    hook = [&](std::uint64_t seed, const Network& net, const OptimizerState& opt) {
      save_checkpoint(net, opt, (std::filesystem::path(flags.out_dir) /
                                 ("checkpoint_seed" + std::to_string(seed) + ".json")).string());
    };
  }
  const RunResult result = run_experiment(config, hook);
  print_warnings(result);
  report(result, flags.out_dir);
  std::cout << render_table({result});
  for (const auto& s : result.seeds) {
    std::cout << "seed " << s.seed << ": best epoch " << s.best_epoch << ", mean F1 " << detail::fixed4(s.best_mean_f1)
              << '\n';
  }
  return 0;
}

int cmd_sweep(const RunFlags& flags, const std::string& alphas) {
  ExperimentConfig config = flags.build();
  config.strategy = Strategy::mixup_pme;
  const auto grid = alphas.empty() ? default_sweep_alphas() : parse_doubles(alphas);
  const SweepResult s = run_sweep(config, grid);
  report_sweep(s, flags.out_dir);
  std::cout << render_sweep(s) << "alpha-k: " << alpha_k_argument(s.argmax_alpha_k) << '\n';
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<RunResult> runs;
  std::string text;
  for (const auto& path : inputs) {
    const auto j = read_json_file(path);
    if (j.value("kind", "") == "alpha_sweep") {
      text += render_sweep(sweep_result_from_json(j));
    } else {
      runs.push_back(run_result_from_json(j));
    }
  }
  text = render_table(runs) + text;
  if (out.empty()) {
    std::cout << text;
  } else {
    detail::write_text(out, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partially supervised multi-label training with maximum-entropy MixUp"};
  app.require_subcommand(1);

  SyntheticSpec spec;
  std::string gen_rates;
  std::string gen_names;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "write a synthetic fully labeled dataset as CSV");
  generate->add_option("--n", spec.n, "rows");
  generate->add_option("--d", spec.d, "features");
  generate->add_option("--k", spec.k, "classes");
  generate->add_option("--noise", spec.noise, "feature noise scale");
  generate->add_option("--rates", gen_rates, "per-class positive rates, comma separated");
  generate->add_option("--class-names", gen_names, "comma separated");
  generate->add_option("--seed", gen_seed);
  generate->add_option("--out", gen_out)->required();

  std::string part_in;
  std::string part_sim = "single_class";
  double part_p = 0.5;
  std::uint64_t part_seed = 0;
  std::optional<std::size_t> part_n_train;
  std::string part_out;
  auto* partition = app.add_subcommand("partition", "mask labels of a CSV dataset");
  partition->add_option("--data", part_in)->required()->check(CLI::ExistingFile);
  partition->add_option("--simulator", part_sim, "single_class | bernoulli");
  partition->add_option("--bernoulli-p", part_p);
  partition->add_option("--seed", part_seed);
  partition->add_option("--n-train", part_n_train, "mask only the first N rows (the training split)");
  partition->add_option("--out", part_out)->required();

  RunFlags train_flags;
  bool checkpoints = false;
  auto* train = app.add_subcommand("train", "run one strategy over all seeds");
  train_flags.attach(train, true);
  train->add_flag("--checkpoints", checkpoints, "save each seed's final network and optimizer state");

  RunFlags sweep_flags;
  sweep_flags.out_dir = "sweep";
  std::string sweep_alphas;
  auto* sweep = app.add_subcommand("sweep", "mixup_pme over a grid of alpha values");
  sweep_flags.attach(sweep, false);
  sweep->add_option("--alphas", sweep_alphas, "comma separated grid (default 0.5,0.55,...,0.95)");

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "render tables from results.json or sweep.json files");
  rep->add_option("inputs", report_inputs)->required()->check(CLI::ExistingFile);
  rep->add_option("--out", report_out, "write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) return cmd_generate(spec, gen_rates, gen_names, gen_seed, gen_out);
    if (*partition) return cmd_partition(part_in, part_sim, part_p, part_seed, part_n_train, part_out);
    if (*train) return cmd_train(train_flags, checkpoints);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_alphas);
    if (*rep) return cmd_report(report_inputs, report_out);
  } catch (const psmlc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
