#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "psmlc/experiment.hpp"

using namespace psmlc;

namespace {

ExperimentConfig small_config(Strategy strategy = Strategy::vanilla) {
  ExperimentConfig c;
  c.data.synthetic.n = 400;
  c.data.synthetic.d = 8;
  c.data.synthetic.k = 3;
  c.data.synthetic.positive_rates = {0.4, 0.3, 0.2};
  c.data.synthetic.noise = 0.1;
  c.data.n_train = 240;
  c.data.n_test = 160;
  c.data.seed = 5;
  c.strategy = strategy;
  c.simulator = strategy == Strategy::oracle ? Simulator::none : Simulator::single_class;
  if (strategy == Strategy::amp) c.alpha_k = {0.6, 0.7, 0.8};
  c.epochs = 3;
  c.batch_size = 32;
  c.seeds = {0, 1};
  c.hidden = {12};
  return c;
}

struct EpochFixture {
  Dataset train;
  Network net;
  OptimizerState opt;
  ClassWeights weights;
};

EpochFixture fixture(Simulator sim) {
  ExperimentConfig c = small_config();
  c.simulator = sim;
  const PreparedData data = prepare_data(c);
  Rng init(3);
  Network net = Network::mlp({8, 12, 3}, init);
  OptimizerState opt = OptimizerState::adam(net);
  return {data.train, net, opt, compute_class_weights(data.train.labels)};
}

void expect_same_parameters(const Network& a, const Network& b) {
  ASSERT_EQ(a.dims(), b.dims());
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    EXPECT_EQ(a.layers()[l].weight, b.layers()[l].weight) << "layer " << l;
    EXPECT_EQ(a.layers()[l].bias, b.layers()[l].bias) << "layer " << l;
  }
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST(Config, ContradictionsAreRejected) {
  auto c = small_config(Strategy::oracle);
  c.simulator = Simulator::bernoulli;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(run_experiment(c), ConfigError);
  c = small_config(Strategy::mixup);
  c.simulator = Simulator::bernoulli;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(Strategy::amp);
  c.alpha_k.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(Strategy::amp);
  c.alpha_k = {0.6, 0.7};
  EXPECT_THROW(run_experiment(c), ConfigError);
  c = small_config(Strategy::mixup_pme);
  c.pme_alpha = 0.3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.data.n_test = 1000;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  auto c = small_config(Strategy::amp);
  c.data.synthetic.plane_seed = 77;
  c.reduction = Reduction::mean_masked;
  c.companion = CompanionMode::independent;
  c.holdout_validation = true;
  const auto j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)), j);
  const auto partial = config_from_json(nlohmann::json{{"strategy", "mixup_pme"}, {"epochs", 7}});
  EXPECT_EQ(partial.strategy, Strategy::mixup_pme);
  EXPECT_EQ(partial.epochs, 7u);
  EXPECT_EQ(partial.batch_size, 64u);
  EXPECT_EQ(partial.learning_rate, 1e-3);
  EXPECT_THROW(config_from_json(nlohmann::json{{"strategy", "cutmix"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"epochs", "many"}}), ConfigError);
}

TEST(Config, DefaultsMatchProtocol) {
  const ExperimentConfig c;
  EXPECT_EQ(c.epochs, 30u);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.threshold, 0.5);
  EXPECT_EQ(c.seeds.size(), 3u);
  EXPECT_EQ(c.data.n_train, 1000u);
  EXPECT_EQ(c.data.n_test, 1000u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Prepare, SeedIsolation) {
  auto a = small_config();
  auto b = small_config();
  b.seeds = {41, 42, 43};
  const auto da = prepare_data(a);
  const auto db = prepare_data(b);
  EXPECT_EQ(da.train.features, db.train.features);
  EXPECT_EQ(da.train.labels, db.train.labels);
  EXPECT_EQ(da.test.labels, db.test.labels);
  b.data.seed = 6;
  EXPECT_NE(prepare_data(b).train.labels, da.train.labels);
}

TEST(Prepare, SimulatorsAndHoldout) {
  auto c = small_config();
  const auto single = prepare_data(c);
  EXPECT_TRUE(single.train_full.labels.fully_labeled());
  EXPECT_TRUE(single.test.labels.fully_labeled());
  for (std::size_t r = 0; r < single.train.size(); ++r) {
    std::size_t labeled = 0;
    for (std::size_t k = 0; k < 3; ++k) labeled += single.train.labels.is_labeled(r, k);
    EXPECT_EQ(labeled, 1u);
  }
  EXPECT_EQ(single.train.features, single.train_full.features);
  c.holdout_validation = true;
  const auto held = prepare_data(c);
  ASSERT_TRUE(held.validation.has_value());
  EXPECT_EQ(held.validation->size(), 48u);
  EXPECT_EQ(held.train.size(), 192u);
  EXPECT_EQ(held.train.labels, single.train.labels.slice_rows(0, 192));
}

TEST(TrainEpoch, WorkedPairTraceMasksUnlabeledClasses) {
  const auto y1 = PartialLabelMatrix::from_rows({"1?0?"});
  const auto y2 = PartialLabelMatrix::from_rows({"11??"});
  const Tensor x1 = Tensor::matrix(1, 3, {0.2, -0.4, 1.0});
  const Tensor x2 = Tensor::matrix(1, 3, {-1.0, 0.5, 0.3});
  const auto vb = mix_partial_batch(x1, y1, x2, y2, 0.75);
  EXPECT_EQ(vb.targets.data(), (std::vector<double>{1, 0.625, 0.125, 0.5}));
  EXPECT_EQ(vb.mask.data(), (std::vector<double>{1, 0, 1, 0}));
  Rng rng(1);
  Network net = Network::mlp({3, 5, 4}, rng);
  const auto lr = masked_weighted_bce(net.forward(vb.inputs), vb.targets, vb.mask, ClassWeights::uniform(4));
  EXPECT_NE(lr.grad(0, 0), 0.0);
  EXPECT_NE(lr.grad(0, 2), 0.0);
  EXPECT_EQ(lr.grad(0, 1), 0.0);
  EXPECT_EQ(lr.grad(0, 3), 0.0);
}

TEST(TrainEpoch, VanillaOnFullLabelsEqualsOracle) {
  auto f = fixture(Simulator::none);
  auto g = f;
  Rng ra(9);
  Rng rb(9);
  const auto mix = MixConfig::pme(0.75, 3);
  train_epoch(f.net, f.opt, f.train, Strategy::vanilla, mix, f.weights, ra);
  train_epoch(g.net, g.opt, g.train, Strategy::oracle, mix, g.weights, rb);
  expect_same_parameters(f.net, g.net);
  EXPECT_EQ(f.opt, g.opt);
}

TEST(TrainEpoch, PmeAtLambdaOneEqualsVanilla) {
  for (auto sim : {Simulator::single_class, Simulator::bernoulli}) {
    auto f = fixture(sim);
    auto g = f;
    Rng ra(10);
    Rng rb(10);
    TrainOptions pinned;
    pinned.forced_lambda = 1.0;
    train_epoch(f.net, f.opt, f.train, Strategy::vanilla, MixConfig::pme(0.75, 3), f.weights, ra);
    train_epoch(g.net, g.opt, g.train, Strategy::mixup_pme, MixConfig::pme(0.75, 3), g.weights, rb, pinned);
    expect_same_parameters(f.net, g.net);
  }
}

TEST(TrainEpoch, EveryStrategyConsumesTheSameStream) {
  auto f = fixture(Simulator::single_class);
  for (auto [strategy, mix] : {std::pair{Strategy::vanilla, MixConfig::pme(0.75, 3)},
                               std::pair{Strategy::mixup_pme, MixConfig::pme(0.75, 3)},
                               std::pair{Strategy::amp, MixConfig::amp({0.6, 0.7, 0.8})},
                               std::pair{Strategy::mixup, MixConfig::mixup(1.0)}}) {
    auto g = f;
    Rng rng(11);
    const auto stats = train_epoch(g.net, g.opt, g.train, strategy, mix, g.weights, rng);
    EXPECT_GT(stats.batches, 0u);
    EXPECT_TRUE(std::isfinite(stats.loss));
    Rng reference(11);
    reference.next_u64();
    reference.next_u64();
    EXPECT_EQ(rng.next_u64(), reference.next_u64()) << to_string(strategy);
  }
}

TEST(TrainEpoch, AmpBatchesShareTheBaseClass) {
  const auto f = fixture(Simulator::single_class);
  const auto order = Rng(1).permutation(f.train.size());
  Rng rng(2);
  const auto batches = detail::class_grouped_batches(f.train.labels, order, 32, rng);
  std::size_t rows = 0;
  for (const auto& b : batches) {
    rows += b.size();
    const auto labels = f.train.labels.gather_rows(b);
    // All rows in a batch share their single labeled class.
    std::size_t cls = 3;
    for (std::size_t k = 0; k < 3; ++k) {
      if (labels.is_labeled(0, k)) cls = k;
    }
    for (std::size_t r = 0; r < labels.rows(); ++r) EXPECT_TRUE(labels.is_labeled(r, cls));
  }
  EXPECT_EQ(rows, f.train.size());
}

TEST(TrainEpoch, MixupWarnsOnEmptySampler) {
  auto f = fixture(Simulator::single_class);
  Dataset tiny = f.train.slice(0, 4);
  tiny.labels = PartialLabelMatrix::from_rows({"1??", "0??", "?1?", "?0?"});
  Rng rng(3);
  const auto stats = train_epoch(f.net, f.opt, tiny, Strategy::mixup, MixConfig::mixup(), f.weights, rng);
  ASSERT_EQ(stats.warnings.size(), 1u);
  EXPECT_NE(stats.warnings[0].find("class 2"), std::string::npos);
  EXPECT_EQ(stats.batches, 2u);
}

TEST(Run, AllStrategiesProduceCompleteResults) {
  for (auto s : {Strategy::vanilla, Strategy::mixup, Strategy::mixup_pme, Strategy::amp, Strategy::oracle}) {
    const auto r = run_experiment(small_config(s));
    ASSERT_EQ(r.seeds.size(), 2u) << to_string(s);
    double mean = 0.0;
    for (const auto& seed : r.seeds) {
      ASSERT_EQ(seed.epochs.size(), 3u);
      double best = 0.0;
      for (const auto& e : seed.epochs) best = std::max(best, e.test.mean_f1);
      EXPECT_EQ(seed.best_mean_f1, best);
      EXPECT_GE(seed.best_epoch, 1u);
      mean += seed.best_mean_f1;
    }
    EXPECT_NEAR(r.mean_best_mean_f1, mean / 2, 1e-15);
    EXPECT_EQ(r.class_names, default_class_names(3));
  }
}

TEST(Run, SingleEpochIsBest) {
  auto c = small_config();
  c.epochs = 1;
  for (const auto& s : run_experiment(c).seeds) EXPECT_EQ(s.best_epoch, 1u);
}

TEST(Run, IdenticalConfigsGiveIdenticalDocuments) {
  const auto c = small_config(Strategy::mixup_pme);
  EXPECT_EQ(results_document(run_experiment(c)), results_document(run_experiment(c)));
}

TEST(Run, AppendingEpochsNeverLowersBest) {
  auto c = small_config(Strategy::mixup_pme);
  c.epochs = 6;
  const auto longer = run_experiment(c);
  for (const auto& s : longer.seeds) {
    double prev = -1.0;
    for (std::size_t e = 1; e <= s.epochs.size(); ++e) {
      SeedResult prefix = s;
      prefix.epochs.resize(e);
      prefix.select_best();
      EXPECT_GE(prefix.best_mean_f1, prev);
      prev = prefix.best_mean_f1;
    }
  }
  c.epochs = 4;
  const auto shorter = run_experiment(c);
  for (std::size_t i = 0; i < shorter.seeds.size(); ++i) {
    for (std::size_t e = 0; e < 4; ++e) {
      EXPECT_EQ(to_json(shorter.seeds[i].epochs[e].test), to_json(longer.seeds[i].epochs[e].test));
    }
    EXPECT_GE(longer.seeds[i].best_mean_f1, shorter.seeds[i].best_mean_f1);
  }
}

TEST(Run, HoldoutSelectsOnValidation) {
  auto c = small_config();
  c.holdout_validation = true;
  const auto r = run_experiment(c);
  for (const auto& s : r.seeds) {
    double best_val = -1.0;
    std::size_t best_epoch = 0;
    for (const auto& e : s.epochs) {
      ASSERT_TRUE(e.validation.has_value());
      if (e.validation->mean_f1 > best_val) {
        best_val = e.validation->mean_f1;
        best_epoch = e.epoch;
      }
    }
    EXPECT_EQ(s.best_epoch, best_epoch);
    EXPECT_EQ(s.best_mean_f1, s.epochs[best_epoch - 1].test.mean_f1);
  }
}

TEST(Run, MissingPolarityFailsBeforeTraining) {
  auto c = small_config();
  c.data.synthetic.positive_rates = {0.4, 0.3, 0.01};
  c.data.synthetic.n = 400;
  c.simulator = Simulator::bernoulli;
  c.bernoulli_p = 0.02;
  EXPECT_THROW(run_experiment(c), Error);
}

TEST(Report, TableAndReRender) {
  const auto r = run_experiment(small_config(Strategy::mixup_pme));
  const std::string dir = temp_dir("psmlc_report_test");
  report(r, dir);
  const std::string table = slurp(dir + "/table.md");
  EXPECT_EQ(table, render_table({r}));
  // Model, K = 3 classes and Average: five columns, six separators.
  const std::string header = table.substr(0, table.find('\n'));
  EXPECT_EQ(std::count(header.begin(), header.end(), '|'), 6);
  const auto back = load_results(dir + "/results.json");
  EXPECT_EQ(render_table({back}), table);
  EXPECT_EQ(results_document(back), slurp(dir + "/results.json"));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(report(r, "/proc/psmlc_cannot_write"), IoError);
}

TEST(AlphaK, ParsesIndicesNamesAndFiles) {
  const std::vector<std::string> names{"a", "b", "c"};
  EXPECT_EQ(parse_alpha_k("0=0.6,1=0.7,2=0.8", 3), (std::vector<double>{0.6, 0.7, 0.8}));
  EXPECT_EQ(parse_alpha_k("c=0.9,a=0.5,b=0.55", 3, names), (std::vector<double>{0.5, 0.55, 0.9}));
  EXPECT_THROW(parse_alpha_k("0=0.6,1=0.7", 3), ConfigError);
  EXPECT_THROW(parse_alpha_k("0=0.6,1=0.7,3=0.8", 3), ConfigError);
  EXPECT_THROW(parse_alpha_k("0=0.6,1=x,2=0.8", 3), ConfigError);
  EXPECT_THROW(parse_alpha_k("d=0.6", 3, names), ConfigError);
  EXPECT_EQ(alpha_k_argument({0.6, 0.75}), "0=0.59999999999999998,1=0.75");
  EXPECT_EQ(parse_alpha_k(alpha_k_argument({0.6, 0.75}), 2), (std::vector<double>{0.6, 0.75}));

  const std::string dir = temp_dir("psmlc_alpha_k_test");
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir + "/list.txt") << "0=0.65,1=0.95\n";
  }
  EXPECT_EQ(parse_alpha_k("@" + dir + "/list.txt", 2), (std::vector<double>{0.65, 0.95}));
  SweepResult s;
  s.class_names = {"a", "b"};
  s.alphas = {0.5, 0.6};
  s.per_class_f1 = {{0.1, 0.4}, {0.2, 0.4}};
  s.mean_f1 = {0.25, 0.3};
  s.argmax_alpha_k = {0.6, 0.5};
  report_sweep(s, dir);
  EXPECT_EQ(parse_alpha_k("@" + dir + "/sweep.json", 2), (std::vector<double>{0.6, 0.5}));
  EXPECT_EQ(parse_alpha_k("@" + dir + "/alpha_k.txt", 2), (std::vector<double>{0.6, 0.5}));
  EXPECT_THROW(parse_alpha_k("@" + dir + "/sweep.json", 3), ConfigError);
  EXPECT_THROW(parse_alpha_k("@" + dir + "/missing.txt", 2), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Sweep, ArgmaxPicksFirstBestAlpha) {
  auto c = small_config();
  c.epochs = 2;
  c.seeds = {0};
  const auto s = run_sweep(c, {0.5, 0.7, 0.9});
  ASSERT_EQ(s.per_class_f1.size(), 3u);
  ASSERT_EQ(s.argmax_alpha_k.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (s.per_class_f1[i][k] > s.per_class_f1[best][k]) best = i;
    }
    EXPECT_EQ(s.argmax_alpha_k[k], s.alphas[best]);
  }
  EXPECT_EQ(s.base_config.strategy, Strategy::mixup_pme);
  const std::string md = render_sweep(s);
  EXPECT_NE(md.find("| 0.7 |"), std::string::npos);
  EXPECT_NE(md.find("| argmax |"), std::string::npos);
  EXPECT_EQ(default_sweep_alphas().size(), 10u);
  EXPECT_NEAR(default_sweep_alphas().back(), 0.95, 1e-12);
}
