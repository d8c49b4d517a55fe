#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "psmlc/adam.hpp"
#include "psmlc/augment.hpp"
#include "psmlc/data.hpp"
#include "psmlc/error.hpp"
#include "psmlc/labels.hpp"
#include "psmlc/loss.hpp"
#include "psmlc/metrics.hpp"
#include "psmlc/network.hpp"
#include "psmlc/rng.hpp"

namespace psmlc {

inline constexpr int kResultsFormatVersion = 1;

enum class Strategy { vanilla, mixup, mixup_pme, amp, oracle };
enum class Simulator { none, single_class, bernoulli };
enum class CompanionMode { shuffle_batch, independent };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::vanilla: return "vanilla";
    case Strategy::mixup: return "mixup";
    case Strategy::mixup_pme: return "mixup_pme";
    case Strategy::amp: return "amp";
    case Strategy::oracle: return "oracle";
  }
  return "?";
}

inline Strategy strategy_from_string(std::string_view s) {
  for (auto v : {Strategy::vanilla, Strategy::mixup, Strategy::mixup_pme, Strategy::amp, Strategy::oracle}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

inline std::string_view to_string(Simulator s) {
  switch (s) {
    case Simulator::none: return "none";
    case Simulator::single_class: return "single_class";
    case Simulator::bernoulli: return "bernoulli";
  }
  return "?";
}

inline Simulator simulator_from_string(std::string_view s) {
  for (auto v : {Simulator::none, Simulator::single_class, Simulator::bernoulli}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown simulator '" + std::string(s) + "'");
}

inline std::string_view to_string(CompanionMode m) {
  return m == CompanionMode::shuffle_batch ? "shuffle_batch" : "independent";
}

inline CompanionMode companion_from_string(std::string_view s) {
  if (s == "shuffle_batch") return CompanionMode::shuffle_batch;
  if (s == "independent") return CompanionMode::independent;
  throw ConfigError("unknown companion mode '" + std::string(s) + "'");
}

inline std::string_view to_string(Reduction r) { return r == Reduction::mean_all ? "mean_all" : "mean_masked"; }

inline Reduction reduction_from_string(std::string_view s) {
  if (s == "mean_all") return Reduction::mean_all;
  if (s == "mean_masked") return Reduction::mean_masked;
  throw ConfigError("unknown reduction '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DataConfig {
  enum class Kind { synthetic, csv };
  Kind kind = Kind::synthetic;
  SyntheticSpec synthetic;  // synthetic.n should cover n_train + n_test
  std::string csv_path;
  std::size_t n_train = 1000;
  std::size_t n_test = 1000;
  bool normalize = true;
  // Seeds the generator and the partial-label simulator. Independent of the
  // per-run seeds, so repeated runs share one dataset and one partition.
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  DataConfig data;
  Simulator simulator = Simulator::single_class;
  double bernoulli_p = 0.5;
  Strategy strategy = Strategy::vanilla;
  double mixup_alpha = 1.0;          // Beta(alpha, alpha) for the mixup baseline
  double pme_alpha = 0.75;           // shared lower bound for mixup_pme
  std::vector<double> alpha_k;       // per-class lower bounds for amp
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double threshold = 0.5;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::size_t> hidden{64, 32};
  Reduction reduction = Reduction::mean_all;
  CompanionMode companion = CompanionMode::shuffle_batch;
  bool holdout_validation = false;
  double validation_fraction = 0.2;

  /// Checks everything that does not depend on the loaded data.
  void validate() const {
    if (strategy == Strategy::oracle && simulator != Simulator::none) {
      throw ConfigError("oracle strategy trains on full labels; simulator must be none");
    }
    if (strategy == Strategy::mixup && simulator != Simulator::single_class) {
      throw ConfigError("mixup baseline needs locally full supervision; simulator must be single_class");
    }
    if (strategy == Strategy::amp && alpha_k.empty()) throw ConfigError("amp needs an alpha_k list");
    if (strategy == Strategy::mixup_pme) MixConfig::pme(pme_alpha, 1).validate(1);
    if (strategy == Strategy::mixup && !(mixup_alpha > 0.0)) throw ConfigError("mixup alpha must be > 0");
    if (simulator == Simulator::bernoulli && !(bernoulli_p > 0.0 && bernoulli_p <= 1.0)) {
      throw ConfigError("bernoulli p must lie in (0, 1]");
    }
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    for (auto h : hidden) {
      if (h == 0) throw ConfigError("hidden layer sizes must be positive");
    }
    if (holdout_validation && !(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation fraction must lie in (0, 1)");
    }
    if (data.kind == DataConfig::Kind::synthetic) {
      data.synthetic.validate();
      if (data.n_train + data.n_test > data.synthetic.n) {
        throw ConfigError("synthetic N is smaller than n_train + n_test");
      }
    } else if (data.csv_path.empty()) {
      throw ConfigError("csv data source needs a path");
    }
    if (data.n_train == 0) throw ConfigError("n_train must be positive");
  }

  /// Mixing settings for the configured strategy, checked against K.
  MixConfig mix_config(std::size_t num_classes) const {
    MixConfig m;
    switch (strategy) {
      case Strategy::mixup: m = MixConfig::mixup(mixup_alpha); break;
      case Strategy::amp: m = MixConfig::amp(alpha_k); break;
      default: m = MixConfig::pme(pme_alpha, num_classes); break;
    }
    m.validate(num_classes);
    return m;
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json data;
  if (c.data.kind == DataConfig::Kind::synthetic) {
    const auto& s = c.data.synthetic;
    data["source"] = "synthetic";
    data["synthetic"] = {{"n", s.n}, {"d", s.d}, {"k", s.k}, {"noise", s.noise},
                         {"positive_rates", s.positive_rates}, {"class_names", s.class_names}};
    if (s.plane_seed) data["synthetic"]["plane_seed"] = *s.plane_seed;
  } else {
    data["source"] = "csv";
    data["csv_path"] = c.data.csv_path;
  }
  data["n_train"] = c.data.n_train;
  data["n_test"] = c.data.n_test;
  data["normalize"] = c.data.normalize;
  data["seed"] = c.data.seed;

  nlohmann::json j;
  j["data"] = data;
  j["simulator"] = to_string(c.simulator);
  j["bernoulli_p"] = c.bernoulli_p;
  j["strategy"] = to_string(c.strategy);
  j["mix"] = {{"mixup_alpha", c.mixup_alpha}, {"pme_alpha", c.pme_alpha}, {"alpha_k", c.alpha_k}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["threshold"] = c.threshold;
  j["seeds"] = c.seeds;
  j["hidden"] = c.hidden;
  j["reduction"] = to_string(c.reduction);
  j["companion"] = to_string(c.companion);
  j["holdout_validation"] = c.holdout_validation;
  j["validation_fraction"] = c.validation_fraction;
  return j;
}

/// Missing keys keep their defaults, so a config file may be partial.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      const std::string source = d.value("source", "synthetic");
      if (source == "synthetic") {
        c.data.kind = DataConfig::Kind::synthetic;
        if (d.contains("synthetic")) {
          const auto& s = d.at("synthetic");
          auto& spec = c.data.synthetic;
          spec.n = s.value("n", spec.n);
          spec.d = s.value("d", spec.d);
          spec.k = s.value("k", spec.k);
          spec.noise = s.value("noise", spec.noise);
          spec.positive_rates = s.value("positive_rates", spec.positive_rates);
          spec.class_names = s.value("class_names", spec.class_names);
          if (s.contains("plane_seed")) spec.plane_seed = s.at("plane_seed").get<std::uint64_t>();
        }
      } else if (source == "csv") {
        c.data.kind = DataConfig::Kind::csv;
        c.data.csv_path = d.value("csv_path", std::string());
      } else {
        throw ConfigError("unknown data source '" + source + "'");
      }
      c.data.n_train = d.value("n_train", c.data.n_train);
      c.data.n_test = d.value("n_test", c.data.n_test);
      c.data.normalize = d.value("normalize", c.data.normalize);
      c.data.seed = d.value("seed", c.data.seed);
    }
    if (j.contains("simulator")) c.simulator = simulator_from_string(j.at("simulator").get<std::string>());
    c.bernoulli_p = j.value("bernoulli_p", c.bernoulli_p);
    if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    if (j.contains("mix")) {
      const auto& m = j.at("mix");
      c.mixup_alpha = m.value("mixup_alpha", c.mixup_alpha);
      c.pme_alpha = m.value("pme_alpha", c.pme_alpha);
      c.alpha_k = m.value("alpha_k", c.alpha_k);
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.threshold = j.value("threshold", c.threshold);
    c.seeds = j.value("seeds", c.seeds);
    c.hidden = j.value("hidden", c.hidden);
    if (j.contains("reduction")) c.reduction = reduction_from_string(j.at("reduction").get<std::string>());
    if (j.contains("companion")) c.companion = companion_from_string(j.at("companion").get<std::string>());
    c.holdout_validation = j.value("holdout_validation", c.holdout_validation);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

struct PreparedData {
  Dataset train_full;  // training split with its original labels
  Dataset train;       // training split after the partial-label simulator
  std::optional<Dataset> validation;
  Dataset test;
};

/// Builds or loads the data, normalises per sample, splits contiguously and
/// applies the simulator to the training split. Depends only on the data
/// section, the simulator and data.seed.
inline PreparedData prepare_data(const ExperimentConfig& config) {
  Dataset all;
  if (config.data.kind == DataConfig::Kind::synthetic) {
    all = generate_synthetic(config.data.synthetic, config.data.seed);
  } else {
    all = read_csv(config.data.csv_path);
  }
  all.validate();
  if (config.data.normalize) all.features = instance_normalize(all.features);
  auto [train, test] = split_train_test(all, config.data.n_train, config.data.n_test);

  PreparedData out;
  out.train_full = train;
  switch (config.simulator) {
    case Simulator::none: out.train = train; break;
    case Simulator::single_class:
      out.train = train.with_labels(make_single_class_partition(train.labels, config.data.seed));
      break;
    case Simulator::bernoulli:
      out.train = train.with_labels(make_bernoulli_partial(train.labels, config.bernoulli_p, config.data.seed));
      break;
  }
  if (config.holdout_validation) {
    const auto n = out.train.size();
    const auto n_val = static_cast<std::size_t>(static_cast<double>(n) * config.validation_fraction);
    if (n_val == 0 || n_val >= n) throw ConfigError("validation split leaves no training or validation rows");
    out.validation = out.train.slice(n - n_val, n_val);
    out.train = out.train.slice(0, n - n_val);
    out.train_full = out.train_full.slice(0, n - n_val);
  }
  out.test = std::move(test);
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::size_t batch_size = 64;
  Reduction reduction = Reduction::mean_all;
  CompanionMode companion = CompanionMode::shuffle_batch;
  // Pins lambda for every mixed batch; used by the strategy-equivalence checks.
  std::optional<double> forced_lambda;
};

struct EpochStats {
  double loss = 0.0;
  std::size_t batches = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline double train_step(Network& net, OptimizerState& state, const Tensor& inputs, const Tensor& targets,
                         const Tensor& mask, const ClassWeights& weights, Reduction reduction) {
  const Tensor logits = net.forward(inputs);
  const LossResult lr = masked_weighted_bce(logits, targets, mask, weights, reduction);
  backward_and_step(net, state, lr.grad);
  return lr.loss;
}

inline std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < order.size(); b += size) {
    const auto end = std::min(order.size(), b + size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// Batches that share the base sample's single labeled class; rows labeled
// for zero or several classes form one extra group.
inline std::vector<std::vector<std::size_t>> class_grouped_batches(const PartialLabelMatrix& labels,
                                                                   const std::vector<std::size_t>& order,
                                                                   std::size_t size, Rng& rng) {
  const std::size_t k = labels.cols();
  std::vector<std::vector<std::size_t>> groups(k + 1);
  for (std::size_t r : order) {
    std::size_t key = k;
    std::size_t labeled = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (labels.is_labeled(r, c)) {
        ++labeled;
        key = c;
      }
    }
    groups[labeled == 1 ? key : k].push_back(r);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (const auto& g : groups) {
    for (auto& b : chunk(g, size)) batches.push_back(std::move(b));
  }
  rng.shuffle(batches);
  return batches;
}

}  // namespace detail

/// One pass over the training data.
///
/// Draws two seeds from `rng` (batch order, mixing) so every strategy
/// consumes the caller's stream identically.
///   vanilla / oracle: no mixing; loss masked to labeled entries.
///   mixup_pme: companion = permutation of the batch, lambda ~ U(alpha, 1).
///   amp: batches grouped by the base sample's labeled class, lambda ~
///        U(max labeled alpha_k, 1), companions drawn from the whole set.
///   mixup: one sub-epoch per class over pairs labeled for that class,
///        lambda ~ Beta(alpha, alpha), loss restricted to that class.
inline EpochStats train_epoch(Network& net, OptimizerState& state, const Dataset& train, Strategy strategy,
                              const MixConfig& mix, const ClassWeights& weights, Rng& rng,
                              const TrainOptions& options = {}) {
  const std::size_t n = train.size();
  const std::size_t k = train.num_classes();
  Rng order_rng(rng.next_u64());
  Rng mix_rng(rng.next_u64());
  EpochStats stats;
  double loss_sum = 0.0;
  if (n == 0) return stats;
  if (options.batch_size == 0) throw ConfigError("batch size must be >= 1");

  auto lambda_for = [&](const PartialLabelMatrix& base) {
    if (options.forced_lambda) return *options.forced_lambda;
    return mix_rng.uniform(lambda_lower_bound(base, mix), 1.0);
  };

  switch (strategy) {
    case Strategy::vanilla:
    case Strategy::oracle: {
      for (const auto& idx : detail::chunk(order_rng.permutation(n), options.batch_size)) {
        const PartialLabelMatrix labels = train.labels.gather_rows(idx);
        loss_sum += detail::train_step(net, state, train.features.gather_rows(idx), pme_fill(labels),
                                       mask_of(labels), weights, options.reduction);
        ++stats.batches;
      }
      break;
    }
    case Strategy::mixup_pme:
    case Strategy::amp: {
      if (mix.strategy == MixStrategy::mixup) throw ConfigError("mixup_pme/amp need a PME mix config");
      mix.validate(k);
      const auto order = order_rng.permutation(n);
      const bool grouped = strategy == Strategy::amp;
      const auto batches = grouped ? detail::class_grouped_batches(train.labels, order, options.batch_size, order_rng)
                                   : detail::chunk(order, options.batch_size);
      for (const auto& idx : batches) {
        std::vector<std::size_t> companion(idx.size());
        if (grouped || options.companion == CompanionMode::independent) {
          for (auto& c : companion) c = static_cast<std::size_t>(mix_rng.uniform_index(n));
        } else {
          const auto perm = pair_sampler_shuffle(idx.size(), mix_rng);
          for (std::size_t i = 0; i < idx.size(); ++i) companion[i] = idx[perm[i]];
        }
        const PartialLabelMatrix base = train.labels.gather_rows(idx);
        const double lambda = lambda_for(base);
        const VicinalBatch vb = mix_partial_batch(train.features.gather_rows(idx), base,
                                                  train.features.gather_rows(companion),
                                                  train.labels.gather_rows(companion), lambda);
        loss_sum += detail::train_step(net, state, vb.inputs, vb.targets, vb.mask, weights, options.reduction);
        ++stats.batches;
      }
      break;
    }
    case Strategy::mixup: {
      if (mix.strategy != MixStrategy::mixup) throw ConfigError("mixup baseline needs a mixup config");
      const std::size_t d = train.num_features();
      for (std::size_t c = 0; c < k; ++c) {
        const auto pairs = pair_sampler_locally_full(train.labels, c, mix_rng);
        if (pairs.empty()) {
          stats.warnings.push_back("class " + std::to_string(c) +
                                   " has fewer than two labeled samples; skipped this epoch");
          continue;
        }
        const std::size_t trained[] = {c};
        for (std::size_t b = 0; b < pairs.size(); b += options.batch_size) {
          const std::size_t m = std::min(options.batch_size, pairs.size() - b);
          const double lambda = options.forced_lambda ? *options.forced_lambda : sample_beta(mix_rng, mix.alpha);
          Tensor inputs = Tensor::matrix(m, d);
          Tensor targets = Tensor::matrix(m, k, 0.5);
          Tensor mask = Tensor::matrix(m, k, 0.0);
          for (std::size_t i = 0; i < m; ++i) {
            const auto [bi, ci] = pairs[b + i];
            const MixedPair p = mixup_pair_with_lambda(train.features.row(bi), train.labels.row(bi),
                                                       train.features.row(ci), train.labels.row(ci), trained, lambda);
            std::copy(p.input.begin(), p.input.end(), inputs.row(i).begin());
            targets(i, c) = p.target[c];
            mask(i, c) = 1.0;
          }
          loss_sum += detail::train_step(net, state, inputs, targets, mask, weights, options.reduction);
          ++stats.batches;
        }
      }
      break;
    }
  }
  stats.loss = stats.batches ? loss_sum / static_cast<double>(stats.batches) : 0.0;
  return stats;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  MetricsReport test;
  std::optional<MetricsReport> validation;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_mean_f1 = 0.0;
  std::vector<double> best_per_class_f1;
  std::vector<std::string> warnings;

  /// Re-selects the best epoch (first maximum of the selection mean F1).
  void select_best() {
    best_epoch = 0;
    double best_selection = -1.0;
    for (const auto& e : epochs) {
      const double score = e.validation ? e.validation->mean_f1 : e.test.mean_f1;
      if (score > best_selection) {
        best_selection = score;
        best_epoch = e.epoch;
        best_mean_f1 = e.test.mean_f1;
        best_per_class_f1 = e.test.f1_values();
      }
    }
  }
};

struct RunResult {
  ExperimentConfig config;
  std::vector<std::string> class_names;
  std::vector<SeedResult> seeds;
  double mean_best_mean_f1 = 0.0;
  std::vector<double> mean_best_per_class_f1;

  void aggregate() {
    mean_best_mean_f1 = 0.0;
    mean_best_per_class_f1.assign(class_names.size(), 0.0);
    if (seeds.empty()) return;
    for (const auto& s : seeds) {
      mean_best_mean_f1 += s.best_mean_f1;
      for (std::size_t k = 0; k < s.best_per_class_f1.size() && k < class_names.size(); ++k) {
        mean_best_per_class_f1[k] += s.best_per_class_f1[k];
      }
    }
    const auto count = static_cast<double>(seeds.size());
    mean_best_mean_f1 /= count;
    for (double& f : mean_best_per_class_f1) f /= count;
  }
};

/// Called once per seed with the final network and optimizer state.
using SeedFinishedHook = std::function<void(std::uint64_t seed, const Network&, const OptimizerState&)>;

inline MetricsReport evaluate_network(const Network& net, const Dataset& ds, double threshold) {
  return evaluate(sigmoid(net.predict(ds.features)), ds.labels, threshold);
}

inline std::vector<std::size_t> network_dims(const ExperimentConfig& config, std::size_t d, std::size_t k) {
  std::vector<std::size_t> dims{d};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(k);
  return dims;
}

/// Trains and evaluates one seed on already prepared data.
inline SeedResult run_seed(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed,
                           const SeedFinishedHook& on_finished = {}) {
  const Dataset& train = config.strategy == Strategy::oracle ? data.train_full : data.train;
  const std::size_t k = train.num_classes();
  const MixConfig mix = config.mix_config(k);
  const ClassWeights weights = compute_class_weights(train.labels, train.class_names);

  Rng init_rng = Rng::stream(seed, "init");
  Rng train_rng = Rng::stream(seed, "train");
  Network net = Network::mlp(network_dims(config, train.num_features(), k), init_rng);
  OptimizerState opt = OptimizerState::adam(net, config.learning_rate);
  TrainOptions options;
  options.batch_size = config.batch_size;
  options.reduction = config.reduction;
  options.companion = config.companion;

  SeedResult result;
  result.seed = seed;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochStats stats = train_epoch(net, opt, train, config.strategy, mix, weights, train_rng, options);
    for (auto& w : stats.warnings) result.warnings.push_back("epoch " + std::to_string(epoch) + ": " + w);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = stats.loss;
    rec.test = evaluate_network(net, data.test, config.threshold);
    rec.test.epoch = epoch;
    rec.test.seed = seed;
    if (data.validation) {
      rec.validation = evaluate_network(net, *data.validation, config.threshold);
      rec.validation->epoch = epoch;
      rec.validation->seed = seed;
    }
    result.epochs.push_back(std::move(rec));
  }
  result.select_best();
  if (on_finished) on_finished(seed, net, opt);
  return result;
}

/// Full protocol: prepare data once, run every seed, aggregate by mean.
inline RunResult run_experiment(const ExperimentConfig& config, const SeedFinishedHook& on_finished = {}) {
  config.validate();
  const PreparedData data = prepare_data(config);
  const std::size_t k = data.train.num_classes();
  if (data.test.num_classes() != k) throw ConfigError("test split has a different class count");
  config.mix_config(k);
  if (config.strategy == Strategy::oracle && !data.train_full.labels.fully_labeled()) {
    throw ConfigError("oracle strategy needs fully labeled training data");
  }
  // Surface missing pos/neg classes before any training.
  compute_class_weights((config.strategy == Strategy::oracle ? data.train_full : data.train).labels,
                        data.train.class_names);

  RunResult result;
  result.config = config;
  result.class_names = data.train.class_names;
  for (auto seed : config.seeds) result.seeds.push_back(run_seed(config, data, seed, on_finished));
  result.aggregate();
  return result;
}

// ---------------------------------------------------------------------------
// Serialization and rendering
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    per_class.push_back({{"tp", c.counts.tp}, {"fp", c.counts.fp}, {"fn", c.counts.fn}, {"tn", c.counts.tn},
                         {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}});
  }
  return {{"epoch", r.epoch}, {"seed", r.seed}, {"threshold", r.threshold}, {"mean_f1", r.mean_f1},
          {"per_class", per_class}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.threshold = j.at("threshold").get<double>();
  r.mean_f1 = j.at("mean_f1").get<double>();
  for (const auto& c : j.at("per_class")) {
    ClassMetrics m;
    m.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("fn").get<std::size_t>(),
                c.at("tn").get<std::size_t>()};
    m.precision = c.at("precision").get<double>();
    m.recall = c.at("recall").get<double>();
    m.f1 = c.at("f1").get<double>();
    r.per_class.push_back(m);
  }
  return r;
}

inline nlohmann::json to_json(const RunResult& r) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : r.seeds) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : s.epochs) {
      nlohmann::json ej = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"test", to_json(e.test)}};
      if (e.validation) ej["validation"] = to_json(*e.validation);
      epochs.push_back(std::move(ej));
    }
    seeds.push_back({{"seed", s.seed},
                     {"epochs", epochs},
                     {"best_epoch", s.best_epoch},
                     {"best_mean_f1", s.best_mean_f1},
                     {"best_per_class_f1", s.best_per_class_f1},
                     {"warnings", s.warnings}});
  }
  return {{"format_version", kResultsFormatVersion},
          {"kind", "run"},
          {"config", to_json(r.config)},
          {"class_names", r.class_names},
          {"seeds", seeds},
          {"aggregate", {{"mean_best_mean_f1", r.mean_best_mean_f1},
                         {"mean_best_per_class_f1", r.mean_best_per_class_f1}}}};
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kResultsFormatVersion || j.value("kind", "") != "run") {
      throw ConfigError("not a version-1 run results document");
    }
    RunResult r;
    r.config = config_from_json(j.at("config"));
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& sj : j.at("seeds")) {
      SeedResult s;
      s.seed = sj.at("seed").get<std::uint64_t>();
      for (const auto& ej : sj.at("epochs")) {
        EpochRecord e;
        e.epoch = ej.at("epoch").get<std::size_t>();
        e.train_loss = ej.at("train_loss").get<double>();
        e.test = metrics_from_json(ej.at("test"));
        if (ej.contains("validation")) e.validation = metrics_from_json(ej.at("validation"));
        s.epochs.push_back(std::move(e));
      }
      s.best_epoch = sj.at("best_epoch").get<std::size_t>();
      s.best_mean_f1 = sj.at("best_mean_f1").get<double>();
      s.best_per_class_f1 = sj.at("best_per_class_f1").get<std::vector<double>>();
      s.warnings = sj.at("warnings").get<std::vector<std::string>>();
      r.seeds.push_back(std::move(s));
    }
    const auto& a = j.at("aggregate");
    r.mean_best_mean_f1 = a.at("mean_best_mean_f1").get<double>();
    r.mean_best_per_class_f1 = a.at("mean_best_per_class_f1").get<std::vector<double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed results document: ") + e.what());
  }
}

inline std::string results_document(const RunResult& r) { return to_json(r).dump(2) + "\n"; }

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in '" + path + "': " + e.what());
  }
}

inline RunResult load_results(const std::string& path) { return run_result_from_json(read_json_file(path)); }

namespace detail {

inline std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace detail

/// Per-class and average F1 (best epoch, mean over seeds), one row per run.
inline std::string render_table(const std::vector<RunResult>& runs) {
  if (runs.empty()) return "";
  const auto& names = runs.front().class_names;
  std::ostringstream os;
  os << "| Model |";
  for (const auto& n : names) os << ' ' << n << " |";
  os << " Average |\n|---|";
  for (std::size_t i = 0; i < names.size(); ++i) os << "---|";
  os << "---|\n";
  for (const auto& r : runs) {
    if (r.class_names != names) throw ConfigError("cannot tabulate runs with different classes");
    os << "| " << to_string(r.config.strategy) << " |";
    for (double f : r.mean_best_per_class_f1) os << ' ' << detail::fixed4(f) << " |";
    os << ' ' << detail::fixed4(r.mean_best_mean_f1) << " |\n";
  }
  return os.str();
}

/// Writes results.json and table.md into `dir`.
inline void report(const RunResult& result, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  detail::write_text(std::filesystem::path(dir) / "results.json", results_document(result));
  detail::write_text(std::filesystem::path(dir) / "table.md", render_table({result}));
}

// ---------------------------------------------------------------------------
// Alpha sweep
// ---------------------------------------------------------------------------

struct SweepResult {
  std::vector<std::string> class_names;
  std::vector<double> alphas;
  std::vector<std::vector<double>> per_class_f1;  // [alpha][class], best epoch, mean over seeds
  std::vector<double> mean_f1;                   // [alpha]
  std::vector<double> argmax_alpha_k;            // [class]; ties go to the smaller alpha
  ExperimentConfig base_config;
};

inline std::vector<double> default_sweep_alphas() {
  std::vector<double> a;
  for (int i = 0; i < 10; ++i) a.push_back(0.5 + 0.05 * i);
  return a;
}

/// Runs mixup_pme once per alpha and records the per-class optimum.
inline SweepResult run_sweep(ExperimentConfig config, const std::vector<double>& alphas) {
  if (alphas.empty()) throw ConfigError("sweep needs at least one alpha");
  config.strategy = Strategy::mixup_pme;
  SweepResult out;
  out.base_config = config;
  out.alphas = alphas;
  for (double a : alphas) {
    config.pme_alpha = a;
    const RunResult r = run_experiment(config);
    out.class_names = r.class_names;
    out.per_class_f1.push_back(r.mean_best_per_class_f1);
    out.mean_f1.push_back(r.mean_best_mean_f1);
  }
  const std::size_t k = out.class_names.size();
  out.argmax_alpha_k.assign(k, alphas.front());
  for (std::size_t c = 0; c < k; ++c) {
    double best = -1.0;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      if (out.per_class_f1[i][c] > best) {
        best = out.per_class_f1[i][c];
        out.argmax_alpha_k[c] = alphas[i];
      }
    }
  }
  return out;
}

/// "0=0.6,1=0.85,..." — the value accepted by --alpha-k.
inline std::string alpha_k_argument(const std::vector<double>& alpha_k) {
  std::string s;
  for (std::size_t k = 0; k < alpha_k.size(); ++k) {
    if (k) s += ',';
    s += std::to_string(k) + '=' + format_double(alpha_k[k]);
  }
  return s;
}

inline nlohmann::json to_json(const SweepResult& s) {
  return {{"format_version", kResultsFormatVersion},
          {"kind", "alpha_sweep"},
          {"config", to_json(s.base_config)},
          {"class_names", s.class_names},
          {"alphas", s.alphas},
          {"per_class_f1", s.per_class_f1},
          {"mean_f1", s.mean_f1},
          {"argmax_alpha_k", s.argmax_alpha_k},
          {"alpha_k_argument", alpha_k_argument(s.argmax_alpha_k)}};
}

inline SweepResult sweep_result_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kResultsFormatVersion || j.value("kind", "") != "alpha_sweep") {
      throw ConfigError("not a version-1 alpha sweep document");
    }
    SweepResult s;
    s.base_config = config_from_json(j.at("config"));
    s.class_names = j.at("class_names").get<std::vector<std::string>>();
    s.alphas = j.at("alphas").get<std::vector<double>>();
    s.per_class_f1 = j.at("per_class_f1").get<std::vector<std::vector<double>>>();
    s.mean_f1 = j.at("mean_f1").get<std::vector<double>>();
    s.argmax_alpha_k = j.at("argmax_alpha_k").get<std::vector<double>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed sweep document: ") + e.what());
  }
}

inline std::string render_sweep(const SweepResult& s) {
  std::ostringstream os;
  os << "| alpha |";
  for (const auto& n : s.class_names) os << ' ' << n << " |";
  os << " Average |\n|---|";
  for (std::size_t i = 0; i < s.class_names.size(); ++i) os << "---|";
  os << "---|\n";
  for (std::size_t i = 0; i < s.alphas.size(); ++i) {
    os << "| " << std::setprecision(4) << s.alphas[i] << " |";
    for (double f : s.per_class_f1[i]) os << ' ' << detail::fixed4(f) << " |";
    os << ' ' << detail::fixed4(s.mean_f1[i]) << " |\n";
  }
  os << "| argmax |";
  for (double a : s.argmax_alpha_k) os << ' ' << std::setprecision(4) << a << " |";
  os << " |\n";
  return os.str();
}

/// Writes sweep.json, sweep.md and alpha_k.txt into `dir`.
inline void report_sweep(const SweepResult& s, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  const std::filesystem::path base(dir);
  detail::write_text(base / "sweep.json", to_json(s).dump(2) + "\n");
  detail::write_text(base / "sweep.md", render_sweep(s));
  detail::write_text(base / "alpha_k.txt", alpha_k_argument(s.argmax_alpha_k) + "\n");
}

/// Parses an --alpha-k value for K classes.
///
/// Accepts "k=v,k=v,..." where k is a class index or class name, or
/// "@path" naming either a sweep.json (its argmax_alpha_k is used) or a
/// text file holding the k=v list. Every class must be assigned.
inline std::vector<double> parse_alpha_k(std::string_view arg, std::size_t num_classes,
                                         const std::vector<std::string>& class_names = {}) {
  std::string text(arg);
  if (!text.empty() && text.front() == '@') {
    const std::string path = text.substr(1);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      const auto j = nlohmann::json::parse(text, nullptr, false);
      if (j.is_discarded() || !j.contains("argmax_alpha_k")) {
        throw ConfigError("'" + path + "' is not a sweep document");
      }
      auto values = j.at("argmax_alpha_k").get<std::vector<double>>();
      if (values.size() != num_classes) throw ConfigError("sweep document has the wrong class count");
      return values;
    }
  }
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();

  std::vector<std::optional<double>> values(num_classes);
  for (auto item : detail::split_commas(text)) {
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("alpha-k item '" + std::string(item) + "' lacks '='");
    const std::string key(item.substr(0, eq));
    const std::string value(item.substr(eq + 1));
    std::size_t k = num_classes;
    const auto name_it = std::find(class_names.begin(), class_names.end(), key);
    if (name_it != class_names.end()) {
      k = static_cast<std::size_t>(name_it - class_names.begin());
    } else {
      const auto [p, ec] = std::from_chars(key.data(), key.data() + key.size(), k);
      if (ec != std::errc() || p != key.data() + key.size()) {
        throw ConfigError("unknown class '" + key + "' in alpha-k");
      }
    }
    if (k >= num_classes) throw ConfigError("alpha-k class index " + key + " out of range");
    double v = 0.0;
    const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size()) {
      throw ConfigError("malformed alpha-k value '" + value + "'");
    }
    values[k] = v;
  }
  std::vector<double> out;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (!values[k]) throw ConfigError("alpha-k does not assign class " + std::to_string(k));
    out.push_back(*values[k]);
  }
  return out;
}

}  // namespace psmlc
