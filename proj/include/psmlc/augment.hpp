#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "psmlc/error.hpp"
#include "psmlc/labels.hpp"
#include "psmlc/rng.hpp"
#include "psmlc/tensor.hpp"

namespace psmlc {

enum class MixStrategy { mixup, mixup_pme, amp };

inline std::string_view to_string(MixStrategy s) {
  switch (s) {
    case MixStrategy::mixup: return "mixup";
    case MixStrategy::mixup_pme: return "mixup_pme";
    case MixStrategy::amp: return "amp";
  }
  return "?";
}

/// Mixing hyperparameters.
///
/// mixup draws lambda ~ Beta(alpha, alpha). mixup_pme and amp draw
/// lambda ~ Uniform(alpha_k, 1) with 0.5 <= alpha_k < 1; mixup_pme uses a
/// single value shared by every class, amp one value per class.
struct MixConfig {
  MixStrategy strategy = MixStrategy::mixup_pme;
  double alpha = 1.0;
  std::vector<double> alpha_k;

  static MixConfig mixup(double alpha = 1.0) { return {MixStrategy::mixup, alpha, {}}; }

  static MixConfig pme(double alpha, std::size_t num_classes) {
    return {MixStrategy::mixup_pme, alpha, std::vector<double>(num_classes, alpha)};
  }

  static MixConfig amp(std::vector<double> alpha_k) {
    return {MixStrategy::amp, 1.0, std::move(alpha_k)};
  }

  void validate(std::size_t num_classes) const {
    if (strategy == MixStrategy::mixup) {
      if (!(alpha > 0.0)) throw ConfigError("mixup alpha must be > 0");
      return;
    }
    if (alpha_k.size() != num_classes) {
      throw ConfigError("expected " + std::to_string(num_classes) + " alpha_k values, got " +
                        std::to_string(alpha_k.size()));
    }
    for (std::size_t k = 0; k < alpha_k.size(); ++k) {
      if (!(alpha_k[k] >= 0.5 && alpha_k[k] < 1.0)) {
        throw ConfigError("alpha_k[" + std::to_string(k) + "] = " + std::to_string(alpha_k[k]) +
                          " outside [0.5, 1)");
      }
    }
    if (strategy == MixStrategy::mixup_pme &&
        std::adjacent_find(alpha_k.begin(), alpha_k.end(), std::not_equal_to<>()) != alpha_k.end()) {
      throw ConfigError("mixup_pme uses one alpha shared by all classes; use amp for per-class values");
    }
  }
};

/// Output of the batch mixing transform.
struct VicinalBatch {
  Tensor inputs;   // lambda * x1 + (1 - lambda) * x2
  Tensor targets;  // lambda * fill(y1) + (1 - lambda) * fill(y2)
  Tensor mask;     // labeled entries of the base batch
  double lambda = 1.0;
};

/// Lower end of the lambda interval for a base batch.
///
/// One lambda mixes the whole batch, so for amp it must satisfy every
/// alpha_k of a class labeled anywhere in the base batch: the maximum is
/// used. A batch with no labeled entry falls back to the maximum over all
/// classes (its loss is fully masked anyway).
inline double lambda_lower_bound(const PartialLabelMatrix& base, const MixConfig& config) {
  config.validate(base.cols());
  if (config.strategy == MixStrategy::mixup_pme) return config.alpha_k.front();
  double bound = 0.0;
  bool any = false;
  for (std::size_t r = 0; r < base.rows(); ++r) {
    for (std::size_t k = 0; k < base.cols(); ++k) {
      if (base.is_labeled(r, k)) {
        bound = std::max(bound, config.alpha_k[k]);
        any = true;
      }
    }
  }
  if (!any) bound = *std::max_element(config.alpha_k.begin(), config.alpha_k.end());
  return bound;
}

/// Pure mixing step for a given lambda; the mask comes from the base batch only.
inline VicinalBatch mix_partial_batch(const Tensor& x1, const PartialLabelMatrix& labels1, const Tensor& x2,
                                      const PartialLabelMatrix& labels2, double lambda) {
  require_same_shape(x1, x2, "mix inputs");
  if (labels1.rows() != labels2.rows() || labels1.cols() != labels2.cols()) {
    throw ConfigError("mix labels: shape mismatch");
  }
  if (labels1.rows() != x1.rows()) throw ConfigError("mix: label rows do not match input rows");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("lambda outside [0, 1]");

  VicinalBatch out;
  out.lambda = lambda;
  const double rest = 1.0 - lambda;
  out.inputs = x1;
  for (std::size_t i = 0; i < out.inputs.size(); ++i) out.inputs[i] = lambda * x1[i] + rest * x2[i];
  const Tensor y1 = pme_fill(labels1);
  const Tensor y2 = pme_fill(labels2);
  out.targets = y1;
  for (std::size_t i = 0; i < out.targets.size(); ++i) out.targets[i] = lambda * y1[i] + rest * y2[i];
  out.mask = mask_of(labels1);
  return out;
}

/// Maximum-entropy MixUp over a base batch and a companion batch.
inline VicinalBatch mixup_pme_batch(const Tensor& x1, const PartialLabelMatrix& labels1, const Tensor& x2,
                                    const PartialLabelMatrix& labels2, const MixConfig& config, Rng& rng) {
  if (config.strategy == MixStrategy::mixup) {
    throw ConfigError("mixup_pme_batch needs strategy mixup_pme or amp");
  }
  const double lower = lambda_lower_bound(labels1, config);
  const double lambda = rng.uniform(lower, 1.0);
  return mix_partial_batch(x1, labels1, x2, labels2, lambda);
}

struct MixedPair {
  std::vector<double> input;
  std::vector<double> target;  // mixed fills; only `classes` are meaningful
  std::vector<double> mask;    // 1 on the trained classes
  double lambda = 1.0;
};

/// Classic MixUp of two samples that are both labeled on `classes`.
inline MixedPair mixup_pair_with_lambda(std::span<const double> x_i, std::span<const LabelValue> y_i,
                                        std::span<const double> x_j, std::span<const LabelValue> y_j,
                                        std::span<const std::size_t> classes, double lambda) {
  if (x_i.size() != x_j.size() || y_i.size() != y_j.size()) throw ConfigError("mixup_pair: size mismatch");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("lambda outside [0, 1]");
  MixedPair out;
  out.lambda = lambda;
  out.mask.assign(y_i.size(), 0.0);
  for (std::size_t k : classes) {
    if (k >= y_i.size()) throw ConfigError("mixup_pair: class index out of range");
    if (y_i[k] == LabelValue::Missing || y_j[k] == LabelValue::Missing) {
      throw InputError("mixup_pair: class " + std::to_string(k) + " is not labeled in both samples");
    }
    out.mask[k] = 1.0;
  }
  out.input.resize(x_i.size());
  for (std::size_t d = 0; d < x_i.size(); ++d) out.input[d] = lambda * x_i[d] + (1.0 - lambda) * x_j[d];
  out.target.resize(y_i.size());
  auto fill = [](LabelValue v) { return v == LabelValue::Positive ? 1.0 : v == LabelValue::Negative ? 0.0 : 0.5; };
  for (std::size_t k = 0; k < y_i.size(); ++k) {
    out.target[k] = lambda * fill(y_i[k]) + (1.0 - lambda) * fill(y_j[k]);
  }
  return out;
}

inline MixedPair mixup_pair(std::span<const double> x_i, std::span<const LabelValue> y_i,
                            std::span<const double> x_j, std::span<const LabelValue> y_j,
                            std::span<const std::size_t> classes, double alpha, Rng& rng) {
  const double lambda = sample_beta(rng, alpha);
  return mixup_pair_with_lambda(x_i, y_i, x_j, y_j, classes, lambda);
}

using IndexPair = std::pair<std::size_t, std::size_t>;

/// One epoch of (base, companion) pairs, both labeled for class k.
///
/// Every labeled sample is a base exactly once; companions are an
/// independent permutation of the same labeled set. Fewer than two labeled
/// samples gives an empty stream.
inline std::vector<IndexPair> pair_sampler_locally_full(const PartialLabelMatrix& labels, std::size_t k,
                                                        Rng& rng) {
  if (k >= labels.cols()) throw ConfigError("pair sampler: class index out of range");
  std::vector<std::size_t> labeled;
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    if (labels.is_labeled(r, k)) labeled.push_back(r);
  }
  if (labeled.size() < 2) return {};
  std::vector<std::size_t> base = labeled;
  std::vector<std::size_t> companion = labeled;
  rng.shuffle(base);
  rng.shuffle(companion);
  std::vector<IndexPair> pairs;
  pairs.reserve(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) pairs.emplace_back(base[i], companion[i]);
  return pairs;
}

/// Companion order for a batch: a uniform permutation (self-pairs allowed).
inline std::vector<std::size_t> pair_sampler_shuffle(std::size_t batch_size, Rng& rng) {
  return rng.permutation(batch_size);
}

}  // namespace psmlc
