#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "psmlc/error.hpp"
#include "psmlc/labels.hpp"
#include "psmlc/tensor.hpp"

namespace psmlc {

/// Logistic function, clamped into the open interval (0, 1).
///
/// For |z| beyond ~37 the exact value rounds to 0 or 1 in double precision;
/// the clamp keeps the result strictly inside (0, 1) and monotone.
inline double sigmoid(double z) {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  constexpr double hi = 1.0 - 0x1.0p-53;
  double p = 0.0;
  if (z >= 0.0) {
    p = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    p = e / (1.0 + e);
  }
  return p < lo ? lo : (p > hi ? hi : p);
}

inline Tensor sigmoid(const Tensor& logits) {
  Tensor out = logits;
  for (double& v : out.data()) v = sigmoid(v);
  return out;
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

enum class Reduction {
  mean_all,     // sum of masked entry losses / (N * K); masked entries count as zeros
  mean_masked,  // sum of masked entry losses / number of unmasked entries
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // dLoss/dLogits, same shape as the logits
};

/// Weighted binary cross-entropy evaluated from logits.
///
/// Entry loss: w+ t softplus(-z) + w- (1 - t) softplus(z), which equals
/// -[w+ t log p + w- (1-t) log(1-p)] with p = sigmoid(z). Entries with
/// mask 0 are skipped entirely, so they contribute exact zeros to both the
/// loss and the gradient whatever their target or logit.
inline LossResult masked_weighted_bce(const Tensor& logits, const Tensor& targets, const Tensor& mask,
                                      const ClassWeights& weights,
                                      Reduction reduction = Reduction::mean_all) {
  require_same_shape(logits, targets, "masked_weighted_bce targets");
  require_same_shape(logits, mask, "masked_weighted_bce mask");
  if (logits.rank() != 2) throw ConfigError("masked_weighted_bce expects N x K logits");
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  if (weights.size() != k) {
    throw ConfigError("class weights have " + std::to_string(weights.size()) + " entries, expected " +
                      std::to_string(k));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!(targets[i] >= 0.0 && targets[i] <= 1.0)) throw InputError("target outside [0, 1]");
    if (mask[i] != 0.0 && mask[i] != 1.0) throw InputError("mask entry is not 0 or 1");
  }

  LossResult result{0.0, Tensor::matrix(n, k)};
  double total = 0.0;
  std::size_t active = 0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t i = r * k + c;
      if (mask[i] == 0.0) continue;
      ++active;
      const double z = logits[i];
      const double t = targets[i];
      const double wp = weights.positive[c];
      const double wn = weights.negative[c];
      total += wp * t * softplus(-z) + wn * (1.0 - t) * softplus(z);
      const double p = 1.0 / (1.0 + std::exp(-z));
      result.grad[i] = -wp * t * (1.0 - p) + wn * (1.0 - t) * p;
    }
  }
  double denom = 0.0;
  if (reduction == Reduction::mean_all) {
    denom = static_cast<double>(n * k);
  } else {
    denom = static_cast<double>(active);
  }
  if (denom == 0.0) {
    result.grad.fill(0.0);
    return result;
  }
  result.loss = total / denom;
  for (double& g : result.grad.data()) g /= denom;
  return result;
}

}  // namespace psmlc
