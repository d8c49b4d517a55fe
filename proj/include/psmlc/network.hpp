#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "psmlc/error.hpp"
#include "psmlc/rng.hpp"
#include "psmlc/tensor.hpp"

namespace psmlc {

enum class Activation { relu, identity };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation tag '" + std::string(s) + "'");
}

/// One fully connected layer: y = act(W x + b), W stored out x in.
struct Layer {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

struct LayerGradient {
  Tensor weight;
  Tensor bias;
};

using Gradients = std::vector<LayerGradient>;

/// Fully connected network producing one logit per class.
///
/// Hidden layers use relu, the output layer is identity; probabilities are
/// produced separately by sigmoid(). forward() keeps the activations needed
/// by backward(); predict() is the const, cache-free path used for evaluation.
class Network {
 public:
  Network() = default;

  /// Zero-initialised network with layer sizes dims[0] -> ... -> dims.back().
  explicit Network(const std::vector<std::size_t>& dims) {
    if (dims.size() < 2) throw ConfigError("network needs at least input and output dims");
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      if (dims[l] == 0 || dims[l + 1] == 0) throw ConfigError("network dims must be positive");
      Layer layer;
      layer.weight = Tensor::matrix(dims[l + 1], dims[l]);
      layer.bias = Tensor({dims[l + 1]});
      layer.activation = (l + 2 == dims.size()) ? Activation::identity : Activation::relu;
      layers_.push_back(std::move(layer));
    }
  }

  explicit Network(std::vector<Layer> layers) : layers_(std::move(layers)) { check_chain(); }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation of weights and biases.
  static Network mlp(const std::vector<std::size_t>& dims, Rng& rng) {
    Network net(dims);
    for (auto& layer : net.layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_dim()));
      for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
      for (double& b : layer.bias.data()) b = rng.uniform(-bound, bound);
    }
    return net;
  }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d;
    if (layers_.empty()) return d;
    d.push_back(input_dim());
    for (const auto& l : layers_) d.push_back(l.out_dim());
    return d;
  }

  /// Logits for `batch` (N x D); caches activations for backward().
  Tensor forward(const Tensor& batch) {
    check_input(batch);
    Cache cache;
    cache.inputs.push_back(batch);
    Tensor current = batch;
    for (const auto& layer : layers_) {
      Tensor pre = affine(layer, current);
      cache.pre_activations.push_back(pre);
      current = activate(layer.activation, std::move(pre));
      cache.inputs.push_back(current);
    }
    cache.inputs.pop_back();
    cache_ = std::move(cache);
    return current;
  }

  /// Logits without touching the cache.
  Tensor predict(const Tensor& batch) const {
    check_input(batch);
    Tensor current = batch;
    for (const auto& layer : layers_) current = activate(layer.activation, affine(layer, current));
    return current;
  }

  bool has_cache() const noexcept { return cache_.has_value(); }
  void clear_cache() noexcept { cache_.reset(); }

  /// Parameter gradients given dLoss/dLogits for the batch seen by forward().
  Gradients backward(const Tensor& grad_logits) const {
    if (!cache_) throw StateError("backward called without a preceding forward");
    const std::size_t n = cache_->inputs.front().rows();
    if (grad_logits.rank() != 2 || grad_logits.rows() != n || grad_logits.cols() != output_dim()) {
      throw ConfigError("backward: gradient shape does not match the cached batch");
    }
    Gradients grads(layers_.size());
    Tensor delta = grad_logits;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Layer& layer = layers_[l];
      if (layer.activation == Activation::relu) {
        const Tensor& pre = cache_->pre_activations[l];
        for (std::size_t i = 0; i < delta.size(); ++i) {
          if (!(pre[i] > 0.0)) delta[i] = 0.0;
        }
      }
      const Tensor& input = cache_->inputs[l];
      const std::size_t in = layer.in_dim();
      const std::size_t out = layer.out_dim();
      LayerGradient g{Tensor::matrix(out, in), Tensor({out})};
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t o = 0; o < out; ++o) {
          const double d = delta(s, o);
          if (d == 0.0) continue;
          g.bias[o] += d;
          auto x = input.row(s);
          auto gw = g.weight.row(o);
          for (std::size_t i = 0; i < in; ++i) gw[i] += d * x[i];
        }
      }
      if (l > 0) {
        Tensor prev = Tensor::matrix(n, in);
        for (std::size_t s = 0; s < n; ++s) {
          auto p = prev.row(s);
          for (std::size_t o = 0; o < out; ++o) {
            const double d = delta(s, o);
            if (d == 0.0) continue;
            auto w = layer.weight.row(o);
            for (std::size_t i = 0; i < in; ++i) p[i] += d * w[i];
          }
        }
        delta = std::move(prev);
      }
      grads[l] = std::move(g);
    }
    return grads;
  }

 private:
  struct Cache {
    std::vector<Tensor> inputs;           // input to each layer
    std::vector<Tensor> pre_activations;  // W x + b for each layer
  };

  void check_chain() const {
    if (layers_.empty()) throw ConfigError("network has no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      if (layer.weight.rank() != 2 || layer.bias.size() != layer.out_dim()) {
        throw ConfigError("layer " + std::to_string(l) + " has inconsistent weight/bias shapes");
      }
      if (l > 0 && layers_[l - 1].out_dim() != layer.in_dim()) {
        throw ConfigError("layer " + std::to_string(l) + " input does not chain");
      }
    }
    if (layers_.back().activation != Activation::identity) {
      throw ConfigError("final layer must be identity");
    }
  }

  void check_input(const Tensor& batch) const {
    if (layers_.empty()) throw ConfigError("network has no layers");
    if (batch.rank() != 2 || batch.cols() != input_dim()) {
      throw ConfigError("input has " + std::to_string(batch.cols()) + " columns, network expects " +
                        std::to_string(input_dim()));
    }
  }

  static Tensor affine(const Layer& layer, const Tensor& x) {
    const std::size_t n = x.rows();
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    Tensor y = Tensor::matrix(n, out);
    for (std::size_t s = 0; s < n; ++s) {
      auto xs = x.row(s);
      for (std::size_t o = 0; o < out; ++o) {
        auto w = layer.weight.row(o);
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * xs[i];
        y(s, o) = acc;
      }
    }
    return y;
  }

  static Tensor activate(Activation a, Tensor t) {
    if (a == Activation::relu) {
      for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
    }
    return t;
  }

  std::vector<Layer> layers_;
  std::optional<Cache> cache_;
};

inline Tensor forward(Network& net, const Tensor& batch) { return net.forward(batch); }

}  // namespace psmlc
