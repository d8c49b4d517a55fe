#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "psmlc/adam.hpp"
#include "psmlc/error.hpp"
#include "psmlc/network.hpp"

namespace psmlc {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  Network network;
  OptimizerState optimizer;
};

// Doubles are emitted in shortest round-trip form, so parsing the text
// back yields the identical bit pattern.
inline nlohmann::json checkpoint_to_json(const Network& net, const OptimizerState& opt) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["layer_dims"] = net.dims();
  auto& tags = j["activation_tags"] = nlohmann::json::array();
  auto& weights = j["weights"] = nlohmann::json::array();
  auto& biases = j["biases"] = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    tags.push_back(std::string(to_string(layer.activation)));
    weights.push_back(layer.weight.data());
    biases.push_back(layer.bias.data());
  }
  auto moments = [](const std::vector<Tensor>& ts) {
    auto arr = nlohmann::json::array();
    for (const auto& t : ts) arr.push_back(t.data());
    return arr;
  };
  j["optimizer"] = {{"step", opt.step},
                    {"learning_rate", opt.learning_rate},
                    {"beta1", opt.beta1},
                    {"beta2", opt.beta2},
                    {"epsilon", opt.epsilon},
                    {"first_moment", moments(opt.first_moment)},
                    {"second_moment", moments(opt.second_moment)}};
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw ConfigError("unsupported checkpoint format_version");
    }
    const auto dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    const auto tags = j.at("activation_tags").get<std::vector<std::string>>();
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (dims.size() < 2 || tags.size() + 1 != dims.size() || weights.size() != tags.size() ||
        biases.size() != tags.size()) {
      throw ConfigError("checkpoint layer arrays disagree with layer_dims");
    }
    std::vector<Layer> layers;
    for (std::size_t l = 0; l < tags.size(); ++l) {
      Layer layer;
      layer.weight = Tensor({dims[l + 1], dims[l]}, weights[l].get<std::vector<double>>());
      layer.bias = Tensor({dims[l + 1]}, biases[l].get<std::vector<double>>());
      layer.activation = activation_from_string(tags[l]);
      layers.push_back(std::move(layer));
    }
    Checkpoint cp{Network(std::move(layers)), {}};

    const auto& o = j.at("optimizer");
    OptimizerState& s = cp.optimizer;
    s.step = o.at("step").get<std::uint64_t>();
    s.learning_rate = o.at("learning_rate").get<double>();
    s.beta1 = o.at("beta1").get<double>();
    s.beta2 = o.at("beta2").get<double>();
    s.epsilon = o.at("epsilon").get<double>();
    const auto& m = o.at("first_moment");
    const auto& v = o.at("second_moment");
    if (m.size() != 2 * tags.size() || v.size() != 2 * tags.size()) {
      throw ConfigError("checkpoint optimizer moments do not match the layers");
    }
    for (std::size_t l = 0; l < tags.size(); ++l) {
      const auto& layer = cp.network.layers()[l];
      s.first_moment.emplace_back(layer.weight.shape(), m[2 * l].get<std::vector<double>>());
      s.first_moment.emplace_back(layer.bias.shape(), m[2 * l + 1].get<std::vector<double>>());
      s.second_moment.emplace_back(layer.weight.shape(), v[2 * l].get<std::vector<double>>());
      s.second_moment.emplace_back(layer.bias.shape(), v[2 * l + 1].get<std::vector<double>>());
    }
    return cp;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Network& net, const OptimizerState& opt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << checkpoint_to_json(net, opt).dump(1) << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace psmlc
