#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "psmlc/adam.hpp"
#include "psmlc/checkpoint.hpp"
#include "psmlc/loss.hpp"
#include "psmlc/network.hpp"

using namespace psmlc;

namespace {

Network identity_net() {
  Layer layer{Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::vector({0, 0}), Activation::identity};
  return Network(std::vector<Layer>{layer});
}

}  // namespace

TEST(Forward, IdentityNetworkPassesInputThrough) {
  Network net = identity_net();
  const Tensor out = net.forward(Tensor::matrix(1, 2, {1, 2}));
  EXPECT_EQ(out.data(), (std::vector<double>{1, 2}));
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  Network net({3, 5, 2});
  Rng rng(1);
  const Tensor out = net.forward(oracle::random_matrix(4, 3, rng));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, MatchesScalarLoopOracle) {
  Rng rng(11);
  Network net = Network::mlp({5, 7, 3}, rng);
  const Tensor x = oracle::random_matrix(6, 5, rng, -2, 2);
  const Tensor logits = net.forward(x);
  const auto ref = oracle::logits(net, x);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(logits(r, c), static_cast<double>(ref[r][c]), 1e-13);
  }
  EXPECT_EQ(net.predict(x), logits);
}

TEST(Forward, DimensionMismatchIsConfigError) {
  Network net({3, 2});
  EXPECT_THROW(net.forward(Tensor::matrix(1, 4)), ConfigError);
  EXPECT_THROW(Network(std::vector<std::size_t>{3}), ConfigError);
}

TEST(Forward, ConstructorRejectsNonChainingLayers) {
  Layer a{Tensor::matrix(3, 2), Tensor::vector({0, 0, 0}), Activation::relu};
  Layer b{Tensor::matrix(1, 4), Tensor::vector({0}), Activation::identity};
  EXPECT_THROW(Network(std::vector<Layer>{a, b}), ConfigError);
  Layer c{Tensor::matrix(1, 3), Tensor::vector({0}), Activation::relu};
  EXPECT_THROW(Network(std::vector<Layer>{a, c}), ConfigError);
}

TEST(Sigmoid, KnownValues) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(std::log(3.0)), 0.75, 1e-15);
  const double big = sigmoid(500.0);
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_LT(big, 1.0);
  EXPECT_GT(sigmoid(-700.0), 0.0);
  EXPECT_LT(sigmoid(700.0), 1.0);
}

TEST(Sigmoid, Monotone) {
  double prev = 0.0;
  for (double z = -40; z <= 40; z += 0.25) {
    const double p = sigmoid(z);
    EXPECT_GE(p, prev);
    prev = p;
  }
}

TEST(Bce, HandEvaluatedEntry) {
  // t = 1, p = 0.5, w+ = 0.75: loss = 0.75 ln 2.
  ClassWeights w{{0.75}, {0.25}, {1}, {3}};
  const auto r = masked_weighted_bce(Tensor::matrix(1, 1, {0.0}), Tensor::matrix(1, 1, {1.0}),
                                     Tensor::matrix(1, 1, {1.0}), w);
  EXPECT_NEAR(r.loss, 0.519860385419959, 1e-12);
  EXPECT_NEAR(r.loss, 0.75 * std::log(2.0), 1e-15);
  // d/dz = -w+ t (1 - p) = -0.375
  EXPECT_NEAR(r.grad[0], -0.375, 1e-15);
}

TEST(Bce, AllMaskedGivesZero) {
  Rng rng(2);
  const auto r = masked_weighted_bce(oracle::random_matrix(3, 4, rng, -5, 5), oracle::random_matrix(3, 4, rng, 0, 1),
                                     Tensor::matrix(3, 4, 0.0), oracle::random_weights(4, rng));
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(Bce, TargetOutsideUnitIntervalIsInputError) {
  const auto w = ClassWeights::uniform(1);
  EXPECT_THROW(masked_weighted_bce(Tensor::matrix(1, 1), Tensor::matrix(1, 1, {1.5}), Tensor::matrix(1, 1, {1.0}), w),
               InputError);
  EXPECT_THROW(masked_weighted_bce(Tensor::matrix(1, 2), Tensor::matrix(1, 2), Tensor::matrix(1, 2, 1.0), w),
               ConfigError);
}

TEST(Bce, MatchesProbabilityDomainOracle) {
  Rng rng(3);
  for (auto reduction : {Reduction::mean_all, Reduction::mean_masked}) {
    const Tensor z = oracle::random_matrix(5, 4, rng, -6, 6);
    const Tensor t = oracle::random_matrix(5, 4, rng, 0, 1);
    const Tensor m = oracle::random_mask(5, 4, rng);
    const auto w = oracle::random_weights(4, rng);
    oracle::Matrix zl(5, std::vector<long double>(4));
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 4; ++c) zl[r][c] = z(r, c);
    }
    EXPECT_NEAR(masked_weighted_bce(z, t, m, w, reduction).loss,
                static_cast<double>(oracle::loss_from_logits(zl, t, m, w, reduction)), 1e-13);
  }
}

TEST(Bce, LogitGradientMatchesFiniteDifferences) {
  Rng rng(4);
  const double h = 1e-5;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor z = oracle::random_matrix(3, 4, rng, -4, 4);
    const Tensor t = oracle::random_matrix(3, 4, rng, 0, 1);
    const Tensor m = oracle::random_mask(3, 4, rng);
    const auto w = oracle::random_weights(4, rng);
    const auto analytic = masked_weighted_bce(z, t, m, w);
    for (std::size_t i = 0; i < z.size(); ++i) {
      oracle::Matrix up(3, std::vector<long double>(4));
      oracle::Matrix down(3, std::vector<long double>(4));
      for (std::size_t j = 0; j < z.size(); ++j) {
        up[j / 4][j % 4] = z[j] + (i == j ? h : 0.0);
        down[j / 4][j % 4] = z[j] - (i == j ? h : 0.0);
      }
      const long double fd =
          (oracle::loss_from_logits(up, t, m, w) - oracle::loss_from_logits(down, t, m, w)) / (2.0L * h);
      EXPECT_LT(oracle::relative_error(analytic.grad[i], fd), 1e-5) << "trial " << trial << " entry " << i;
    }
  }
}

TEST(Bce, StableOverWideLogitRange) {
  Rng rng(5);
  for (double z = -30; z <= 30; z += 0.5) {
    const auto w = oracle::random_weights(1, rng);
    for (double t : {0.0, 0.125, 0.5, 0.875, 1.0}) {
      const auto r = masked_weighted_bce(Tensor::matrix(1, 1, {z}), Tensor::matrix(1, 1, {t}),
                                         Tensor::matrix(1, 1, {1.0}), w);
      ASSERT_TRUE(std::isfinite(r.loss));
      ASSERT_TRUE(r.grad.all_finite());
    }
  }
  // Far outside the range the logits form still holds.
  const auto r = masked_weighted_bce(Tensor::matrix(1, 2, {-700.0, 700.0}), Tensor::matrix(1, 2, {1.0, 0.0}),
                                     Tensor::matrix(1, 2, 1.0), ClassWeights::uniform(2));
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 700.0, 1e-9);
}

TEST(Bce, MeanMaskedDividesByActiveEntries) {
  const auto w = ClassWeights::uniform(2);
  const Tensor z = Tensor::matrix(2, 2, {0, 0, 0, 0});
  const Tensor t = Tensor::matrix(2, 2, {1, 1, 1, 1});
  const Tensor m = Tensor::matrix(2, 2, {1, 0, 0, 0});
  EXPECT_NEAR(masked_weighted_bce(z, t, m, w, Reduction::mean_all).loss, std::log(2.0) / 4, 1e-15);
  EXPECT_NEAR(masked_weighted_bce(z, t, m, w, Reduction::mean_masked).loss, std::log(2.0), 1e-15);
}

TEST(Backward, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(6);
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    Network net = Network::mlp({4, 6, 3}, rng);
    const Tensor x = oracle::random_matrix(5, 4, rng, -2, 2);
    const Tensor t = oracle::random_matrix(5, 3, rng, 0, 1);
    const Tensor m = oracle::random_mask(5, 3, rng);
    const auto w = oracle::random_weights(3, rng);
    const auto lr = masked_weighted_bce(net.forward(x), t, m, w);
    const Gradients g = net.backward(lr.grad);
    const auto fd = oracle::fd_parameter_gradients(
        net, [&](const Network& n) { return oracle::network_loss(n, x, t, m, w); }, h);
    std::size_t p = 0;
    for (const auto& lg : g) {
      for (const Tensor* a : {&lg.weight, &lg.bias}) {
        for (std::size_t i = 0; i < a->size(); ++i) {
          EXPECT_LT(oracle::relative_error((*a)[i], fd[p][i]), 1e-5) << "param tensor " << p << " index " << i;
        }
        ++p;
      }
    }
  }
}

TEST(Backward, WithoutForwardIsStateError) {
  Rng rng(7);
  Network net = Network::mlp({2, 3, 1}, rng);
  auto opt = OptimizerState::adam(net);
  EXPECT_THROW(net.backward(Tensor::matrix(1, 1)), StateError);
  net.forward(Tensor::matrix(1, 2));
  EXPECT_THROW(net.backward(Tensor::matrix(2, 1)), ConfigError);
  backward_and_step(net, opt, Tensor::matrix(1, 1));
  EXPECT_THROW(backward_and_step(net, opt, Tensor::matrix(1, 1)), StateError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Rng rng(8);
  Network net = Network::mlp({3, 4, 2}, rng);
  const Network before = net;
  auto opt = OptimizerState::adam(net);
  net.forward(Tensor::matrix(2, 3, 1.0));
  backward_and_step(net, opt, Tensor::matrix(2, 2, 0.0));
  EXPECT_EQ(opt.step, 1u);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    EXPECT_EQ(net.layers()[l].weight, before.layers()[l].weight);
    EXPECT_EQ(net.layers()[l].bias, before.layers()[l].bias);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // Hand trace, g = 0.3: m = 0.03, v = 9e-5, m_hat = 0.3, v_hat = 0.09,
  // step = lr * 0.3 / (0.3 + 1e-8).
  Network net({1, 1});
  auto opt = OptimizerState::adam(net, 1e-3);
  Gradients g{{Tensor::matrix(1, 1, {0.3}), Tensor::vector({0.0})}};
  adam_step(net, opt, g);
  EXPECT_NEAR(net.layers()[0].weight[0], -1e-3 * 0.3 / (0.3 + 1e-8), 1e-18);
  EXPECT_EQ(net.layers()[0].bias[0], 0.0);
  EXPECT_NEAR(opt.first_moment[0][0], 0.03, 1e-17);
  EXPECT_NEAR(opt.second_moment[0][0], 9e-5, 1e-19);
  // A constant gradient keeps each step close to lr.
  for (int i = 0; i < 5; ++i) {
    const double before = net.layers()[0].weight[0];
    adam_step(net, opt, g);
    EXPECT_NEAR(before - net.layers()[0].weight[0], 1e-3, 1e-9);
  }
  EXPECT_EQ(opt.step, 6u);
}

TEST(Adam, TenStepsAreBitReproducible) {
  auto run = [] {
    Rng rng(9);
    Network net = Network::mlp({4, 8, 3}, rng);
    auto opt = OptimizerState::adam(net);
    const auto w = oracle::random_weights(3, rng);
    for (int i = 0; i < 10; ++i) {
      const Tensor x = oracle::random_matrix(6, 4, rng);
      const Tensor t = oracle::random_matrix(6, 3, rng, 0, 1);
      const Tensor m = oracle::random_mask(6, 3, rng);
      const auto lr = masked_weighted_bce(net.forward(x), t, m, w);
      backward_and_step(net, opt, lr.grad);
    }
    return std::make_pair(net, opt);
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t l = 0; l < a.first.layers().size(); ++l) {
    EXPECT_EQ(a.first.layers()[l].weight, b.first.layers()[l].weight);
    EXPECT_EQ(a.first.layers()[l].bias, b.first.layers()[l].bias);
  }
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.second.step, 10u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(10);
  Network net = Network::mlp({5, 4, 3}, rng);
  auto opt = OptimizerState::adam(net, 3e-4);
  for (int i = 0; i < 3; ++i) {
    const auto lr = masked_weighted_bce(net.forward(oracle::random_matrix(4, 5, rng)),
                                        oracle::random_matrix(4, 3, rng, 0, 1), Tensor::matrix(4, 3, 1.0),
                                        ClassWeights::uniform(3));
    backward_and_step(net, opt, lr.grad);
  }
  const auto path = (std::filesystem::temp_directory_path() / "psmlc_checkpoint_test.json").string();
  save_checkpoint(net, opt, path);
  const Checkpoint cp = load_checkpoint(path);
  std::filesystem::remove(path);
  ASSERT_EQ(cp.network.dims(), net.dims());
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    EXPECT_EQ(cp.network.layers()[l].weight, net.layers()[l].weight);
    EXPECT_EQ(cp.network.layers()[l].bias, net.layers()[l].bias);
    EXPECT_EQ(cp.network.layers()[l].activation, net.layers()[l].activation);
  }
  EXPECT_EQ(cp.optimizer, opt);
}

TEST(Checkpoint, RejectsWrongVersionAndShapes) {
  Rng rng(11);
  Network net = Network::mlp({2, 2}, rng);
  auto j = checkpoint_to_json(net, OptimizerState::adam(net));
  auto bad_version = j;
  bad_version["format_version"] = 99;
  EXPECT_THROW(checkpoint_from_json(bad_version), ConfigError);
  auto bad_weights = j;
  bad_weights["weights"][0].push_back(1.0);
  EXPECT_THROW(checkpoint_from_json(bad_weights), ConfigError);
}
