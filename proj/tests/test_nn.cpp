#include <cmath>
#include <cstdio>
#include <filesystem>

#include <gtest/gtest.h>

#include "rapid/nn/adam.hpp"
#include "rapid/nn/checkpoint.hpp"
#include "rapid/nn/mlp.hpp"
#include "support/gradcheck.hpp"

using namespace rapid;
using namespace rapid::nn;

namespace {

// Straight-loop reimplementation of the forward pass used as an oracle.
Eigen::VectorXd naive_forward(const NetworkSpec& spec, const ParamVector& p, const Eigen::VectorXd& x) {
  std::vector<double> a(x.data(), x.data() + x.size());
  Eigen::Index off = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.layer_in(l), out = spec.layer_out(l);
    std::vector<double> z(static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
      double acc = 0.0;
      for (int i = 0; i < in; ++i) acc += p[off + static_cast<Eigen::Index>(i) * out + o] * a[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = acc;
    }
    off += static_cast<Eigen::Index>(in) * out;
    for (int o = 0; o < out; ++o) z[static_cast<std::size_t>(o)] += p[off + o];
    off += out;
    const bool last = l == spec.num_layers() - 1;
    for (int o = 0; o < out; ++o) {
      double& v = z[static_cast<std::size_t>(o)];
      if (!last) v = std::tanh(v);
      else if (spec.output_activation == OutputActivation::bounded) v = spec.output_bound[o] * std::tanh(v);
    }
    a = z;
  }
  return Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

NetworkSpec small_spec(int in, std::vector<int> hidden, int out) {
  NetworkSpec s;
  s.input_dim = in;
  s.hidden = std::move(hidden);
  s.output_dim = out;
  return s;
}

}  // namespace

TEST(Forward, ZeroFinalLayerGivesZeroOutput) {
  Rng rng(1);
  const auto spec = small_spec(5, {16, 16}, 3);
  const auto p = init_params(spec, rng, /*zero_final_layer=*/true);
  const Eigen::VectorXd y = forward(spec, p, standard_normal(rng, 5));
  EXPECT_EQ(y, Eigen::VectorXd::Zero(3));
}

TEST(Forward, IdentityLinearLayer) {
  const auto spec = small_spec(4, {}, 4);
  ParamVector p = ParamVector::Zero(spec.param_count());
  weight(p, layout(spec)[0]) = Eigen::MatrixXd::Identity(4, 4);
  const Eigen::VectorXd x = (Eigen::VectorXd(4) << 1.5, -2.0, 0.25, 7.0).finished();
  EXPECT_EQ(forward(spec, p, x), x);
}

TEST(Forward, MatchesNaiveReimplementation) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = oracle::random_draw(rng);
    const Eigen::VectorXd fast = forward(d.spec, d.params, d.input);
    const Eigen::VectorXd slow = naive_forward(d.spec, d.params, d.input);
    EXPECT_LT((fast - slow).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, BatchColumnsMatchSingleEvaluation) {
  Rng rng(3);
  const auto spec = small_spec(3, {8, 8}, 2);
  const auto p = init_params(spec, rng);
  const Eigen::MatrixXd X = standard_normal(rng, 3, 5);
  const Eigen::MatrixXd Y = forward_batch(spec, p, X);
  for (int j = 0; j < 5; ++j) EXPECT_LT((Y.col(j) - forward(spec, p, X.col(j))).norm(), 1e-12);
}

TEST(Forward, RejectsNonFiniteInput) {
  Rng rng(1);
  const auto spec = small_spec(2, {4}, 1);
  const auto p = init_params(spec, rng);
  Eigen::VectorXd x(2);
  x << 1.0, std::nan("");
  try {
    forward(spec, p, x);
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kNonFinite);
  }
}

TEST(Forward, RejectsWrongInputDimension) {
  Rng rng(1);
  const auto spec = small_spec(2, {4}, 1);
  const auto p = init_params(spec, rng);
  EXPECT_THROW(forward(spec, p, Eigen::VectorXd::Zero(3)), Error);
}

TEST(Forward, DeterministicBitwise) {
  Rng rng(11);
  const auto d = oracle::random_draw(rng);
  const auto a = forward(d.spec, d.params, d.input);
  const auto b = forward(d.spec, d.params, d.input);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())));
  const auto ga = grad_params(d.spec, d.params, d.input, d.upstream);
  const auto gb = grad_params(d.spec, d.params, d.input, d.upstream);
  EXPECT_EQ(0, std::memcmp(ga.data(), gb.data(), sizeof(double) * static_cast<std::size_t>(ga.size())));
}

TEST(Gradients, LinearLayerClosedForm) {
  Rng rng(5);
  const auto spec = small_spec(3, {}, 2);
  const auto p = init_params(spec, rng);
  const auto sl = layout(spec)[0];
  const Eigen::VectorXd x = standard_normal(rng, 3), u = standard_normal(rng, 2);
  const Eigen::MatrixXd W = weight(p, sl);
  EXPECT_LT((grad_input(spec, p, x, u) - W.transpose() * u).norm(), 1e-14);
  const ParamVector g = grad_params(spec, p, x, u);
  EXPECT_LT((Eigen::MatrixXd(weight(g, sl)) - u * x.transpose()).norm(), 1e-14);
  EXPECT_LT((Eigen::VectorXd(bias(g, sl)) - u).norm(), 1e-14);
}

TEST(Gradients, ConstantNetworkHasZeroEarlierGradients) {
  Rng rng(2);
  const auto spec = small_spec(3, {5}, 2);
  ParamVector p = ParamVector::Zero(spec.param_count());
  const auto sl = layout(spec);
  bias(p, sl[1]) << 0.3, -0.7;
  const Eigen::VectorXd x = standard_normal(rng, 3), u = standard_normal(rng, 2);
  EXPECT_EQ(grad_input(spec, p, x, u), Eigen::VectorXd::Zero(3));
  const ParamVector g = grad_params(spec, p, x, u);
  EXPECT_EQ(Eigen::MatrixXd(weight(g, sl[0])), Eigen::MatrixXd::Zero(5, 3));
}

TEST(Gradients, MatchCentralFiniteDifferences) {
  Rng rng(2024);
  double worst_p = 0.0, worst_x = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = oracle::random_draw(rng);
    worst_p = std::max(worst_p, oracle::max_rel_error(grad_params(d.spec, d.params, d.input, d.upstream),
                                                       oracle::fd_grad_params(d.spec, d.params, d.input, d.upstream)));
    worst_x = std::max(worst_x, oracle::max_rel_error(grad_input(d.spec, d.params, d.input, d.upstream),
                                                       oracle::fd_grad_input(d.spec, d.params, d.input, d.upstream)));
  }
  EXPECT_LE(worst_p, 1e-4);
  EXPECT_LE(worst_x, 1e-4);
}

TEST(Init, WeightVarianceIsInverseFanIn) {
  Rng rng(9);
  const auto spec = small_spec(200, {300}, 1);
  const auto p = init_params(spec, rng);
  const Eigen::MatrixXd W = weight(p, layout(spec)[0]);
  const double var = W.array().square().mean();
  EXPECT_NEAR(var, 1.0 / 200.0, 0.05 / 200.0);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ParamVector p = (ParamVector(3) << 1.0, -2.0, 3.0).finished();
  const ParamVector before = p;
  auto st = OptimizerState::for_params(3, 0.1);
  for (int i = 0; i < 10; ++i) adam_step(st, p, Eigen::VectorXd::Zero(3));
  EXPECT_EQ(p, before);
}

TEST(Adam, MinimizesQuadratic) {
  ParamVector p = ParamVector::Zero(1);
  auto st = OptimizerState::for_params(1, 0.1);
  for (int i = 0; i < 500; ++i) adam_step(st, p, Eigen::VectorXd::Constant(1, 2.0 * (p[0] - 3.0)));
  EXPECT_LT(std::abs(p[0] - 3.0), 1e-3);
}

TEST(Adam, MaximizeReachesSamePoint) {
  ParamVector p = ParamVector::Zero(1);
  auto st = OptimizerState::for_params(1, 0.1);
  // gradient of -(p - 3)^2
  for (int i = 0; i < 500; ++i)
    adam_step(st, p, Eigen::VectorXd::Constant(1, -2.0 * (p[0] - 3.0)), Direction::maximize);
  EXPECT_LT(std::abs(p[0] - 3.0), 1e-3);
}

TEST(Adam, NonFiniteGradientIsSkippedAndCounted) {
  ParamVector p = ParamVector::Ones(2);
  auto st = OptimizerState::for_params(2, 0.1);
  Eigen::VectorXd g(2);
  g << 1.0, std::numeric_limits<double>::infinity();
  EXPECT_FALSE(adam_step(st, p, g));
  EXPECT_EQ(st.skipped, 1);
  EXPECT_EQ(st.step, 0);
  EXPECT_EQ(p, ParamVector::Ones(2));
}

class CheckpointFile : public ::testing::Test {
 protected:
  std::string path = (std::filesystem::temp_directory_path() / "rapid_test_ckpt.bin").string();
  void TearDown() override { std::filesystem::remove(path); }
};

TEST_F(CheckpointFile, RoundTripIsBitExact) {
  Rng rng(4);
  Checkpoint ck;
  ck.kind = "test";
  ck.metadata = R"({"seed":4})";
  auto spec = small_spec(3, {7, 5}, 2);
  spec.output_activation = OutputActivation::bounded;
  spec.output_bound = Eigen::VectorXd::Constant(2, 1.5);
  auto net = make_network(spec, rng);
  auto opt = OptimizerState::for_params(net.params.size(), 1e-3);
  adam_step(opt, net.params, standard_normal(rng, net.params.size()));
  ck.networks.push_back({"policy", net, opt});
  ck.networks.push_back({"other", make_network(small_spec(2, {}, 1), rng), std::nullopt});
  ck.arrays["stats.mean"] = {0.1, -0.2, 1.0 / 3.0};
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(serialize(back).bytes(), serialize(ck).bytes());
  EXPECT_EQ(back.network("policy").net.spec, spec);
  EXPECT_EQ(back.network("policy").net.params, net.params);
  EXPECT_EQ(back.network("policy").optimizer->second_moment, opt.second_moment);
  EXPECT_FALSE(back.network("other").optimizer.has_value());
}

TEST_F(CheckpointFile, RejectsBadMagicAndTruncation) {
  Rng rng(4);
  Checkpoint ck;
  ck.kind = "test";
  ck.networks.push_back({"net", make_network(small_spec(2, {3}, 1), rng), std::nullopt});
  auto bytes = serialize(ck).bytes();

  auto tampered = bytes;
  tampered[0] = 'X';
  io::Reader r1(tampered);
  EXPECT_THROW(deserialize(r1), Error);

  std::vector<unsigned char> cut(bytes.begin(), bytes.end() - 5);
  io::Reader r2(cut);
  try {
    deserialize(r2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::kFormat);
  }
}
