#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "poem/nn.hpp"
#include "poem/random.hpp"

using namespace poem;

namespace {

MlpSpec spec_of(std::vector<int> sizes) {
  MlpSpec s;
  s.layer_sizes = std::move(sizes);
  return s;
}

ParamVector params_of(const MlpSpec& spec, std::vector<double> v) { return ParamVector(std::move(v), mlp_layout(spec)); }

}  // namespace

TEST(MlpSpec, RejectsDegenerateShapes) {
  EXPECT_THROW(spec_of({3}).validate(), std::invalid_argument);
  EXPECT_THROW(spec_of({3, 0, 1}).validate(), std::invalid_argument);
  EXPECT_NO_THROW(spec_of({1, 1}).validate());
  EXPECT_THROW(init_params(spec_of({2, 0}), 1), std::invalid_argument);
}

TEST(InitParams, ParameterCountFollowsLayout) {
  const auto p = init_params(spec_of({3, 4, 2}), 5);
  EXPECT_EQ(p.size(), 26u);
  EXPECT_EQ(p.layout().size(), 4u);
  EXPECT_EQ(p.block("layer1.bias").range, (ParamRange{24, 2}));
}

TEST(InitParams, BiasIsZeroAndSeedDeterministic) {
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    const auto p = init_params(spec_of({2, 1}), seed);
    EXPECT_EQ(p[p.block("layer0.bias").range.offset], 0.0);
    EXPECT_EQ(p, init_params(spec_of({2, 1}), seed));
  }
  EXPECT_FALSE(init_params(spec_of({2, 3}), 1) == init_params(spec_of({2, 3}), 2));
}

TEST(InitParams, WeightsWithinFanInLimitAndHeadScaled) {
  const auto spec = spec_of({4, 16, 3});
  const auto p = init_params(spec, 3, 0.01);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_LE(std::abs(p[i]), 0.5);
  const auto head = p.block("layer1.weight").range;
  for (std::size_t i = head.offset; i < head.end(); ++i) EXPECT_LE(std::abs(p[i]), 0.01 * 0.25);
}

TEST(ParamVector, LayoutMustCoverValues) {
  const auto spec = spec_of({1, 1});
  EXPECT_THROW(ParamVector({1.0}, mlp_layout(spec)), std::invalid_argument);
  ParamLayout gap = {{"a", {0, 1}}, {"b", {2, 1}}};
  EXPECT_THROW(ParamVector({1.0, 2.0, 3.0}, gap), std::invalid_argument);
}

TEST(ParamVector, ConcatShiftsRanges) {
  const auto a = init_params(spec_of({1, 2}), 1);
  const auto b = init_params(spec_of({2, 1}), 2);
  const auto c = concat(a, b);
  EXPECT_EQ(c.size(), a.size() + b.size());
  EXPECT_EQ(c.layout()[2].range.offset, a.size());
  EXPECT_EQ(c[a.size()], b[0]);
}

TEST(ParamVector, FlattenUnflattenRoundTripIsExact) {
  Rng rng(11);
  const auto spec = spec_of({3, 5, 4, 2});
  auto p = init_params(spec, 4);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = rng.normal() * 1e3;
  const auto layers = unflatten(spec, p.values());
  EXPECT_EQ(flatten(spec, layers), p);
  EXPECT_EQ(layers[0].weight.rows(), 5);
  EXPECT_EQ(layers[0].weight.cols(), 3);
}

TEST(ParamVector, BinaryRoundTripAndLittleEndianLayout) {
  const std::vector<double> values = {1.0, -0.0, 3.25e-300, std::nextafter(1.0, 2.0)};
  std::stringstream ss;
  write_param_values(ss, values);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 8u * values.size());
  EXPECT_EQ(bytes[0], 4);
  EXPECT_EQ(bytes[1], 0);
  // 1.0 = 0x3FF0000000000000, least significant byte first.
  EXPECT_EQ(static_cast<unsigned char>(bytes[4 + 7]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4 + 6]), 0xF0);
  const auto back = read_param_values(ss);
  ASSERT_EQ(back.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i]), std::bit_cast<std::uint64_t>(values[i]));
}

TEST(ParamVector, TruncatedBlobRejected) {
  std::stringstream ss;
  write_param_values(ss, std::vector<double>{1.0, 2.0});
  std::string bytes = ss.str();
  bytes.pop_back();
  std::stringstream cut(bytes);
  EXPECT_THROW(read_param_values(cut), std::runtime_error);
}

TEST(Forward, IdentityConstantAndTanh) {
  const auto lin = spec_of({1, 1});
  EXPECT_DOUBLE_EQ(forward(lin, params_of(lin, {1.0, 0.0}).values(), std::vector<double>{2.0})[0], 2.0);
  for (double x : {-3.0, 0.0, 7.5})
    EXPECT_DOUBLE_EQ(forward(lin, params_of(lin, {0.0, 0.5}).values(), std::vector<double>{x})[0], 0.5);
  const auto deep = spec_of({1, 1, 1});
  EXPECT_DOUBLE_EQ(forward(deep, params_of(deep, {1.0, 0.0, 1.0, 0.0}).values(), std::vector<double>{0.0})[0], 0.0);
  EXPECT_DOUBLE_EQ(forward(deep, params_of(deep, {1.0, 0.0, 1.0, 0.0}).values(), std::vector<double>{0.3})[0],
                   std::tanh(0.3));
}

TEST(Forward, DimensionMismatchRejected) {
  const auto spec = spec_of({2, 3, 1});
  const auto p = init_params(spec, 1);
  EXPECT_THROW(forward(spec, p.values(), std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(forward(spec, std::vector<double>(3, 0.0), std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST(Forward, BatchMatchesSingleSample) {
  const auto spec = spec_of({3, 6, 2});
  const auto p = init_params(spec, 8);
  Eigen::MatrixXd x(3, 4);
  x.setRandom();
  const auto tape = forward_batch(spec, p.values(), x);
  for (int j = 0; j < 4; ++j) {
    const std::vector<double> col(x.col(j).data(), x.col(j).data() + 3);
    const auto y = forward(spec, p.values(), col);
    EXPECT_EQ(y[0], tape.output()(0, j));
    EXPECT_EQ(y[1], tape.output()(1, j));
  }
}

TEST(Gradient, LinearChainRule) {
  const auto spec = spec_of({1, 1});
  Eigen::MatrixXd x(1, 1);
  x << 2.0;
  const auto g = gradient(spec, params_of(spec, {0.7, -0.1}), x, [](const Eigen::MatrixXd& out, Eigen::MatrixXd& d) {
    d.setOnes();
    return out.sum();
  });
  EXPECT_DOUBLE_EQ(g.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(g.grad[1], 1.0);
}

TEST(Gradient, SquaredOutput) {
  const auto spec = spec_of({1, 1});
  Eigen::MatrixXd x(1, 1);
  x << 1.0;
  const auto g = gradient(spec, params_of(spec, {3.0, 0.0}), x, [](const Eigen::MatrixXd& out, Eigen::MatrixXd& d) {
    d = 2.0 * out;
    return out.squaredNorm();
  });
  EXPECT_DOUBLE_EQ(g.loss, 9.0);
  EXPECT_DOUBLE_EQ(g.grad[0], 6.0);
}

TEST(Gradient, MatchesCentralDifferencesOnRandomNets) {
  Rng rng(2024);
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<int> sizes = {1 + static_cast<int>(rng.next() % 4)};
    const int depth = 1 + static_cast<int>(rng.next() % 3);
    for (int l = 0; l < depth; ++l) sizes.push_back(1 + static_cast<int>(rng.next() % 6));
    const auto spec = spec_of(sizes);
    ASSERT_LE(spec.num_params(), 200u);
    auto p = init_params(spec, rng.next());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = rng.uniform(-1.5, 1.5);
    Eigen::MatrixXd x(sizes.front(), 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    Eigen::MatrixXd target(sizes.back(), 5);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();
    // Smooth loss: sum of squared error plus a cubic term.
    const OutputLoss loss = [&target](const Eigen::MatrixXd& out, Eigen::MatrixXd& d) {
      const Eigen::ArrayXXd e = (out - target).array();
      d = (2.0 * e + 0.3 * e.square()).matrix();
      return e.square().sum() + 0.1 * e.cube().sum();
    };
    const auto g = gradient(spec, p, x, loss);
    Eigen::MatrixXd dummy;
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto q = p;
      q[i] += h;
      dummy = Eigen::MatrixXd::Zero(sizes.back(), 5);
      const double up = loss(forward_batch(spec, q.values(), x).output(), dummy);
      q[i] -= 2 * h;
      const double down = loss(forward_batch(spec, q.values(), x).output(), dummy);
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g.grad[i]) / std::max({std::abs(fd), std::abs(g.grad[i]), 1e-6}));
    }
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Gradient, NonFiniteLossReported) {
  const auto spec = spec_of({1, 1});
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(1, 1);
  EXPECT_THROW(gradient(spec, params_of(spec, {1.0, 0.0}), x,
                        [](const Eigen::MatrixXd&, Eigen::MatrixXd&) { return std::nan(""); }),
               numerical_error);
}

TEST(Adam, ZeroGradientIsIdentity) {
  const auto spec = spec_of({2, 3, 1});
  auto p = init_params(spec, 1);
  const auto before = p;
  auto state = AdamState::for_size(p.size(), 1e-2);
  const auto zero = ParamVector::zeros_like(p);
  for (int k = 0; k < 25; ++k) std::tie(state, p) = adam_step(state, p, zero);
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.step_count, 25);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  const auto spec = spec_of({1, 1});
  auto p = params_of(spec, {0.0, 0.0});
  auto g = params_of(spec, {1.0, -1.0});
  auto state = AdamState::for_size(2, 1e-3);
  std::tie(state, p) = adam_step(state, p, g);
  EXPECT_NEAR(p[0], -1e-3, 1e-10);
  EXPECT_NEAR(p[1], 1e-3, 1e-10);
  EXPECT_EQ(state.step_count, 1);
}

TEST(Adam, TwoStepsMatchScalarRecurrence) {
  // Hand-rolled reference for a scalar with fixed gradient g.
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.37;
  double theta = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t)), vhat = v / (1 - std::pow(b2, t));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  const auto spec = spec_of({1, 1});
  auto p = params_of(spec, {0.5, 0.0});
  const auto grad = params_of(spec, {g, 0.0});
  auto state = AdamState::for_size(2, lr);
  std::tie(state, p) = adam_step(state, p, grad);
  std::tie(state, p) = adam_step(state, p, grad);
  EXPECT_NEAR(p[0], theta, 1e-15);
  EXPECT_GE(state.second_moment[0], 0.0);
}

TEST(Adam, ShapeMismatchRejected) {
  const auto spec = spec_of({1, 1});
  auto state = AdamState::for_size(3);
  EXPECT_THROW(adam_step(state, params_of(spec, {0, 0}), params_of(spec, {0, 0})), std::invalid_argument);
}
