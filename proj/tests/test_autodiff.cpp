#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

namespace salted {
namespace {

using testing::BuildFn;
using testing::gradcheck;
using testing::GraphD;
using testing::random_away_from_zero;
using testing::random_tensor;
using testing::VarD;

constexpr double kTolerance = 1e-4;
constexpr int kInstances = 20;

std::uint32_t pick(Rng& rng, std::uint32_t lo, std::uint32_t hi) {
  return lo + static_cast<std::uint32_t>(rng.below(hi - lo + 1));
}

/// Scalar probe: sum(layer(x) * r) with fixed random r, so every output
/// element carries a distinct upstream gradient.
BuildFn probe_layer(const LayerSpec& spec, std::size_t n_params, Tensor<double> r) {
  return [spec, n_params, r](GraphD& g, const std::vector<VarD>& v) {
    const std::vector<VarD> params(v.begin() + 1, v.begin() + 1 + static_cast<std::ptrdiff_t>(n_params));
    std::optional<VarD> extra;
    if (v.size() > 1 + n_params) extra = v.back();
    const VarD y = record_layer<double>(g, spec, params, v[0], extra);
    return g.weighted_sum(y, r);
  };
}

void check_layer(const LayerSpec& spec, const Shape& x_sample, Rng& rng, bool relu_safe = false,
                 std::optional<Shape> extra_sample = std::nullopt) {
  const std::size_t n = 1 + rng.below(2);
  std::vector<Tensor<double>> leaves;
  leaves.push_back(relu_safe ? random_away_from_zero<double>(batched(n, x_sample), rng)
                             : random_tensor<double>(batched(n, x_sample), rng));
  for (const Shape& s : param_shapes(spec)) leaves.push_back(random_tensor<double>(s, rng));
  if (extra_sample) leaves.push_back(random_tensor<double>(batched(n, *extra_sample), rng));
  const Shape out = batched(n, infer_output_shape(spec, x_sample));
  const auto result =
      gradcheck(leaves, probe_layer(spec, param_shapes(spec).size(), random_tensor<double>(out, rng)));
  EXPECT_GT(result.checked, 0u);
  EXPECT_LT(result.max_rel_error, kTolerance) << to_string(spec.kind);
}

TEST(Backward, SumGivesOnes) {
  Graph<float> g;
  const auto x = g.input(Tensorf({2, 3}, 0.5f), true);
  g.backward(g.sum(x));
  EXPECT_EQ(g.grad(x), Tensorf({2, 3}, 1.0f));
}

TEST(Backward, EmptyGraphThrows) {
  Graph<float> g;
  try {
    g.backward(0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoRecordedGraph);
  }
}

TEST(Backward, IsDeterministic) {
  Rng rng(1);
  const LayerSpec spec = LayerSpec::conv2d(2, 2, 3, 1, 1, 4, 4);
  const auto params = init_params(spec, rng);
  const Tensorf x = random_tensor<float>({2, 2, 4, 4}, rng);
  auto run = [&] {
    Graph<float> g;
    const auto xv = g.input(x, true);
    std::vector<Graph<float>::Var> pv;
    for (const auto& p : params) pv.push_back(g.parameter(p));
    const auto y = record_layer<float>(g, spec, pv, xv);
    g.backward(g.sum(y));
    return std::vector<Tensorf>{g.grad(xv), g.grad(pv[0]), g.grad(pv[1])};
  };
  const auto a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].identical(b[i]));
}

TEST(Loss, UniformLogitsGiveLogK) {
  Graph<double> g;
  const auto z = g.input(Tensor<double>({4}, 0.3));
  Tensor<double> target({4});
  target[2] = 1.0;
  EXPECT_NEAR(g.value(g.softmax_cross_entropy(z, target))[0], std::log(4.0), 1e-12);
}

TEST(Loss, SaturatedLogitsGiveZero) {
  Graph<double> g;
  const auto z = g.input(Tensor<double>::from({30, -30, -30}));
  const Tensor<double> target = Tensor<double>::from({1, 0, 0});
  const double loss = g.value(g.softmax_cross_entropy(z, target))[0];
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-9);
}

TEST(Loss, MatchesDirectFormula) {
  Graph<double> g;
  const auto z = g.input(Tensor<double>::from({0.1, 0.7, 0.2}));
  const double direct = -std::log(std::exp(0.7) / (std::exp(0.1) + std::exp(0.7) + std::exp(0.2)));
  EXPECT_NEAR(g.value(g.softmax_cross_entropy(z, Tensor<double>::from({0, 1, 0})))[0], direct, 1e-12);
}

TEST(Loss, GradientIsSoftmaxMinusOneHot) {
  const Tensor<double> logits = Tensor<double>::from({1, 2, 3});
  const Tensor<double> target = Tensor<double>::from({0, 0, 1});
  Graph<double> g;
  const auto z = g.parameter(logits);
  g.backward(g.softmax_cross_entropy(z, target));
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const double closed[] = {std::exp(1.0) / denom, std::exp(2.0) / denom, std::exp(3.0) / denom - 1.0};
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(g.grad(z)[i], closed[i], 1e-12);

  const auto fd = gradcheck({logits}, [target](GraphD& gg, const std::vector<VarD>& v) {
    return gg.softmax_cross_entropy(v[0], target);
  });
  EXPECT_LT(fd.max_rel_error, kTolerance);
}

TEST(Loss, RejectsBadTargets) {
  Graph<double> g;
  const auto z = g.input(Tensor<double>::from({1, 2, 3}));
  try {
    g.softmax_cross_entropy(z, Tensor<double>::from({0, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::LengthMismatch);
  }
  for (const auto& bad : {Tensor<double>::from({0, 1, 1}), Tensor<double>::from({0, 0, 0}),
                          Tensor<double>::from({0, 0.5, 0.5})}) {
    try {
      g.softmax_cross_entropy(z, bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::NotOneHot);
    }
  }
}

TEST(GradCheck, FullyConnected) {
  Rng rng(10);
  for (int i = 0; i < kInstances; ++i) {
    const auto in = pick(rng, 1, 4), out = pick(rng, 1, 4);
    check_layer(LayerSpec::fully_connected(in, out), {in}, rng);
  }
}

TEST(GradCheck, Conv2D) {
  Rng rng(11);
  for (int i = 0; i < kInstances; ++i) {
    const auto c = pick(rng, 1, 2), o = pick(rng, 1, 2), k = pick(rng, 1, 3 - (c * o > 2 ? 1 : 0));
    const auto s = pick(rng, 1, 2), p = pick(rng, 0, k - 1);
    const auto h = pick(rng, k, 4);
    check_layer(LayerSpec::conv2d(c, o, k, s, p, h, h), {c, h, h}, rng);
  }
}

TEST(GradCheck, TransposedConv2D) {
  Rng rng(12);
  for (int i = 0; i < kInstances; ++i) {
    const auto c = pick(rng, 1, 2), o = pick(rng, 1, 2), k = pick(rng, 1, 3 - (c * o > 2 ? 1 : 0));
    const auto s = pick(rng, 1, 2), h = pick(rng, 1, 3);
    const std::uint32_t full = (h - 1) * s + k;
    const auto p = pick(rng, 0, (full - 1) / 2);
    check_layer(LayerSpec::conv_transpose2d(c, o, k, s, p, h, h), {c, h, h}, rng);
  }
}

TEST(GradCheck, ReLU) {
  Rng rng(13);
  for (int i = 0; i < kInstances; ++i) {
    check_layer(LayerSpec::relu(), {pick(rng, 1, 3), pick(rng, 1, 4)}, rng, true);
  }
}

TEST(GradCheck, Flatten) {
  Rng rng(14);
  for (int i = 0; i < kInstances; ++i) {
    const Shape in{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3)};
    check_layer(LayerSpec::flatten(in), in, rng);
  }
}

TEST(GradCheck, ConcatChannels) {
  Rng rng(15);
  for (int i = 0; i < kInstances; ++i) {
    const auto a = pick(rng, 1, 3), b = pick(rng, 1, 3), h = pick(rng, 1, 2);
    check_layer(LayerSpec::concat_channels(a, b), {a, h, h}, rng, false, Shape{b, h, h});
  }
}

TEST(GradCheck, SoftmaxOutput) {
  Rng rng(16);
  for (int i = 0; i < kInstances; ++i) {
    const auto k = pick(rng, 2, 6);
    check_layer(LayerSpec::softmax_output(k), {k}, rng);
  }
}

TEST(GradCheck, CrossEntropyLoss) {
  Rng rng(17);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t n = 1 + rng.below(4), k = 2 + rng.below(5);
    std::vector<std::size_t> targets(n);
    for (auto& t : targets) t = rng.below(k);
    const auto r = gradcheck({random_tensor<double>({n, k}, rng, -3, 3)},
                             [targets](GraphD& g, const std::vector<VarD>& v) {
                               return g.softmax_cross_entropy(v[0], targets);
                             });
    EXPECT_LT(r.max_rel_error, kTolerance);
  }
}

// A two-layer chain with a ReLU in between exercises gradient accumulation
// through shared nodes.
TEST(GradCheck, ComposedChain) {
  Rng rng(18);
  for (int i = 0; i < kInstances; ++i) {
    const LayerSpec fc1 = LayerSpec::fully_connected(3, 4), fc2 = LayerSpec::fully_connected(4, 3);
    // |w1 x| <= 0.9 < |b1|, so hidden pre-activations stay away from the kink.
    std::vector<Tensor<double>> leaves{random_tensor<double>({2, 3}, rng),
                                       random_tensor<double>({4, 3}, rng, -0.3, 0.3),
                                       random_away_from_zero<double>({4}, rng, 1.5, 2.0),
                                       random_tensor<double>({3, 4}, rng), random_tensor<double>({3}, rng)};
    const std::vector<std::size_t> targets{0, 2};
    const auto r = gradcheck(leaves, [&](GraphD& g, const std::vector<VarD>& v) {
      const std::vector<VarD> p1{v[1], v[2]}, p2{v[3], v[4]};
      const VarD h = g.relu(record_layer<double>(g, fc1, p1, v[0]));
      return g.softmax_cross_entropy(record_layer<double>(g, fc2, p2, h), targets);
    });
    EXPECT_LT(r.max_rel_error, kTolerance);
  }
}

}  // namespace
}  // namespace salted
