#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "amlhp/nn.hpp"
#include "support/gradcheck.hpp"
#include "support/kernel_suite.hpp"
#include "support/oracles.hpp"

using namespace amlhp;
using namespace amlhp::nn;
using namespace amlhp::testing;

namespace {

template <typename Layer>
void set_all(Layer& layer, double v) {
  ParamRefs<double> refs;
  layer.collect(refs);
  for (auto* p : refs) std::fill(p->value.begin(), p->value.end(), v);
}

void identity(Param<double>& w, std::size_t n) {
  std::fill(w.value.begin(), w.value.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) w.value[i * n + i] = 1.0;
}

Tensor<double> random_tensor(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  fill_uniform(t, rng);
  return t;
}

}  // namespace

TEST(SepConv1D, IdentityConfiguration) {
  SepConv1D<double> conv("c", 3, 3, 1);
  set_all(conv, 0.0);
  std::fill(conv.dw_weight.value.begin(), conv.dw_weight.value.end(), 1.0);
  identity(conv.pw_weight, 3);
  Rng rng(1);
  const auto x = random_tensor({2, 3, 9}, rng);
  EXPECT_EQ(conv.forward(x), x);
}

TEST(SepConv1D, ParameterCountFormula) {
  EXPECT_EQ(SepConv1D<double>::param_count(4, 8, 3), 56u);
  SepConv1D<double> conv("c", 4, 8, 3);
  ParamRefs<double> refs;
  conv.collect(refs);
  std::size_t n = 0;
  for (auto* p : refs) n += p->size();
  EXPECT_EQ(n, 56u);
}

TEST(SepConv1D, MatchesLoopOracles) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const std::size_t cin = 1 + rng.below(4), cout = 1 + rng.below(5), k = 1 + rng.below(8), len = 1 + rng.below(12);
    SepConv1D<double> conv("c", cin, cout, k);
    ParamRefs<double> refs;
    conv.collect(refs);
    detail::init_params(refs, rng);
    const auto x = random_tensor({2, cin, len}, rng);
    const std::vector<double> xv(x.values().begin(), x.values().end());
    const auto y = conv.forward(x);
    EXPECT_LT(max_abs_diff(y, naive_sepconv(xv, 2, cin, len, conv)), 1e-12) << "seed " << seed;
    EXPECT_LT(max_abs_diff(y, direct_conv(xv, 2, cin, len, conv)), 1e-12) << "seed " << seed;
  }
}

TEST(ResConv1D, ZeroConvIsPureResidual) {
  ResConv1D<double> block("r", 4, 4, 3, 3);
  EXPECT_FALSE(block.has_projection());
  set_all(block, 0.0);
  Rng rng(2);
  const auto x = random_tensor({2, 4, 10}, rng);
  EXPECT_EQ(block.forward(x), x);
}

TEST(ResConv1D, NegativePreActivationsContributeNothing) {
  ResConv1D<double> block("r", 2, 2, 3, 3);
  set_all(block, 0.0);
  std::fill(block.conv().pw_bias.value.begin(), block.conv().pw_bias.value.end(), -1.0);
  Rng rng(3);
  const auto x = random_tensor({1, 2, 7}, rng);
  EXPECT_EQ(block.forward(x), x);
}

TEST(ResConv1D, ProjectionWhenWidthsDiffer) {
  ResConv1D<double> block("r", 1, 4, 3, 3);
  EXPECT_TRUE(block.has_projection());
  EXPECT_EQ(block.proj.size(), 4u);
}

TEST(MaxPool, WindowIsCenteredAndIgnoresOutOfRange) {
  Tensor<double> x({1, 1, 5});
  const double v[] = {-3, 1, -2, -5, -4};
  std::copy(v, v + 5, x.data());
  const auto y = max_pool_same(x, 3, static_cast<std::vector<std::uint32_t>*>(nullptr));
  const double want[] = {1, 1, 1, -2, -4};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(y[i], want[i]) << i;
}

TEST(LayerNorm, ConstantRowMapsToShift) {
  LayerNorm<double> ln("ln", 4);
  Tensor<double> x({1, 4}, 5.0);
  const auto y = ln.forward(x);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementRow) {
  LayerNorm<double> ln("ln", 2);
  Tensor<double> x({1, 2});
  x[0] = 1, x[1] = -1;
  const auto y = ln.forward(x);
  const double expect = 1.0 / std::sqrt(1.0 + LayerNorm<double>::kDefaultEps);
  EXPECT_NEAR(y[0], expect, 1e-15);
  EXPECT_NEAR(y[1], -expect, 1e-15);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  LayerNorm<double> ln("ln", 16);
  Rng rng(4);
  const auto x = random_tensor({5, 16}, rng);
  const auto y = ln.forward(x);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mean += y(r, j);
    mean /= 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y(r, j) - mean) * (y(r, j) - mean);
    var /= 16;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);  // eps keeps it slightly under 1
  }
}

TEST(Softmax, RowsSumToOneAndStayInRange) {
  Rng rng(5);
  std::vector<double> v(7 * 11);
  for (auto& x : v) x = rng.uniform(-50, 50);
  softmax_rows(v.data(), 7, 11);
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 11; ++j) {
      const double p = v[r * 11 + j];
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, ZeroQueryKeyGivesUniformMixing) {
  const std::size_t d = 4, tokens = 5;
  MultiHeadSelfAttention<double> attn("a", d, 2);
  set_all(attn, 0.0);
  identity(attn.w_v, d);
  identity(attn.w_o, d);
  Rng rng(6);
  const auto x = random_tensor({1, tokens, d}, rng);
  const auto y = attn.forward(x);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0;
    for (std::size_t t = 0; t < tokens; ++t) mean += x(0, t, j);
    mean /= tokens;
    for (std::size_t t = 0; t < tokens; ++t) EXPECT_NEAR(y(0, t, j), mean, 1e-14);
  }
}

TEST(Attention, SingleTokenIgnoresQueryAndKey) {
  const std::size_t d = 8;
  MultiHeadSelfAttention<double> attn("a", d, 4);
  Rng rng(7);
  ParamRefs<double> refs;
  attn.collect(refs);
  detail::init_params(refs, rng);
  const auto x = random_tensor({1, 1, d}, rng);
  std::vector<double> v(d, 0.0), want(d, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < d; ++i) v[j] += x[i] * attn.w_v.value[i * d + j];
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < d; ++i) want[j] += v[i] * attn.w_o.value[i * d + j];
  const auto y = attn.forward(x);
  for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(y[j], want[j], 1e-14);
}

TEST(Attention, MatchesLoopOracle) {
  Rng rng(8);
  MultiHeadSelfAttention<double> attn("a", 4, 2);
  ParamRefs<double> refs;
  attn.collect(refs);
  detail::init_params(refs, rng);
  const auto x = random_tensor({1, 3, 4}, rng);
  const auto y = attn.forward(x);
  EXPECT_LT(max_abs_diff(y, naive_mhsa(std::vector<double>(x.values().begin(), x.values().end()), 1, 3, attn)),
            1e-12);
}

TEST(Attention, TokenPermutationEquivariance) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const std::size_t d = 8, tokens = 2 + rng.below(9), b = 2;
    FusionLayer<double> layer("f", d, 4, 16, 0.0);
    ParamRefs<double> refs;
    layer.collect(refs);
    detail::init_params(refs, rng);
    const auto x = random_tensor({b, tokens, d}, rng);
    std::vector<std::size_t> perm(tokens);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Tensor<double> xp({b, tokens, d});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < tokens; ++t)
        for (std::size_t j = 0; j < d; ++j) xp(i, t, j) = x(i, perm[t], j);

    const auto ya = layer.attn.forward(x), yp = layer.attn.forward(xp);
    const auto fa = layer.forward(x, Mode::Eval, nullptr), fp = layer.forward(xp, Mode::Eval, nullptr);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < tokens; ++t)
        for (std::size_t j = 0; j < d; ++j) {
          EXPECT_NEAR(yp(i, t, j), ya(i, perm[t], j), 1e-10);
          EXPECT_NEAR(fp(i, t, j), fa(i, perm[t], j), 1e-10);
        }
  }
}

TEST(FusionLayer, ZeroBranchesLeaveDoubleLayerNorm) {
  const std::size_t d = 8;
  FusionLayer<double> layer("f", d, 2, 16, 0.1);
  set_all(layer.attn, 0.0);
  set_all(layer.ffn, 0.0);
  Rng rng(9);
  const auto x = random_tensor({2, 3, d}, rng);
  const auto want = layer.ln2.forward(layer.ln1.forward(x));
  const auto got = layer.forward(x, Mode::Eval, nullptr);
  EXPECT_LT(max_abs_diff(got, std::vector<double>(want.values().begin(), want.values().end())), 1e-14);
}

TEST(FusionLayer, TrainEqualsEvalWithoutDropout) {
  FusionLayer<double> layer("f", 8, 2, 16, 0.0);
  Rng rng(10);
  ParamRefs<double> refs;
  layer.collect(refs);
  detail::init_params(refs, rng);
  const auto x = random_tensor({2, 5, 8}, rng);
  Rng drop(1);
  EXPECT_EQ(layer.forward(x, Mode::Train, &drop), layer.forward(x, Mode::Eval, nullptr));
}

TEST(Dropout, EvalModeIsIdentityAndTrainModeIsInverted) {
  Rng rng(11);
  const auto x = random_tensor({4, 100}, rng);
  std::vector<double> mask;
  EXPECT_EQ(dropout(x, 0.5, Mode::Eval, &rng, &mask), x);
  EXPECT_TRUE(mask.empty());
  const auto y = dropout(x, 0.25, Mode::Train, &rng, &mask);
  ASSERT_EQ(mask.size(), x.size());
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] == 0.0) {
      ++dropped;
    } else {
      EXPECT_NEAR(y[i], x[i] / 0.75, 1e-15);
    }
  }
  EXPECT_GT(dropped, 50u);
  EXPECT_LT(dropped, 150u);
}

TEST(CrossEntropy, SymmetricTwoClass) {
  Tensor<double> logits({1, 2}, 0.0);
  const auto r = softmax_cross_entropy(logits, {0});
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(r.grad[0], -0.5, 1e-15);
  EXPECT_NEAR(r.grad[1], 0.5, 1e-15);

  Tensor<double> two({2, 2}, 0.0);
  const auto r2 = softmax_cross_entropy(two, {0, 0});
  EXPECT_NEAR(r2.grad[0], -0.25, 1e-15);
  EXPECT_NEAR(r2.grad[1], 0.25, 1e-15);
}

TEST(CrossEntropy, SaturatedLogitsStayFinite) {
  Tensor<double> logits({1, 2});
  logits[0] = 1000, logits[1] = 0;
  const auto r = softmax_cross_entropy(logits, {0});
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  const auto wrong = softmax_cross_entropy(logits, {1});
  EXPECT_NEAR(wrong.loss, 1000.0, 1e-9);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Rng rng(12);
  const std::size_t b = 6, k = 5;
  const auto logits = random_tensor({b, k}, rng);
  std::vector<std::uint16_t> labels(b);
  for (auto& l : labels) l = static_cast<std::uint16_t>(rng.below(k));
  const auto r = softmax_cross_entropy(logits, labels);
  for (std::size_t i = 0; i < b; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits(i, j));
    for (std::size_t j = 0; j < k; ++j) {
      const double want = (std::exp(logits(i, j)) / z - (j == labels[i] ? 1.0 : 0.0)) / static_cast<double>(b);
      EXPECT_NEAR(r.grad(i, j), want, 1e-12);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Param<double> p("p", {5}, 5);
  std::iota(p.value.begin(), p.value.end(), 1.0);
  const auto before = p.value;
  ParamRefs<double> refs{&p};
  Adam<double> adam(refs, AdamConfig{});
  for (int i = 0; i < 10; ++i) adam.step(refs);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(adam.steps(), 10u);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  Param<double> p("p", {3}, 3);
  ParamRefs<double> refs{&p};
  const AdamConfig cfg{1e-3, 0.9, 0.999, 1e-8};
  Adam<double> adam(refs, cfg);
  const double g[] = {0.5, -2.0, 1e-3};
  std::vector<double> last(3);
  for (int step = 0; step < 2000; ++step) {
    for (int i = 0; i < 3; ++i) p.grad[i] = g[i];
    last.assign(p.value.begin(), p.value.end());
    adam.step(refs);
  }
  for (int i = 0; i < 3; ++i) {
    const double delta = p.value[i] - last[i];
    // with m_hat = g and v_hat = g^2 the step is lr * g / (|g| + eps)
    EXPECT_NEAR(delta, -cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps), 1e-9) << i;
  }
}

TEST(Adam, MomentsShapedLikeParameters) {
  Param<double> a("a", {2, 3}, 3), b("b", {4}, 4);
  ParamRefs<double> refs{&a, &b};
  Adam<double> adam(refs, AdamConfig{});
  ASSERT_EQ(adam.first_moment().size(), 2u);
  EXPECT_EQ(adam.first_moment()[0].size(), 6u);
  EXPECT_EQ(adam.second_moment()[1].size(), 4u);
}

TEST(Initialize, FanInBoundsAndGainDefaults) {
  Linear<double> lin("l", 16, 4);
  LayerNorm<double> ln("ln", 4);
  ParamRefs<double> refs;
  lin.collect(refs);
  ln.collect(refs);
  Rng rng(13);
  initialize(refs, rng);
  for (double v : lin.weight.value) EXPECT_LE(std::abs(v), 0.25);
  for (double v : ln.gain.value) EXPECT_EQ(v, 1.0);
  for (double v : ln.shift.value) EXPECT_EQ(v, 0.0);
}

// Central-difference gradient checks in 64-bit across 20 seeds; see
// support/kernel_suite.hpp for the list of operations covered.
TEST(GradientCheck, EveryOperationAcrossTwentySeeds) {
  const auto checks = gradient_suite(20);
  std::map<std::string, double> worst;
  for (const auto& c : checks) {
    worst[c.op] = std::max(worst[c.op], c.error);
    EXPECT_LT(c.error, 1e-5) << c.op << " seed " << c.seed << " at " << c.where;
  }
  EXPECT_GE(worst.size(), 14u);
  for (const auto& [op, err] : worst) RecordProperty(op, std::to_string(err));
}

TEST(ForwardOracle, SeparableConvAndAttentionAcrossTwentySeeds) {
  for (const auto& c : forward_oracle_suite(20)) {
    EXPECT_LT(c.error, 1e-12) << c.op << " seed " << c.seed;
  }
}
