#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xfer/optim.hpp"

using namespace xfer;
using xfer::testing::kind_of;

namespace {

// Textbook Adam on one scalar, written out independently of adam_step.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.98, eps = 1e-9;
  double m = 0, v = 0;
  int t = 0;
  double step(double w, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return w - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

Parameter<double> scalar_param(double w, bool trainable = true) {
  return {"w", Tensor<double>(Shape{1}, std::vector<double>{w}), trainable};
}

void step_once(Parameter<double>& p, double g, AdamState<double>& state) {
  std::vector<Parameter<double>*> ps{&p};
  std::vector<Tensor<double>> gs{Tensor<double>(Shape{1}, std::vector<double>{g})};
  adam_step<double>(ps, gs, state);
}

}  // namespace

TEST(AdamTest, ZeroGradientLeavesParametersUnchanged) {
  Parameter<double> p{"w", Tensor<double>(Shape{2, 3}, std::vector<double>{1, -2, 3, -4, 5, -6}), true};
  const Tensor<double> before = p.value;
  AdamState<double> state;
  std::vector<Parameter<double>*> ps{&p};
  std::vector<Tensor<double>> gs{Tensor<double>(Shape{2, 3})};
  adam_step<double>(ps, gs, state);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamTest, FirstStepIsSignedLearningRate) {
  // m_hat = g and v_hat = g^2, so the update is -lr * g / (|g| + eps).
  const std::vector<double> g{0.3, -2.0, 1e-3, 7.5};
  Parameter<double> p{"w", Tensor<double>(Shape{4}, std::vector<double>{0, 0, 0, 0}), true};
  AdamState<double> state;
  state.hyper.lr = 0.01;
  std::vector<Parameter<double>*> ps{&p};
  std::vector<Tensor<double>> gs{Tensor<double>(Shape{4}, g)};
  adam_step<double>(ps, gs, state);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(p.value[i], -0.01 * g[i] / (std::abs(g[i]) + 1e-9), 1e-15);
  }
}

TEST(AdamTest, TwoStepsConstantGradientByHand) {
  // g = 0.5, lr = 0.1, w0 = 1.
  // step 1: m = 0.05, v = 0.005, m_hat = 0.5, v_hat = 0.25
  // step 2: m = 0.095, v = 0.0099, m_hat = 0.095/0.19 = 0.5, v_hat = 0.0099/0.0396 = 0.25
  // each step moves w by -0.1 * 0.5 / (0.5 + 1e-9).
  const double delta = 0.1 * 0.5 / (0.5 + 1e-9);
  Parameter<double> p = scalar_param(1.0);
  AdamState<double> state;
  state.hyper.lr = 0.1;
  step_once(p, 0.5, state);
  EXPECT_NEAR(p.value[0], 1.0 - delta, 1e-12);
  step_once(p, 0.5, state);
  EXPECT_NEAR(p.value[0], 1.0 - 2 * delta, 1e-12);
  EXPECT_NEAR(state.m[0][0], 0.095, 1e-15);
  EXPECT_NEAR(state.v[0][0], 0.0099, 1e-15);
}

TEST(AdamTest, TwoStepsVaryingGradientByHand) {
  // g1 = 1, g2 = -0.5, lr = 0.1, w0 = 0.
  // step 1: m = 0.1, v = 0.02 -> m_hat = 1, v_hat = 1, w1 = -0.1 / (1 + 1e-9)
  // step 2: m = 0.09 - 0.05 = 0.04, v = 0.0196 + 0.005 = 0.0246
  //         m_hat = 0.04 / 0.19, v_hat = 0.0246 / 0.0396
  const double w1 = -0.1 / (1 + 1e-9);
  const double w2 = w1 - 0.1 * (0.04 / 0.19) / (std::sqrt(0.0246 / 0.0396) + 1e-9);
  Parameter<double> p = scalar_param(0.0);
  AdamState<double> state;
  state.hyper.lr = 0.1;
  step_once(p, 1.0, state);
  EXPECT_NEAR(p.value[0], w1, 1e-12);
  step_once(p, -0.5, state);
  EXPECT_NEAR(p.value[0], w2, 1e-12);
}

TEST(AdamTest, MatchesTextbookOverManySteps) {
  ScalarAdam ref{0.05};
  Parameter<double> p = scalar_param(2.0);
  AdamState<double> state;
  state.hyper.lr = 0.05;
  double w = 2.0;
  for (int t = 0; t < 50; ++t) {
    const double g = std::sin(0.7 * t) + 0.1 * w;
    w = ref.step(w, g);
    step_once(p, g, state);
    ASSERT_NEAR(p.value[0], w, 1e-12) << "step " << t;
  }
}

TEST(AdamTest, FrozenParameterIsBitIdenticalAndMomentsUntouched) {
  Parameter<float> frozen{"core", xavier_init<float>({8, 8}, 3), false};
  Parameter<float> live{"emb", xavier_init<float>({8, 8}, 4), true};
  const Tensor<float> frozen_before = frozen.value;
  const Tensor<float> live_before = live.value;
  AdamState<float> state;
  std::vector<Parameter<float>*> ps{&frozen, &live};
  for (int t = 0; t < 100; ++t) {
    std::vector<Tensor<float>> gs{xavier_init<float>({8, 8}, 100 + t), xavier_init<float>({8, 8}, 200 + t)};
    adam_step<float>(ps, gs, state, 1e-3);
  }
  EXPECT_EQ(frozen.value, frozen_before);
  EXPECT_EQ(state.m[0].size(), 0u);
  EXPECT_EQ(state.v[0].size(), 0u);
  EXPECT_FALSE(live.value == live_before);
}

TEST(AdamTest, SecondMomentNonNegative) {
  Parameter<double> p{"w", Tensor<double>(Shape{16}), true};
  AdamState<double> state;
  std::vector<Parameter<double>*> ps{&p};
  for (int t = 0; t < 20; ++t) {
    std::vector<Tensor<double>> gs{xavier_init<double>({4, 4}, t).reshaped({16})};
    adam_step<double>(ps, gs, state);
  }
  for (double v : state.v[0].data()) EXPECT_GE(v, 0.0);
  EXPECT_EQ(state.m[0].shape(), p.value.shape());
}

TEST(AdamTest, ShapeMismatchThrows) {
  Parameter<double> p{"w", Tensor<double>(Shape{2, 2}), true};
  AdamState<double> state;
  std::vector<Parameter<double>*> ps{&p};
  std::vector<Tensor<double>> wrong{Tensor<double>(Shape{4})};
  EXPECT_EQ(kind_of([&] { adam_step<double>(ps, wrong, state); }), ErrorKind::ShapeError);
  std::vector<Tensor<double>> too_many{Tensor<double>(Shape{2, 2}), Tensor<double>(Shape{2, 2})};
  EXPECT_EQ(kind_of([&] { adam_step<double>(ps, too_many, state); }), ErrorKind::ShapeError);
}

TEST(ScheduleTest, WarmupThenInverseSqrt) {
  EXPECT_DOUBLE_EQ(warmup_inverse_sqrt(1.0, 1, 400), 1.0 / 400);
  EXPECT_DOUBLE_EQ(warmup_inverse_sqrt(1.0, 200, 400), 0.5);
  EXPECT_DOUBLE_EQ(warmup_inverse_sqrt(1.0, 400, 400), 1.0);
  EXPECT_DOUBLE_EQ(warmup_inverse_sqrt(1.0, 1600, 400), 0.5);
  EXPECT_DOUBLE_EQ(warmup_inverse_sqrt(3e-4, 10, 0), 3e-4);
}

TEST(ScheduleTest, DefaultsMatchConventionalTransformerSetup) {
  AdamHyper h;
  EXPECT_EQ(h.lr, 3e-4);
  EXPECT_EQ(h.beta1, 0.9);
  EXPECT_EQ(h.beta2, 0.98);
  EXPECT_EQ(h.eps, 1e-9);
}
