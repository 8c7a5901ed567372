#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "test_util.hpp"
#include "xfer/autodiff.hpp"
#include "xfer/tensor.hpp"

using namespace xfer;
using xfer::testing::grad_check;
using xfer::testing::kind_of;

TEST(InitTest, XavierBoundForFourByTwo) {
  // b = sqrt(6 / (4 + 2)) = 1
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    const auto t = xavier_init<double>({4, 2}, seed);
    for (double x : t.data()) {
      EXPECT_GE(x, -1.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(InitTest, XavierDeterministicPerSeed) {
  EXPECT_EQ(xavier_init<float>({16, 8}, 5), xavier_init<float>({16, 8}, 5));
  EXPECT_NE(xavier_init<float>({16, 8}, 5), xavier_init<float>({16, 8}, 6));
}

TEST(InitTest, XavierMeanNearZero) {
  const auto t = xavier_init<double>({512, 512}, 7);
  const double b = std::sqrt(6.0 / 1024.0);
  const double mean = std::accumulate(t.data().begin(), t.data().end(), 0.0) / static_cast<double>(t.size());
  EXPECT_LT(std::abs(mean), 3.0 * b / std::sqrt(3.0 * 512 * 512));
}

TEST(InitTest, XavierRankOneIsZeros) {
  const auto t = xavier_init<float>({7}, 3);
  for (float x : t.data()) EXPECT_EQ(x, 0.0f);
}

TEST(InitTest, XavierRejectsZeroDimension) {
  EXPECT_EQ(kind_of([] { xavier_init<float>({0, 3}, 1); }), ErrorKind::InvalidShape);
}

TEST(InitTest, UniformRangeAndDeterminism) {
  const auto a = uniform_init<float>({64, 64}, 11, 0.1);
  for (float x : a.data()) EXPECT_LE(std::abs(x), 0.1f);
  EXPECT_EQ(a, uniform_init<float>({64, 64}, 11, 0.1));
  EXPECT_EQ(kind_of([] { uniform_init<float>({2, 2}, 1, 0.0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { uniform_init<float>({2, 2}, 1, -1.0); }), ErrorKind::InvalidArgument);
}

TEST(InitTest, UniformVarianceIsOneThird) {
  // 250000 draws of a (2,2) tensor = 10^6 samples of U(-1, 1).
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 250000; ++seed) {
    const auto t = uniform_init<double>({2, 2}, seed, 1.0);
    for (double x : t.data()) {
      sum += x;
      sum_sq += x * x;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - mean * mean;
  EXPECT_NEAR(var, 1.0 / 3.0, 0.02 / 3.0);
}

TEST(PrimitiveTest, SoftmaxClosedForm) {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, {0.0, std::log(2.0)}));
  auto y = ad::softmax_row(x).value();
  EXPECT_NEAR(y[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[1], 2.0 / 3.0, 1e-15);
}

TEST(PrimitiveTest, SoftmaxShiftInvariantAndNormalized) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto t = xfer::testing::random_tensor({4, 7}, rng, -5, 5);
    Tensor<double> shifted = t;
    const double c = rng.uniform(-50, 50);
    for (double& v : shifted.data()) v += c;
    ad::Tape<double> tape;
    const auto a = ad::softmax_row(tape.leaf(t)).value();
    const auto b = ad::softmax_row(tape.leaf(shifted)).value();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += a.at(r, j);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(PrimitiveTest, LayerNormTwoElements) {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, {1.0, 3.0}));
  auto y = ad::layer_norm(x, tape.constant(Tensor<double>({2}, 1.0)), tape.constant(Tensor<double>({2}))).value();
  // mean 2, population std 1; eps perturbs at the 1e-5 level
  EXPECT_NEAR(y[0], -1.0, 1e-5);
  EXPECT_NEAR(y[1], 1.0, 1e-5);
}

TEST(PrimitiveTest, LayerNormMomentsBeforeGain) {
  Rng rng(8);
  ad::Tape<double> tape;
  auto x = tape.leaf(xfer::testing::random_tensor({6, 32}, rng, -3, 3));
  auto y = ad::layer_norm(x, tape.constant(Tensor<double>({32}, 1.0)), tape.constant(Tensor<double>({32}))).value();
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 32; ++j) mean += y.at(r, j) / 32.0;
    for (std::size_t j = 0; j < 32; ++j) var += (y.at(r, j) - mean) * (y.at(r, j) - mean) / 32.0;
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(PrimitiveTest, MatmulIdentity) {
  Rng rng(1);
  ad::Tape<double> tape;
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  const auto a = xfer::testing::random_tensor({4, 3}, rng);
  EXPECT_EQ(ad::matmul(tape.leaf(eye), tape.leaf(a)).value(), a);
}

TEST(PrimitiveTest, ShapeErrors) {
  ad::Tape<float> tape;
  auto a = tape.leaf(Tensor<float>({2, 3}));
  auto b = tape.leaf(Tensor<float>({2, 3}));
  EXPECT_EQ(kind_of([&] { ad::matmul(a, b); }), ErrorKind::ShapeError);
  EXPECT_EQ(kind_of([&] { ad::add(a, tape.leaf(Tensor<float>({3, 2}))); }), ErrorKind::ShapeError);
  EXPECT_EQ(kind_of([&] { ad::softmax_row(tape.leaf(Tensor<float>(Shape{}))); }), ErrorKind::InvalidArgument);
}

TEST(PrimitiveTest, DropoutIsIdentityInEvalMode) {
  Rng rng(2);
  ad::Tape<double> tape;
  auto x = tape.leaf(xfer::testing::random_tensor({5, 5}, rng));
  auto y = ad::dropout(x, 0.5, 17, false);
  EXPECT_EQ(y.value(), x.value());
}

TEST(PrimitiveTest, DropoutMaskReplaysPerSeed) {
  ad::Tape<float> tape;
  auto x = tape.leaf(Tensor<float>({8, 8}, 1.0f));
  EXPECT_EQ(ad::dropout(x, 0.9, 5, true).value(), ad::dropout(x, 0.9, 5, true).value());
  EXPECT_NE(ad::dropout(x, 0.9, 5, true).value(), ad::dropout(x, 0.9, 6, true).value());
}

TEST(PrimitiveTest, NonFiniteAbortsNamingTheOp) {
  ad::Tape<float> tape;
  auto x = tape.leaf(Tensor<float>({2}, {1e30f, 1e30f}));
  try {
    ad::mul(x, x);
    FAIL() << "expected NonFinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos);
  }
}

TEST(CrossEntropyTest, PerfectPredictionWithoutSmoothing) {
  ad::Tape<double> tape;
  auto logits = tape.leaf(Tensor<double>({1, 3}, {0.0, 800.0, 0.0}));
  const std::vector<std::int32_t> gold{1};
  EXPECT_NEAR(ad::cross_entropy_label_smoothed(logits, std::span<const std::int32_t>(gold), 0.0, -1).value()[0], 0.0, 1e-12);
}

TEST(CrossEntropyTest, UniformLogitsGiveLogV) {
  for (std::size_t v : {2u, 5u, 50u}) {
    for (double eps : {0.0, 0.1, 0.5}) {
      ad::Tape<double> tape;
      auto logits = tape.leaf(Tensor<double>({3, v}, 0.25));
      const std::vector<std::int32_t> gold{1, 0, 1};
      const double loss = ad::cross_entropy_label_smoothed(logits, std::span<const std::int32_t>(gold), eps, -1).value()[0];
      EXPECT_NEAR(loss, std::log(static_cast<double>(v)), 1e-12);
    }
  }
  ad::Tape<double> tape;
  const std::vector<std::int32_t> gold{0};
  EXPECT_NEAR(ad::cross_entropy_label_smoothed(tape.leaf(Tensor<double>({1, 2})), std::span<const std::int32_t>(gold), 0.1, -1)
                  .value()[0],
              0.6931471805599453, 1e-12);
}

TEST(CrossEntropyTest, PadPositionsExcluded) {
  ad::Tape<double> tape;
  auto logits = tape.leaf(Tensor<double>({2, 2}, {0.0, 0.0, 100.0, -100.0}));
  const std::vector<std::int32_t> gold{0, 1};
  // Position 1 is padding, so the loss is that of position 0 alone.
  EXPECT_NEAR(ad::cross_entropy_label_smoothed(logits, std::span<const std::int32_t>(gold), 0.0, 1).value()[0],
              std::log(2.0), 1e-12);
}

TEST(CrossEntropyTest, AllPaddingIsEmptyLoss) {
  ad::Tape<double> tape;
  auto logits = tape.leaf(Tensor<double>({2, 3}));
  const std::vector<std::int32_t> gold{0, 0};
  EXPECT_EQ(kind_of([&] { ad::cross_entropy_label_smoothed(logits, std::span<const std::int32_t>(gold), 0.1, 0); }),
            ErrorKind::EmptyLoss);
}

TEST(BackwardTest, SumGivesOnes) {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({3, 2}, 4.0));
  tape.backward(ad::sum(x));
  EXPECT_EQ(tape.grad(x), Tensor<double>({3, 2}, 1.0));
}

TEST(BackwardTest, MatmulSumGradientIsOnesTimesBTransposed) {
  ad::Tape<double> tape;
  auto a = tape.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto b = tape.leaf(Tensor<double>({2, 2}, {5, 6, 7, 8}));
  tape.backward(ad::sum(ad::matmul(a, b)));
  // d/dA sum(AB) = 1 * B^T: row sums of B broadcast: [[11, 15], [11, 15]]
  EXPECT_EQ(tape.grad(a), Tensor<double>({2, 2}, {11, 15, 11, 15}));
  // d/dB = A^T * 1: column sums of A: [[4, 4], [6, 6]]
  EXPECT_EQ(tape.grad(b), Tensor<double>({2, 2}, {4, 4, 6, 6}));
}

TEST(BackwardTest, FrozenLeavesReceiveNoGradient) {
  ad::Tape<double> tape;
  auto w = tape.leaf(Tensor<double>({2, 2}, 1.0), false);
  auto x = tape.leaf(Tensor<double>({2, 2}, 2.0), true);
  tape.backward(ad::sum(ad::matmul(x, w)));
  EXPECT_FALSE(tape.has_grad(w));
  EXPECT_TRUE(tape.has_grad(x));
}

TEST(BackwardTest, NonScalarLossRejected) {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, 1.0));
  EXPECT_EQ(kind_of([&] { tape.backward(x); }), ErrorKind::InvalidArgument);
}

TEST(BackwardTest, ReusedNodeAccumulates) {
  ad::Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1}, 3.0));
  tape.backward(ad::sum(ad::mul(x, x)));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 6.0);
}

class PrimitiveGradTest : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradTest, MatchesCentralDifferences) {
  const auto cases = xfer::testing::primitive_cases(1234);
  const auto& c = cases.at(GetParam());
  const auto res = grad_check(c.fn, c.leaves, c.differentiable);
  EXPECT_GT(res.checked, 0u) << c.name;
  EXPECT_LT(res.max_rel_error, 1e-4) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradTest,
                         ::testing::Range<std::size_t>(0, xfer::testing::primitive_cases(0).size()));

TEST(CompositeGradTest, RandomGraphsMatchCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = xfer::testing::random_graph(seed);
    const auto res = grad_check(c.fn, c.leaves);
    EXPECT_LT(res.max_rel_error, 1e-4) << c.name;
  }
}

TEST(DeterminismTest, IdenticalOpSequencesAreBitIdentical) {
  auto run = [] {
    Rng rng(77);
    ad::Tape<float> tape;
    auto a = tape.leaf(xfer::testing::random_tensor({6, 5}, rng).cast<float>());
    auto b = tape.leaf(xfer::testing::random_tensor({5, 4}, rng).cast<float>());
    auto y = ad::softmax_row(ad::relu(ad::matmul(a, b)));
    tape.backward(ad::sum(ad::mul(y, y)));
    return std::make_pair(y.value(), tape.grad(a));
  };
  EXPECT_EQ(run(), run());
}
