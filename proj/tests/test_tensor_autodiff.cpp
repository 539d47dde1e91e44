#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "msdnet/errors.hpp"
#include "msdnet/ops.hpp"
#include "test_util.hpp"

using namespace msdnet;
using msdnet::testing::check_gradients;
using msdnet::testing::project;
using msdnet::testing::projection_for;
using msdnet::testing::random_tensor;

namespace {

constexpr double kOpTol = 1e-4;

TEST(Tensor, ZeroDimensionRejected) { EXPECT_THROW(Tensor({2, 0, 3}), ConfigError); }

TEST(Tensor, HandlesShareStorageUntilCloned) {
  Tensor a({2, 2}, 1.0);
  Tensor b = a;
  Tensor c = a.clone();
  b[0] = 5.0;
  EXPECT_EQ(a[0], 5.0);
  EXPECT_EQ(c[0], 1.0);
  EXPECT_TRUE(a.is(b));
  EXPECT_FALSE(a.is(c));
}

TEST(Tensor, CheckFiniteFlagsNaN) {
  Tensor t({3}, 0.0);
  EXPECT_NO_THROW(check_finite(t, "t"));
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(check_finite(t, "t"), NumericError);
  t[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(check_finite(t, "t"), NumericError);
}

TEST(Conv2d, AllOnesGivesNine) {
  const Tensor y = conv2d(Tensor::ones({1, 1, 3, 3}), Tensor::ones({1, 1, 3, 3}), 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 9.0);
}

TEST(Conv2d, PointwiseScales) {
  const Tensor x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor y = conv2d(x, Tensor({1, 1, 1, 1}, 2.0), 1, 0);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{2, 4, 6, 8}));
}

TEST(Conv2d, PaddingMatchesHandComputation) {
  // 3x3 ones kernel over a 3x3 ramp with pad 1: corner sums four neighbours.
  const Tensor x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor y = conv2d(x, Tensor::ones({1, 1, 3, 3}), 1, 1);
  EXPECT_DOUBLE_EQ(y[0], 1 + 2 + 4 + 5);
  EXPECT_DOUBLE_EQ(y[4], 45);
  EXPECT_DOUBLE_EQ(y[8], 5 + 6 + 8 + 9);
}

TEST(Conv2d, NonIntegralOutputIsConfigError) {
  EXPECT_THROW(conv2d(Tensor::ones({1, 1, 8, 8}), Tensor::ones({1, 1, 3, 3}), 2, 0), ConfigError);
}

TEST(Conv2d, ChannelMismatchIsConfigError) {
  EXPECT_THROW(conv2d(Tensor::ones({1, 2, 4, 4}), Tensor::ones({1, 3, 3, 3}), 1, 1), ConfigError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{1, 0}, std::pair{5, 0}}) {
    const Tensor probe = projection_for(conv2d(x, w, stride, pad), rng);
    const auto r = check_gradients([&](Tape* t) { return project(conv2d(x, w, stride, pad, t), probe, t); }, {x, w});
    EXPECT_LE(r.max_rel_err, kOpTol) << "stride " << stride << " pad " << pad;
  }
}

TEST(Conv2d, PointwiseGradient) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({3, 5, 4, 4}, rng);
  const Tensor w = random_tensor({2, 5, 1, 1}, rng);
  const Tensor probe = projection_for(conv2d(x, w, 1, 0), rng);
  const auto r = check_gradients([&](Tape* t) { return project(conv2d(x, w, 1, 0, t), probe, t); }, {x, w});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(StridedDownsample, OutputIsCeilHalf) {
  EXPECT_EQ(strided_downsample_conv(Tensor::ones({1, 1, 8, 8}), Tensor::ones({1, 1, 3, 3})).shape(),
            (Shape{1, 1, 4, 4}));
  EXPECT_EQ(strided_downsample_conv(Tensor::ones({1, 1, 7, 7}), Tensor::ones({1, 1, 3, 3})).shape(),
            (Shape{1, 1, 4, 4}));
  EXPECT_EQ(strided_downsample_conv(Tensor::ones({1, 1, 1, 1}), Tensor::ones({1, 1, 3, 3})).shape(),
            (Shape{1, 1, 1, 1}));
}

TEST(StridedDownsample, RejectsNon3x3Kernel) {
  EXPECT_THROW(strided_downsample_conv(Tensor::ones({1, 1, 8, 8}), Tensor::ones({1, 1, 1, 1})), ConfigError);
}

TEST(StridedDownsample, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (std::size_t size : {8u, 7u}) {
    const Tensor x = random_tensor({2, 3, size, size}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    const Tensor probe = projection_for(strided_downsample_conv(x, w), rng);
    const auto r =
        check_gradients([&](Tape* t) { return project(strided_downsample_conv(x, w, t), probe, t); }, {x, w});
    EXPECT_LE(r.max_rel_err, kOpTol) << size;
  }
}

TEST(Concat, SingleInputIsIdentity) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 3, 2, 2}, rng);
  const Tensor y = concat_channels(std::vector<Tensor>{x});
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(Concat, ChannelOrderFollowsInputs) {
  const Tensor a({1, 2, 1, 1}, std::vector<double>{1, 2});
  const Tensor b({1, 3, 1, 1}, std::vector<double>{3, 4, 5});
  const Tensor y = concat_channels(std::vector<Tensor>{a, b});
  ASSERT_EQ(y.shape(), (Shape{1, 5, 1, 1}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 2, 3, 4, 5}));
}

TEST(Concat, SumGradientIsOnes) {
  std::mt19937_64 rng(5);
  const Tensor a = random_tensor({2, 2, 3, 3}, rng);
  const Tensor b = random_tensor({2, 1, 3, 3}, rng);
  Tape tape;
  const Tensor loss = sum(concat_channels(std::vector<Tensor>{a, b}, &tape), &tape);
  tape.backward(loss);
  for (double g : a.grad()) EXPECT_EQ(g, 1.0);
  for (double g : b.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Concat, MismatchedSpatialIsConfigError) {
  EXPECT_THROW(concat_channels(std::vector<Tensor>{Tensor::ones({1, 1, 2, 2}), Tensor::ones({1, 1, 3, 3})}),
               ConfigError);
  EXPECT_THROW(concat_channels(std::vector<Tensor>{Tensor::ones({1, 1, 2, 2}), Tensor::ones({2, 1, 2, 2})}),
               ConfigError);
}

TEST(Concat, SplitRecoversInputsExactly) {
  std::mt19937_64 rng(6);
  const Tensor a = random_tensor({3, 2, 4, 4}, rng);
  const Tensor b = random_tensor({3, 5, 4, 4}, rng);
  const auto parts = split_channels(concat_channels(std::vector<Tensor>{a, b}), std::vector<std::size_t>{2, 5});
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), parts[0].data().begin()));
  EXPECT_TRUE(std::equal(b.data().begin(), b.data().end(), parts[1].data().begin()));
}

TEST(Concat, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor({2, 2, 3, 3}, rng);
  const Tensor b = random_tensor({2, 3, 3, 3}, rng);
  const Tensor probe = projection_for(concat_channels(std::vector<Tensor>{a, b}), rng);
  const auto r = check_gradients(
      [&](Tape* t) { return project(concat_channels(std::vector<Tensor>{a, b}, t), probe, t); }, {a, b});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(Split, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({2, 5, 2, 2}, rng);
  const std::vector<std::size_t> sizes{3, 2};
  const auto first = split_channels(x, sizes);
  const Tensor p0 = projection_for(first[0], rng), p1 = projection_for(first[1], rng);
  const auto r = check_gradients(
      [&](Tape* t) {
        const auto parts = split_channels(x, sizes, t);
        return add(project(parts[0], p0, t), project(parts[1], p1, t), t);
      },
      {x});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(BatchNorm, ConstantChannelNormalisesToZero) {
  BatchNormParams bn = BatchNormParams::identity(2);
  Tensor x({3, 2, 2, 2}, 0.0);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < 4; ++i) {
      x[(b * 2 + 0) * 4 + i] = 7.5;
      x[(b * 2 + 1) * 4 + i] = static_cast<double>(b + i);
    }
  }
  const Tensor y = batch_norm(x, bn, BnMode::Train);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[(b * 2) * 4 + i], 0.0);
  }
}

TEST(BatchNorm, ZeroGammaYieldsBeta) {
  std::mt19937_64 rng(9);
  BatchNormParams bn = BatchNormParams::identity(3);
  bn.gamma = Tensor::zeros({3});
  bn.beta = Tensor({3}, std::vector<double>{0.5, -1.0, 2.0});
  const Tensor x = random_tensor({4, 3, 2, 2}, rng);
  const Tensor y = batch_norm(x, bn, BnMode::Train);
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[(b * 3 + c) * 4 + i], bn.beta[c]);
    }
  }
}

TEST(BatchNorm, SingleSampleZeroVarianceStaysFinite) {
  BatchNormParams bn = BatchNormParams::identity(1);
  const Tensor y = batch_norm(Tensor({1, 1, 1, 1}, 3.0), bn, BnMode::Train);
  EXPECT_TRUE(std::isfinite(y[0]));
  EXPECT_EQ(y[0], 0.0);
}

TEST(BatchNorm, RunningStatsFollowMomentum) {
  BatchNormParams bn = BatchNormParams::identity(1);
  // Values 1..4: mean 2.5, unbiased variance 5/3.
  batch_norm(Tensor({4, 1, 1, 1}, std::vector<double>{1, 2, 3, 4}), bn, BnMode::Train);
  EXPECT_NEAR(bn.running_mean[0], 0.9 * 0.0 + 0.1 * 2.5, 1e-15);
  EXPECT_NEAR(bn.running_var[0], 0.9 * 1.0 + 0.1 * (5.0 / 3.0), 1e-15);
}

TEST(BatchNorm, EvalUsesRunningStats) {
  BatchNormParams bn = BatchNormParams::identity(1);
  bn.running_mean = {1.0};
  bn.running_var = {4.0};
  const Tensor y = batch_norm(Tensor({1, 1, 1, 1}, 5.0), std::as_const(bn));
  EXPECT_NEAR(y[0], 4.0 / std::sqrt(4.0 + kBatchNormEpsilon), 1e-15);
}

TEST(BatchNorm, TrainGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({4, 3, 3, 3}, rng);
  BatchNormParams bn = BatchNormParams::identity(3);
  bn.gamma = random_tensor({3}, rng, 0.5, 1.5);
  bn.beta = random_tensor({3}, rng);
  const Tensor probe = projection_for(x, rng);
  const auto r = check_gradients(
      [&](Tape* t) { return project(batch_norm(x, bn, BnMode::Train, t), probe, t); }, {x, bn.gamma, bn.beta});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(BatchNorm, EvalGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({2, 3, 2, 2}, rng);
  BatchNormParams bn = BatchNormParams::identity(3);
  bn.gamma = random_tensor({3}, rng, 0.5, 1.5);
  bn.beta = random_tensor({3}, rng);
  bn.running_mean = {0.1, -0.2, 0.3};
  bn.running_var = {0.5, 1.5, 2.0};
  const Tensor probe = projection_for(x, rng);
  const auto r = check_gradients(
      [&](Tape* t) { return project(batch_norm(x, std::as_const(bn), t), probe, t); }, {x, bn.gamma, bn.beta});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(Relu, Derivative) {
  const Tensor x({1, 2}, std::vector<double>{2.0, -2.0});
  Tape tape;
  tape.backward(sum(relu(x, &tape), &tape));
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Relu, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({3, 4, 2, 2}, rng);
  const Tensor probe = projection_for(x, rng);
  const auto r = check_gradients([&](Tape* t) { return project(relu(x, t), probe, t); }, {x});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(AvgPool, AveragesWindows) {
  const Tensor x({1, 1, 2, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor y = avg_pool(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(y[0], 3.5);
  EXPECT_DOUBLE_EQ(y[1], 5.5);
}

TEST(AvgPool, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  const Tensor x = random_tensor({2, 3, 4, 6}, rng);
  const Tensor probe = projection_for(avg_pool(x, 2), rng);
  const auto r = check_gradients([&](Tape* t) { return project(avg_pool(x, 2, t), probe, t); }, {x});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor({3, 5}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  const Tensor b = random_tensor({4}, rng);
  const Tensor probe = projection_for(linear(x, w, b), rng);
  const auto r = check_gradients([&](Tape* t) { return project(linear(x, w, b, t), probe, t); }, {x, w, b});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(Flatten, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor({2, 2, 3, 1}, rng);
  const Tensor probe = projection_for(x, rng);
  const auto r = check_gradients([&](Tape* t) { return project(flatten(x, t), probe, t); }, {x});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(Softmax, RowsArePositiveAndSumToOne) {
  std::mt19937_64 rng(16);
  const Tensor p = softmax(random_tensor({5, 7}, rng, -30.0, 30.0));
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GT(p[r * 7 + c], 0.0);
      total += p[r * 7 + c];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor probe = projection_for(x, rng);
  const auto r = check_gradients([&](Tape* t) { return project(softmax(x, t), probe, t); }, {x});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(CrossEntropy, UniformLogitsGiveLogClasses) {
  const std::vector<int> y{2};
  EXPECT_NEAR(cross_entropy(Tensor({1, 4}, 0.3), y).item(), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  std::mt19937_64 rng(18);
  const Tensor x = random_tensor({1, 5}, rng, -3.0, 3.0);
  const std::vector<int> y{3};
  Tape tape;
  tape.backward(cross_entropy(x, y, &tape));
  const Tensor p = softmax(x);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(x.grad()[c], p[c] - (c == 3 ? 1.0 : 0.0), 1e-12);
}

TEST(CrossEntropy, BatchMeanGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(19);
  const Tensor x = random_tensor({4, 3}, rng);
  const std::vector<int> y{0, 2, 1, 2};
  const auto r = check_gradients([&](Tape* t) { return cross_entropy(x, y, t); }, {x});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(CrossEntropy, LabelOutOfRangeIsInputError) {
  const Tensor x({2, 3}, 0.0);
  EXPECT_THROW(cross_entropy(x, std::vector<int>{0, 3}), InputError);
  EXPECT_THROW(cross_entropy(x, std::vector<int>{-1, 0}), InputError);
}

TEST(Elementwise, AddScaleSumSelectGradients) {
  std::mt19937_64 rng(20);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({3, 4}, rng);
  const std::vector<std::size_t> rows{2, 0, 2};
  const Tensor probe = projection_for(a, rng);
  const auto r = check_gradients(
      [&](Tape* t) {
        const Tensor s = add(scale(a, -1.7, t), b, t);
        return add(project(select_rows(s, rows, t), probe, t), scale(sum(a, t), 0.3, t), t);
      },
      {a, b});
  EXPECT_LE(r.max_rel_err, kOpTol);
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(21);
  const Tensor w = random_tensor({6}, rng);
  Tape tape;
  tape.backward(sum(w, &tape));
  for (double g : w.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ZeroTimesFunctionGivesZeros) {
  std::mt19937_64 rng(22);
  const Tensor w = random_tensor({2, 3}, rng);
  Tape tape;
  tape.backward(scale(sum(softmax(w, &tape), &tape), 0.0, &tape));
  for (double g : w.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, UnreachableParameterKeepsZeroGrad) {
  std::mt19937_64 rng(23);
  const Tensor used = random_tensor({4}, rng);
  const Tensor unused = random_tensor({4}, rng);
  unused.grad();
  Tape tape;
  scale(unused, 2.0, &tape);
  tape.backward(sum(used, &tape));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SecondCallIsUsageError) {
  const Tensor w({3}, 1.0);
  Tape tape;
  const Tensor loss = sum(w, &tape);
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), UsageError);
  EXPECT_THROW(sum(w, &tape), UsageError);
}

TEST(Backward, RejectsNonScalarOrForeignLoss) {
  const Tensor w({3}, 1.0);
  Tape tape;
  const Tensor y = scale(w, 2.0, &tape);
  EXPECT_THROW(tape.backward(y), UsageError);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), UsageError);
}

TEST(Backward, TapeRecordsEveryOpOnce) {
  const Tensor w({1, 3}, 1.0);
  Tape tape;
  const Tensor loss = sum(softmax(w, &tape), &tape);
  ASSERT_EQ(tape.records().size(), 2u);
  EXPECT_EQ(tape.records()[0].kind, OpKind::Softmax);
  EXPECT_EQ(tape.records()[1].kind, OpKind::Sum);
  EXPECT_TRUE(tape.records()[1].output.is(loss));
}

TEST(Forward, DeterministicBitForBit) {
  std::mt19937_64 rng(24);
  const Tensor x = random_tensor({2, 3, 6, 6}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const Tensor y1 = relu(conv2d(x, w, 1, 1));
  const Tensor y2 = relu(conv2d(x, w, 1, 1));
  EXPECT_TRUE(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}

}  // namespace
