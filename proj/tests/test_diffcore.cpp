#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "advpose/diffcore.hpp"
#include "checks.hpp"
#include "oracles.hpp"

using namespace advpose;
using diff::Tape;
using diff::Tensor;

TEST(Diffcore, AffineMatchesNaiveMatmul) {
  std::mt19937_64 rng(1);
  const auto w = oracle::random_vector(rng, 12), x = oracle::random_vector(rng, 4), b = oracle::random_vector(rng, 3);
  const Tensor W({3, 4}, w);
  Tape tape;
  auto y = diff::affine(tape.constant(x), tape.leaf(W), tape.constant(b));
  auto expected = oracle::matmul(w, 3, 4, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.value()[i], expected[i] + b[i], 1e-15);
}

TEST(Diffcore, ValuesMatchClosedForms) {
  Tape tape;
  auto x = tape.constant({-1.0, 0.0, 2.0});
  auto e = diff::elu(x);
  EXPECT_NEAR(e.value()[0], std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_EQ(e.value()[2], 2.0);
  auto s = diff::sigmoid(x);
  EXPECT_NEAR(s.value()[2], oracle::sigmoid(2.0), 1e-15);
  auto p = tape.constant({0.3});
  EXPECT_NEAR(diff::bce(p, 1.0).item(), oracle::bce(0.3, 1.0), 1e-15);
  EXPECT_NEAR(diff::l1_distance(x, tape.constant({0.0, 0.0, 0.0})).item(), 3.0, 1e-15);
  auto n = diff::normalize(tape.constant({3.0, 4.0}));
  EXPECT_NEAR(n.value()[0], 0.6, 1e-15);
  auto t = diff::tile(tape.constant({1.0, 2.0, 3.0}), 7);
  EXPECT_EQ(std::vector<double>(t.value().begin(), t.value().end()),
            (std::vector<double>{1, 2, 3, 1, 2, 3, 1}));
}

TEST(Diffcore, SigmoidStaysInsideTheOpenInterval) {
  Tape tape;
  auto s = diff::sigmoid(tape.constant({38.0, -800.0, 800.0}));
  // 1 - 1e-16 is not representable; the largest double below 1 is 1 - 2^-53.
  EXPECT_LT(s.value()[0], 1.0);
  EXPECT_GE(s.value()[0], 1.0 - 2e-16);
  EXPECT_GT(s.value()[1], 0.0);
  EXPECT_LT(s.value()[2], 1.0);
}

TEST(Diffcore, BceIsClampedAtTheBoundary) {
  Tape tape;
  auto p = tape.input({0.0}, true);
  auto loss = diff::bce(p, 1.0);
  EXPECT_TRUE(std::isfinite(loss.item()));
  EXPECT_NEAR(loss.item(), -std::log(diff::kBceClamp), 1e-9);
  tape.backward(loss);
  // The clamped loss is flat there, so its derivative is zero.
  EXPECT_EQ(tape.grad(p)[0], 0.0);

  Tape inside;
  const double q = 2.0 * diff::kBceClamp;
  auto pi = inside.input({q}, true);
  inside.backward(diff::bce(pi, 0.5));
  EXPECT_NEAR(inside.grad(pi)[0], -0.5 / q + 0.5 / (1.0 - q), 1e-6);
}

TEST(Diffcore, PrimitivesPassFiniteDifferences) {
  for (const auto& r : checks::primitive_gradchecks(20, 11)) {
    EXPECT_LT(r.worst, 1e-4) << r.name;
  }
}

TEST(Diffcore, ComposedLossesPassFiniteDifferences) {
  for (RotationMode mode : {RotationMode::Quaternion, RotationMode::LogQuaternion}) {
    for (const auto& r : checks::loss_gradchecks(mode, 20, 12)) {
      EXPECT_LT(r.worst, 1e-4) << r.name;
    }
  }
}

TEST(Diffcore, GradientsAccumulateOverReusedNodes) {
  Tape tape;
  auto x = tape.input({1.5}, true);
  auto y = diff::add(diff::mul(x, x), x);  // x^2 + x
  tape.backward(y);
  EXPECT_NEAR(tape.grad(x)[0], 2 * 1.5 + 1, 1e-15);
}

TEST(Diffcore, LeafGradientsFlowIntoExternalTensors) {
  const Tensor W({1, 2}, {2.0, -1.0});
  Tape tape;
  auto w = tape.leaf(W, true);
  auto y = diff::sum(diff::affine(tape.constant({3.0, 4.0}), w));
  tape.backward(y);
  EXPECT_EQ(tape.grad(w)[0], 3.0);
  EXPECT_EQ(tape.grad(w)[1], 4.0);
}

TEST(Diffcore, UnusedVariablesGetZeroGradient) {
  Tape tape;
  auto a = tape.input({1.0, 2.0}, true);
  auto b = tape.input({3.0}, true);
  tape.backward(diff::sum(a));
  EXPECT_EQ(tape.grad(b)[0], 0.0);
}

TEST(Diffcore, SecondBackwardThrows) {
  Tape tape;
  auto x = tape.input({1.0}, true);
  auto y = diff::scale(x, 2.0);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), DoubleBackward);
}

TEST(Diffcore, LossWithoutGradientPathThrows) {
  Tape tape;
  auto c = tape.constant({1.0});
  EXPECT_THROW(tape.backward(diff::scale(c, 2.0)), DetachedLoss);
}

TEST(Diffcore, LossFromAnotherTapeThrows) {
  Tape a, b;
  auto x = a.input({1.0}, true);
  EXPECT_THROW(b.backward(x), DetachedLoss);
}

TEST(Diffcore, NonScalarLossThrows) {
  Tape tape;
  auto x = tape.input({1.0, 2.0}, true);
  EXPECT_THROW(tape.backward(x), ShapeMismatch);
}

TEST(Diffcore, NonFiniteValuesAreRejected) {
  Tape tape;
  EXPECT_THROW(tape.input({std::numeric_limits<double>::quiet_NaN()}), NonFiniteValue);
  auto big = tape.constant({800.0});
  EXPECT_THROW(diff::exp(big), NonFiniteValue);
}

TEST(Diffcore, ShapeChecks) {
  Tape tape;
  auto x = tape.constant({1.0, 2.0, 3.0});
  EXPECT_THROW(diff::add(x, tape.constant({1.0, 2.0})), ShapeMismatch);
  EXPECT_THROW(diff::l1_distance(x, tape.constant({1.0})), ShapeMismatch);
  // A rank-1 weight is not a matrix.
  EXPECT_THROW(diff::affine(x, tape.constant({1.0, 2.0, 3.0})), ShapeMismatch);
  const Tensor W({2, 4}, std::vector<double>(8, 0.0));
  EXPECT_THROW(diff::affine(x, tape.leaf(W)), ShapeMismatch);
  EXPECT_THROW(Tensor({2, 2}, {1.0}), ShapeMismatch);
}

TEST(Diffcore, BroadcastScalarAddAndMul) {
  Tape tape;
  auto x = tape.input({1.0, 2.0, 3.0}, true);
  auto k = tape.input({2.0}, true);
  auto y = diff::sum(diff::mul(x, k));
  tape.backward(y);
  EXPECT_EQ(y.item(), 12.0);
  EXPECT_EQ(tape.grad(k)[0], 6.0);
  EXPECT_EQ(tape.grad(x)[1], 2.0);
}

TEST(Diffcore, AdamFirstStepMatchesClosedForm) {
  diff::ParamStore p;
  p.add("w", Tensor::vector({1.0, -2.0}, true));
  diff::OptimizerState s;
  s.lr = 0.1;
  diff::optimizer_step(p, {{"w", {0.5, -4.0}}}, s);
  // After bias correction the first step is lr * g / (|g| + eps).
  EXPECT_NEAR(p.at("w").values[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(p.at("w").values[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-12);
  EXPECT_EQ(s.step, 1);
}

TEST(Diffcore, AdamMatchesReferenceRecursion) {
  diff::ParamStore p;
  p.add("w", Tensor::scalar(0.7, true));
  diff::OptimizerState s;
  s.lr = 0.01;
  double theta = 0.7, m = 0.0, v = 0.0;
  for (int t = 1; t <= 25; ++t) {
    const double g = std::sin(t) + theta;
    diff::optimizer_step(p, {{"w", {g}}}, s);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.at("w").values[0], theta, 1e-14);
  }
}

TEST(Diffcore, AdamRejectsMismatchedGradients) {
  diff::ParamStore p;
  p.add("w", Tensor::vector({1.0, 2.0}, true));
  diff::OptimizerState s;
  EXPECT_THROW(diff::optimizer_step(p, {{"w", {1.0}}}, s), ShapeMismatch);
  EXPECT_EQ(s.step, 0);
}

TEST(Diffcore, GlorotRespectsBound) {
  std::mt19937_64 rng(3);
  const Tensor w = diff::glorot_uniform(16, 48, rng);
  EXPECT_EQ(w.shape, (diff::Shape{16, 48}));
  const double bound = std::sqrt(6.0 / 64.0);
  for (double x : w.values) EXPECT_LE(std::abs(x), bound);
}

TEST(Diffcore, ParamStoreChecksumTracksValues) {
  diff::ParamStore p;
  p.add("a", Tensor::vector({1.0, 2.0}));
  const auto c0 = p.checksum();
  p.at("a").values[1] = 2.0000001;
  EXPECT_NE(p.checksum(), c0);
  EXPECT_THROW(p.add("a", Tensor::scalar(0.0)), Error);
  EXPECT_THROW(p.at("missing"), Error);
}
