#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "sre/adam.hpp"
#include "sre/tensor.hpp"

using namespace sre;

namespace {

Tensor random_tensor(std::mt19937_64& gen, Shape shape, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = u(gen);
  return Tensor(std::move(shape), std::move(v));
}

// Weighted sum with fixed coefficients, so every output coordinate carries a
// distinct gradient.
Tensor weighted_sum(const Tensor& y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.17 * static_cast<double>(i % 7);
  return sum(mul(y, Tensor(y.shape(), std::move(w))));
}

}  // namespace

TEST(Forward, MatmulIdentity) {
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor b = Tensor::matrix(2, 2, {3, 4, 5, 6});
  const Tensor c = matmul(eye, b);
  EXPECT_EQ(c.values(), b.values());
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
}

TEST(Forward, SigmoidOfZeroIsHalf) { EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5); }

TEST(Forward, SumOfThree) { EXPECT_DOUBLE_EQ(sum(Tensor::vector({1.5, -0.5, 2.0})).item(), 3.0); }

TEST(Forward, SigmoidOfTwo) {
  // 1 / (1 + e^-2), evaluated independently
  EXPECT_NEAR(sigmoid(Tensor::scalar(2.0)).item(), 0.8807970779778824, 1e-15);
}

TEST(Forward, SigmoidAntisymmetry) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-40, 40);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(gen);
    EXPECT_NEAR(sigmoid(a) + sigmoid(-a), 1.0, 1e-15);
  }
  EXPECT_EQ(sigmoid(800.0), 1.0);
  EXPECT_EQ(sigmoid(-800.0), 0.0);
}

TEST(Forward, ElementwiseOps) {
  const Tensor a = Tensor::vector({1, 2, 3});
  const Tensor b = Tensor::vector({0.5, -1, 4});
  EXPECT_EQ(add(a, b).values(), (std::vector<double>{1.5, 1, 7}));
  EXPECT_EQ(sub(a, b).values(), (std::vector<double>{0.5, 3, -1}));
  EXPECT_EQ(mul(a, b).values(), (std::vector<double>{0.5, -2, 12}));
  EXPECT_DOUBLE_EQ(mean(a).item(), 2.0);
  EXPECT_DOUBLE_EQ(exp(Tensor::scalar(1.0)).item(), std::exp(1.0));
  EXPECT_DOUBLE_EQ(log(Tensor::scalar(std::exp(2.0))).item(), 2.0);
  EXPECT_DOUBLE_EQ(tanh(Tensor::scalar(0.5)).item(), std::tanh(0.5));
}

TEST(Forward, ReshapeFlattenAddBias) {
  const Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(reshape(x, {3, 2}).shape(), (Shape{3, 2}));
  EXPECT_EQ(flatten(x).shape(), (Shape{2, 3}));
  EXPECT_EQ(flatten(reshape(x, {1, 2, 3})).shape(), (Shape{1, 6}));
  EXPECT_EQ(flatten(Tensor::vector({1, 2})).shape(), (Shape{1, 2}));
  const Tensor y = add_bias(x, Tensor::vector({10, 20, 30}));
  EXPECT_EQ(y.values(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(transpose(x).values(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(Forward, ShapeErrorsNameOpAndShapes) {
  const Tensor a = Tensor::matrix(2, 3, std::vector<double>(6, 1.0));
  const Tensor b = Tensor::matrix(2, 2, std::vector<double>(4, 1.0));
  try {
    (void)matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matrix-multiply"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,2]"), std::string::npos) << msg;
  }
  try {
    (void)add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
  }
  EXPECT_THROW((void)add_bias(a, Tensor::vector({1, 2})), ShapeError);
  EXPECT_THROW((void)reshape(a, {4, 2}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 2}, {1, 2, 3}), ShapeError);
}

TEST(BceWithLogits, ZeroLogitPositiveLabel) {
  EXPECT_NEAR(bce_with_logits(Tensor::scalar(0.0), Tensor::scalar(1.0)).item(), std::log(2.0), 1e-15);
}

TEST(BceWithLogits, ConfidentCorrectPrediction) {
  EXPECT_NEAR(bce_with_logits(Tensor::scalar(50.0), Tensor::scalar(1.0)).item(), 0.0, 1e-20);
}

TEST(BceWithLogits, LogitOneLabelZero) {
  // -log(1 - sigmoid(1)) = log(1 + e)
  EXPECT_NEAR(bce_with_logits(Tensor::scalar(1.0), Tensor::scalar(0.0)).item(), 1.3132616875182228, 1e-14);
}

TEST(BceWithLogits, FiniteAtExtremeLogits) {
  for (double l : {-500.0, -50.0, 50.0, 500.0}) {
    for (double y : {0.0, 1.0}) {
      const double v = bce_with_logits(Tensor::scalar(l), Tensor::scalar(y)).item();
      EXPECT_TRUE(std::isfinite(v)) << l << " " << y;
    }
  }
  EXPECT_NEAR(bce_with_logits(Tensor::scalar(-500.0), Tensor::scalar(1.0)).item(), 500.0, 1e-9);
}

TEST(BceWithLogits, RejectsNonBinaryLabels) {
  EXPECT_THROW((void)bce_with_logits(Tensor::scalar(0.0), Tensor::scalar(0.5)), std::invalid_argument);
  EXPECT_THROW((void)bce_with_logits(Tensor::vector({0.0, 1.0}), Tensor::scalar(1.0)), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::matrix(2, 3, {1, -2, 3, 0.5, 7, -1}, true);
  backward(sum(x));
  EXPECT_EQ(x.grad(), std::vector<double>(6, 1.0));
  EXPECT_TRUE(active_tape().empty());
}

TEST(Backward, SigmoidSlopeAtZero) {
  Tensor w = Tensor::scalar(0.0, true);
  const Tensor x = Tensor::scalar(1.0);
  backward(sum(sigmoid(mul(w, x))));
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.25);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x = Tensor::vector({1, 2}, true);
  const Tensor y = tanh(x);
  EXPECT_THROW(backward(y), ShapeError);
  active_tape().clear();
}

TEST(Backward, NoGradGuardSuppressesRecording) {
  active_tape().clear();
  Tensor x = Tensor::vector({1, 2}, true);
  {
    NoGradGuard guard;
    const Tensor y = sum(mul(x, x));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(active_tape().empty());
}

TEST(Backward, SharedInputAccumulates) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  std::mt19937_64 gen(5);
  const Tensor input = random_tensor(gen, {3, 5});
  const Tensor w1 = random_tensor(gen, {5, 6}), b1 = random_tensor(gen, {6});
  const Tensor w2 = random_tensor(gen, {6, 4}), b2 = random_tensor(gen, {4});
  const Tensor w3 = random_tensor(gen, {4, 2}), b3 = random_tensor(gen, {2});
  auto mlp = [&](const Tensor& a, const Tensor& b, const Tensor& c) {
    Tensor h = tanh(add_bias(matmul(input, a), b1));
    h = tanh(add_bias(matmul(h, b), b2));
    return weighted_sum(add_bias(matmul(h, c), b3));
  };
  EXPECT_LT(finite_diff_check([&](const Tensor& p) { return mlp(p, w2, w3); }, w1, 1e-5), 1e-4);
  EXPECT_LT(finite_diff_check([&](const Tensor& p) { return mlp(w1, p, w3); }, w2, 1e-5), 1e-4);
  EXPECT_LT(finite_diff_check([&](const Tensor& p) { return mlp(w1, w2, p); }, w3, 1e-5), 1e-4);
}

// Each op, 100 seeded random instances, through a weighted sum.
TEST(Backward, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 gen(2024);
  const std::vector<std::pair<std::string, std::function<Tensor(const Tensor&, const Tensor&)>>> ops = {
      {"add", [](const Tensor& x, const Tensor& o) { return add(x, o); }},
      {"sub", [](const Tensor& x, const Tensor& o) { return sub(o, x); }},
      {"mul", [](const Tensor& x, const Tensor& o) { return mul(x, o); }},
      {"scale", [](const Tensor& x, const Tensor&) { return scale(x, -1.7); }},
      {"matmul_left", [](const Tensor& x, const Tensor& o) { return matmul(x, transpose(o)); }},
      {"matmul_right", [](const Tensor& x, const Tensor& o) { return matmul(o, transpose(x)); }},
      {"transpose", [](const Tensor& x, const Tensor&) { return transpose(x); }},
      {"tanh", [](const Tensor& x, const Tensor&) { return tanh(x); }},
      {"sigmoid", [](const Tensor& x, const Tensor&) { return sigmoid(x); }},
      {"exp", [](const Tensor& x, const Tensor&) { return exp(x); }},
      {"log", [](const Tensor& x, const Tensor&) { return log(add(mul(x, x), Tensor::full(x.shape(), 0.5))); }},
      {"mean", [](const Tensor& x, const Tensor&) { return scale(mean(mul(x, x)), 3.0); }},
      {"reshape", [](const Tensor& x, const Tensor&) { return mul(reshape(x, {1, x.size()}), flatten(reshape(x, {1, x.dim(0), x.dim(1)}))); }},
      {"add_bias",
       [](const Tensor& x, const Tensor& o) {
         return add_bias(o, reshape(matmul(Tensor::matrix(1, 3, {0.5, -1.0, 2.0}), x), {x.dim(1)}));
       }},
      {"bias_grad",
       [](const Tensor& x, const Tensor& o) {
         return add_bias(mul(x, o), Tensor::full({x.dim(1)}, 0.25));
       }},
      {"bce_with_logits",
       [](const Tensor& x, const Tensor& o) {
         std::vector<double> y(o.size());
         for (std::size_t i = 0; i < y.size(); ++i) y[i] = o[i] > 0 ? 1.0 : 0.0;
         return bce_with_logits(scale(x, 3.0), Tensor(x.shape(), std::move(y)));
       }},
  };
  for (const auto& [name, op] : ops) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor x = random_tensor(gen, {3, 4});
      const Tensor other = random_tensor(gen, {3, 4});
      worst = std::max(worst, finite_diff_check([&](const Tensor& p) { return weighted_sum(op(p, other)); }, x, 1e-5));
    }
    EXPECT_LT(worst, 1e-4) << name;
  }
}

TEST(FiniteDiffCheck, SumOfSquares) {
  const Tensor x = Tensor::vector({1, 2});
  EXPECT_LT(finite_diff_check([](const Tensor& p) { return sum(mul(p, p)); }, x, 1e-5), 1e-6);
}

TEST(FiniteDiffCheck, ConstantFunctionHasZeroError) {
  const Tensor x = Tensor::vector({1, 2, 3});
  EXPECT_EQ(finite_diff_check([](const Tensor&) { return Tensor::scalar(4.0); }, x, 1e-5), 0.0);
}

TEST(FiniteDiffCheck, DetectsWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  auto broken = [](const Tensor& x) {
    Tensor y = Tensor::scalar(x[0] * x[0]);
    if (x.requires_grad()) {
      auto xn = x.node(), yn = y.node();
      record_op("broken", {x}, y, [xn, yn] { xn->accumulate(0, yn->grad[0] * 3.0 * xn->data[0]); });
    }
    return y;
  };
  EXPECT_GT(finite_diff_check(broken, Tensor::vector({1.3}), 1e-5), 0.1);
}

TEST(Adam, ZeroGradientIsExactNoOp) {
  Tensor p = Tensor::vector({0.25, -3.0, 7.5}, true);
  const auto before = p.values();
  AdamState state({p}, AdamOptions{0.1});
  for (int i = 0; i < 10; ++i) {
    p.node()->grad_buffer();  // all-zero grad present
    adam_step(state);
  }
  EXPECT_EQ(p.values(), before);
  EXPECT_EQ(state.step_count(), 10);
}

TEST(Adam, ConstantGradientDescends) {
  Tensor p = Tensor::vector({1.0, 1.0}, true);
  AdamState state({p}, AdamOptions{0.01});
  for (int i = 0; i < 100; ++i) {
    p.node()->accumulate(0, 2.0);
    p.node()->accumulate(1, -0.5);
    adam_step(state);
  }
  EXPECT_LT(p[0], 1.0);
  EXPECT_GT(p[1], 1.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::scalar(0.0, true);
  AdamState state({p}, AdamOptions{0.1});
  p.node()->accumulate(0, 1.0);
  adam_step(state);
  // m_hat = 1, v_hat = 1: step = -0.1 / (1 + 1e-8)
  EXPECT_NEAR(p.item(), -0.1 / (1.0 + 1e-8), 1e-16);
  EXPECT_FALSE(p.has_grad());
}

TEST(Adam, UninitializedStateRejected) {
  AdamState state;
  EXPECT_THROW(adam_step(state), std::logic_error);
}
