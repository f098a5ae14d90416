#include "pricelab/nn.hpp"

#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "pricelab/error.hpp"

namespace pricelab::nn {
namespace {

using Loss = std::function<Var(Tape&, std::vector<Var>&)>;

// Central-difference check of every parameter gradient of `loss`.
void expect_gradients_match(ParameterSet& params, const Loss& loss,
                            double tol = 1e-6) {
  auto run = [&](bool grad) {
    Tape tape;
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(tape.parameter(p));
    Var l = loss(tape, vars);
    if (grad) {
      params.zero_grad();
      tape.backward(l);
    }
    return l.scalar();
  };
  run(true);
  const auto analytic = params.flatten_grad();
  auto flat = params.flatten();
  const double h = 1e-6;
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const double x0 = flat[k];
    flat[k] = x0 + h;
    params.assign(flat);
    const double up = run(false);
    flat[k] = x0 - h;
    params.assign(flat);
    const double down = run(false);
    flat[k] = x0;
    params.assign(flat);
    const double numeric = (up - down) / (2 * h);
    EXPECT_NEAR(analytic[k], numeric, tol * std::max(1.0, std::abs(numeric)))
        << "component " << k;
  }
}

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng,
                     double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = lo + (hi - lo) * rng.uniform();
  return m;
}

// Random linear read-out so that every output element matters.
Var readout(Var y, std::uint64_t seed) {
  RngStream rng(seed);
  return sum_all(mul_const(y, random_matrix(y.rows(), y.cols(), rng)));
}

class OpGradientTest : public ::testing::Test {
 protected:
  void SetUp() override {
    RngStream rng(42);
    a_ = params_.add("a", 3, 4);
    b_ = params_.add("b", 3, 4);
    c_ = params_.add("c", 4, 2);
    r_ = params_.add("r", 1, 4);
    for (auto& p : params_) p.value = random_matrix(p.value.rows, p.value.cols, rng);
    // Keep a and b apart so that minimum() has no ties.
    for (double& v : params_[b_].value.data) v += 3.0;
  }

  void check(const std::function<Var(std::vector<Var>&)>& op) {
    expect_gradients_match(params_, [&](Tape&, std::vector<Var>& v) {
      return readout(op(v), 7);
    });
  }

  ParameterSet params_;
  std::size_t a_ = 0, b_ = 0, c_ = 0, r_ = 0;
};

TEST_F(OpGradientTest, Matmul) { check([](auto& v) { return matmul(v[0], v[2]); }); }
TEST_F(OpGradientTest, Add) { check([](auto& v) { return add(v[0], v[1]); }); }
TEST_F(OpGradientTest, Sub) { check([](auto& v) { return sub(v[0], v[1]); }); }
TEST_F(OpGradientTest, Mul) { check([](auto& v) { return mul(v[0], v[1]); }); }
TEST_F(OpGradientTest, AddRow) { check([](auto& v) { return add_row(v[0], v[3]); }); }
TEST_F(OpGradientTest, Scale) { check([](auto& v) { return scale(v[0], -2.5); }); }
TEST_F(OpGradientTest, Tanh) { check([](auto& v) { return tanh(v[0]); }); }
TEST_F(OpGradientTest, Relu) { check([](auto& v) { return relu(v[0]); }); }
TEST_F(OpGradientTest, LeakyRelu) {
  check([](auto& v) { return leaky_relu(v[0], 0.2); });
}
TEST_F(OpGradientTest, Exp) { check([](auto& v) { return exp(v[0]); }); }
TEST_F(OpGradientTest, Square) { check([](auto& v) { return square(v[0]); }); }
TEST_F(OpGradientTest, Clip) {
  check([](auto& v) { return clip(v[0], -0.37, 0.41); });
}
TEST_F(OpGradientTest, Minimum) {
  check([](auto& v) { return minimum(v[0], scale(v[1], 0.1)); });
}
TEST_F(OpGradientTest, ConcatCols) {
  check([](auto& v) { return concat_cols(v[0], v[1]); });
}
TEST_F(OpGradientTest, GatherRowsWithRepeats) {
  const std::vector<std::size_t> idx = {2, 0, 2, 1, 2};
  check([&](auto& v) { return gather_rows(v[0], idx); });
}
TEST_F(OpGradientTest, Pick) {
  const std::vector<std::size_t> cols = {3, 0, 1};
  check([&](auto& v) { return pick(v[0], cols); });
}
TEST_F(OpGradientTest, SumRows) { check([](auto& v) { return sum_rows(v[0]); }); }
TEST_F(OpGradientTest, MeanAll) { check([](auto& v) { return mean_all(v[0]); }); }
TEST_F(OpGradientTest, LogSoftmaxRows) {
  check([](auto& v) { return log_softmax_rows(v[0]); });
}
TEST_F(OpGradientTest, SegmentSoftmax) {
  const std::vector<std::size_t> offsets = {0, 1, 3, 6};
  // Flatten a 3x2 product into a 6x1 score column.
  check([&](auto& v) {
    const std::vector<std::size_t> rows = {0, 1, 2, 0, 1, 2};
    const std::vector<std::size_t> col0 = {0, 0, 0, 1, 1, 1};
    Var s = pick(gather_rows(matmul(v[0], v[2]), rows), col0);
    return segment_softmax(s, offsets);
  });
}
TEST_F(OpGradientTest, SegmentWeightedSum) {
  const std::vector<std::size_t> offsets = {0, 2, 3};
  check([&](auto& v) {
    Var w = sum_rows(v[0]);  // 3 x 1
    return segment_weighted_sum(w, v[1], offsets);
  });
}
TEST_F(OpGradientTest, SegmentMean) {
  const std::vector<std::size_t> offsets = {0, 1, 3};
  check([&](auto& v) { return segment_mean(v[0], offsets); });
}
TEST_F(OpGradientTest, DetachBlocksGradient) {
  Tape tape;
  Var a = tape.parameter(params_[a_]);
  params_.zero_grad();
  tape.backward(sum_all(mul(detach(a), a)));
  const auto& g = params_[a_].grad.data;
  for (std::size_t k = 0; k < g.size(); ++k) {
    EXPECT_DOUBLE_EQ(g[k], params_[a_].value.data[k]);
  }
}

TEST(SegmentSoftmaxTest, SegmentsSumToOne) {
  Tape tape;
  Var s = tape.constant(Matrix(5, 1, {0.3, -1.0, 2.0, 0.5, 7.0}));
  const std::vector<std::size_t> offsets = {0, 2, 3, 5};
  const auto& y = segment_softmax(s, offsets).value();
  EXPECT_NEAR(y.data[0] + y.data[1], 1.0, 1e-15);
  EXPECT_EQ(y.data[2], 1.0);
  EXPECT_NEAR(y.data[3] + y.data[4], 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(y.data[0] / y.data[1], std::exp(1.3));
}

TEST(TapeTest, BackwardBeforeForwardThrows) {
  Tape tape;
  Var none;
  EXPECT_THROW(tape.backward(none), Error);
}

TEST(TapeTest, NonScalarLossThrows) {
  ParameterSet ps;
  ps.add("x", 2, 2);
  Tape tape;
  Var x = tape.parameter(ps[0]);
  EXPECT_THROW(tape.backward(x), Error);
}

TEST(TapeTest, SumGivesUnitGradients) {
  ParameterSet ps;
  ps.add("x", 3, 5);
  RngStream rng(1);
  ps[0].value = random_matrix(3, 5, rng);
  Tape tape;
  tape.backward(sum_all(tape.parameter(ps[0])));
  for (double g : ps[0].grad.data) EXPECT_EQ(g, 1.0);
}

TEST(TapeTest, OffPathParameterHasZeroGradient) {
  ParameterSet ps;
  ps.add("on", 2, 2);
  ps.add("off", 2, 2);
  ps[0].value = Matrix(2, 2, 0.5);
  ps[1].value = Matrix(2, 2, 0.5);
  Tape tape;
  Var on = tape.parameter(ps[0]);
  tape.parameter(ps[1]);
  tape.backward(sum_all(square(on)));
  for (double g : ps[0].grad.data) EXPECT_EQ(g, 1.0);
  for (double g : ps[1].grad.data) EXPECT_EQ(g, 0.0);
}

TEST(TapeTest, GradientsAccumulateAcrossPasses) {
  ParameterSet ps;
  ps.add("x", 1, 1);
  ps[0].value.data[0] = 3.0;
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    tape.backward(sum_all(square(tape.parameter(ps[0]))));
  }
  EXPECT_EQ(ps[0].grad.data[0], 12.0);
}

TEST(TapeTest, NonFiniteValuesAreRejected) {
  Tape tape;
  Var big = tape.constant(Matrix(1, 1, 1000.0));
  EXPECT_THROW(exp(big), NonFiniteError);
}

TEST(TapeTest, ShapeMismatchesThrow) {
  Tape tape;
  Var a = tape.constant(Matrix(2, 3));
  Var b = tape.constant(Matrix(2, 2));
  EXPECT_THROW(add(a, b), Error);
  EXPECT_THROW(matmul(a, b), Error);
}

TEST(MlpTest, LinearHandExample) {
  ParameterSet ps;
  Mlp mlp(ps, "m", {2, 1}, Activation::kTanh);
  ps[0].value = Matrix(2, 1, {1.0, 2.0});
  ps[1].value = Matrix(1, 1, {0.5});
  Tape tape;
  Var y = mlp.forward(tape, ps, tape.constant(Matrix(1, 2, {3.0, 4.0})));
  EXPECT_EQ(y.scalar(), 11.5);
}

TEST(MlpTest, HiddenTanhHandExample) {
  ParameterSet ps;
  Mlp mlp(ps, "m", {1, 2, 1}, Activation::kTanh);
  ps[0].value = Matrix(1, 2, {1.0, -1.0});
  ps[1].value = Matrix(1, 2, {0.0, 0.5});
  ps[2].value = Matrix(2, 1, {2.0, 3.0});
  ps[3].value = Matrix(1, 1, {-1.0});
  Tape tape;
  Var y = mlp.forward(tape, ps, tape.constant(Matrix(1, 1, {0.25})));
  EXPECT_DOUBLE_EQ(y.scalar(), 2.0 * std::tanh(0.25) + 3.0 * std::tanh(0.25) - 1.0);
}

TEST(MlpTest, GradientsMatchFiniteDifferences) {
  ParameterSet ps;
  Mlp mlp(ps, "m", {3, 5, 2}, Activation::kTanh, Activation::kTanh);
  RngStream rng(3);
  ps.init_uniform_fan_in(rng);
  const Matrix x = random_matrix(4, 3, rng);
  expect_gradients_match(ps, [&](Tape& t, std::vector<Var>&) {
    return readout(mlp.forward(t, ps, t.constant(x)), 11);
  });
}

TEST(MlpTest, WrongInputWidthThrows) {
  ParameterSet ps;
  Mlp mlp(ps, "m", {3, 2}, Activation::kTanh);
  Tape tape;
  EXPECT_THROW(mlp.forward(tape, ps, tape.constant(Matrix(1, 4))), Error);
}

TEST(ParameterSetTest, FanInInitBounds) {
  ParameterSet ps;
  ps.add("l.w", 16, 8);
  ps.add("l.b", 1, 8);
  RngStream rng(5);
  ps.init_uniform_fan_in(rng);
  for (double v : ps[0].value.data) EXPECT_LE(std::abs(v), 0.25);
  for (double v : ps[1].value.data) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(ps.count(), 136u);
}

TEST(ParameterSetTest, CheckpointRoundTripIsBitExact) {
  ParameterSet ps;
  ps.add("l.w", 7, 3, ParamGroup::kGatProjection);
  ps.add("l.b", 1, 3);
  RngStream rng(6);
  for (auto& p : ps) p.value = random_matrix(p.value.rows, p.value.cols, rng, -1e3, 1e3);
  ParameterSet back;
  back.add("l.w", 7, 3);
  back.add("l.b", 1, 3);
  back.load_json(nlohmann::json::parse(ps.to_json().dump()));
  EXPECT_EQ(back.flatten(), ps.flatten());
  EXPECT_EQ(back[0].group, ParamGroup::kGatProjection);

  ParameterSet other;
  other.add("l.w", 7, 4);
  other.add("l.b", 1, 3);
  EXPECT_THROW(other.load_json(ps.to_json()), ParseError);
}

TEST(SgdTest, PlainStepExamples) {
  ParameterSet ps;
  ps.add("x", 1, 1);
  ps[0].value.data[0] = 1.0;
  ps[0].grad.data[0] = 2.0;
  sgd_step(ps, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(ps[0].value.data[0], 0.8);
  ps[0].value.data[0] = 1.0;
  ps[0].grad.data[0] = 0.1;
  sgd_step(ps, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(ps[0].value.data[0], 0.99);
  sgd_step(ps, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(ps[0].value.data[0], 0.99);
}

TEST(SgdTest, WeightDecayOnlyTouchesGatProjections) {
  ParameterSet ps;
  ps.add("dense", 1, 1);
  ps.add("proj", 1, 1, ParamGroup::kGatProjection);
  ps.add("attn", 1, 1, ParamGroup::kGatAttention);
  for (auto& p : ps) p.value.data[0] = 1.0;
  sgd_step(ps, 0.1, 0.5);
  EXPECT_EQ(ps[0].value.data[0], 1.0);
  EXPECT_DOUBLE_EQ(ps[1].value.data[0], 0.95);
  EXPECT_EQ(ps[2].value.data[0], 1.0);
}

TEST(SgdTest, MomentumAccumulates) {
  ParameterSet ps;
  ps.add("x", 1, 1);
  ps[0].value.data[0] = 1.0;
  SgdOptimizer opt({.learning_rate = 0.1, .momentum = 0.9});
  ps[0].grad.data[0] = 1.0;
  opt.step(ps);
  EXPECT_DOUBLE_EQ(ps[0].value.data[0], 0.9);
  opt.step(ps);
  EXPECT_DOUBLE_EQ(ps[0].value.data[0], 0.71);
}

TEST(SgdTest, GlobalNormClipping) {
  ParameterSet ps;
  ps.add("x", 1, 2);
  ps[0].grad = Matrix(1, 2, {3.0, 4.0});
  SgdOptimizer opt({.learning_rate = 1.0, .max_grad_norm = 0.5});
  opt.step(ps);
  EXPECT_DOUBLE_EQ(ps[0].value.data[0], -0.3);
  EXPECT_DOUBLE_EQ(ps[0].value.data[1], -0.4);
}

TEST(CategoricalTest, UniformEntropyIsLogK) {
  const std::vector<double> logits(5, 0.7);
  const auto d = categorical_greedy(logits);
  EXPECT_NEAR(d.entropy, std::log(5.0), 1e-14);
  EXPECT_NEAR(d.log_prob, -std::log(5.0), 1e-14);
  EXPECT_EQ(d.action, 0);  // first index on ties
}

TEST(CategoricalTest, SaturatedLogits) {
  const std::vector<double> logits = {-500.0, 800.0, 0.0};
  const auto d = categorical_greedy(logits);
  EXPECT_EQ(d.action, 1);
  EXPECT_EQ(d.log_prob, 0.0);
  EXPECT_NEAR(d.entropy, 0.0, 1e-12);
  RngStream rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(categorical_sample(logits, rng).action, 1);
}

TEST(CategoricalTest, SampleFrequenciesMatchSoftmax) {
  const std::vector<double> logits = {0.0, 1.0, -0.5, 2.0};
  std::vector<double> lp(4);
  log_softmax(logits, lp);
  RngStream rng(77);
  const int n = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) {
    const auto d = categorical_sample(logits, rng);
    ++counts[d.action];
    ASSERT_EQ(d.log_prob, lp[d.action]);
  }
  for (int k = 0; k < 4; ++k) {
    const double p = std::exp(lp[k]);
    const double se = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(counts[k] / static_cast<double>(n), p, 4 * se) << k;
  }
}

TEST(CategoricalTest, EmptyLogitsThrow) {
  RngStream rng(1);
  EXPECT_THROW(categorical_sample({}, rng), Error);
  EXPECT_THROW(categorical_greedy({}), Error);
}

}  // namespace
}  // namespace pricelab::nn
