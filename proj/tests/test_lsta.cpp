#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace gsnaco;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

LstaCell<double> zero_cell(std::size_t cin, std::size_t cm, std::size_t p) {
  std::mt19937_64 rng(0);
  LstaCell<double> cell({cin, cm, p, 1.0}, rng);
  for (auto* conv : {&cell.attention, &cell.input_gate, &cell.forget_gate, &cell.output_gate, &cell.candidate}) {
    for (auto& v : conv->weight.data()) v = 0;
    for (auto& v : conv->bias.data()) v = 0;
  }
  for (auto& v : cell.prototypes.data()) v = 0;
  return cell;
}

LstaCell<double> random_cell(std::size_t cin, std::size_t cm, std::size_t p, double lambda, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return LstaCell<double>({cin, cm, p, lambda}, rng);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Sets the centre tap of a 3×3 kernel on (x, h) inputs of a 1-channel,
// 1-memory cell.
void set_taps(Conv2d<double>& conv, double wx, double wh, double b) {
  for (auto& v : conv.weight.data()) v = 0;
  conv.weight.data()[0 * 9 + 4] = wx;
  conv.weight.data()[1 * 9 + 4] = wh;
  conv.bias.data()[0] = b;
}

}  // namespace

TEST(Attend, FreshStateZeroWeightsIsUniform) {
  auto cell = zero_cell(3, 4, 2);
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 3, 4, 5}, rng);
  auto a = attend(x, LstaState<double>::initial(2, 4, 4, 5), cell);
  for (double v : a.values()) EXPECT_NEAR(v, 1.0 / 20, 1e-15);
}

TEST(Attend, IsADistributionForRandomInputs) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto cell = random_cell(3, 4, 2, 1.0, trial);
    auto state = LstaState<double>::initial(2, 4, 3, 4);
    for (int t = 0; t < 4; ++t) {
      auto x = random_tensor({2, 3, 3, 4}, rng, -3, 3);
      auto a = attend(x, state, cell);
      for (std::size_t b = 0; b < 2; ++b) {
        double s = 0;
        for (std::size_t p = 0; p < 12; ++p) {
          EXPECT_GE(a.values()[b * 12 + p], 0.0);
          s += a.values()[b * 12 + p];
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
      state = cell_step(x, state, cell).state;
    }
  }
}

TEST(Attend, LambdaZeroWithInputOnlyKernelForgetsHistory) {
  auto cell = random_cell(3, 4, 2, 0.0, 3);
  // Zero the hidden-state half of the attention kernel.
  auto w = cell.attention.weight.data();
  for (std::size_t c = 3; c < 7; ++c)
    for (std::size_t k = 0; k < 9; ++k) w[c * 9 + k] = 0;
  std::mt19937_64 rng(4);
  auto target = random_tensor({1, 3, 4, 4}, rng);
  auto fresh = LstaState<double>::initial(1, 4, 4, 4);
  auto state = fresh;
  for (int t = 0; t < 3; ++t) state = cell_step(random_tensor({1, 3, 4, 4}, rng), state, cell).state;
  auto a1 = attend(target, fresh, cell), a2 = attend(target, state, cell);
  EXPECT_TRUE(bitwise_equal(a1.values(), a2.values()));
}

TEST(Attend, ShapeMismatchRejected) {
  auto cell = random_cell(3, 4, 2, 1.0, 5);
  std::mt19937_64 rng(5);
  EXPECT_THROW(attend(random_tensor({1, 2, 4, 4}, rng), LstaState<double>::initial(1, 4, 4, 4), cell),
               std::invalid_argument);
  EXPECT_THROW(attend(random_tensor({1, 3, 4, 4}, rng), LstaState<double>::initial(1, 4, 3, 4), cell),
               std::invalid_argument);
}

TEST(CellStep, ZeroEverythingClosedForm) {
  auto cell = zero_cell(2, 3, 2);
  auto x = Tensor::zeros({1, 2, 3, 3});
  auto step = cell_step(x, LstaState<double>::initial(1, 3, 3, 3), cell);
  for (double v : step.state.memory.values()) EXPECT_EQ(v, 0.0);
  for (double v : step.output.values()) EXPECT_EQ(v, 0.0);
}

TEST(CellStep, ScalarHandTrace) {
  auto cell = zero_cell(1, 1, 1);
  cell.cfg.attention_recurrence = 0.0;
  set_taps(cell.input_gate, 0.8, 0.3, 0.1);
  set_taps(cell.forget_gate, -0.4, 0.2, 0.0);
  set_taps(cell.candidate, 1.2, -0.5, -0.3);
  set_taps(cell.output_gate, 0.6, 0.1, 0.2);
  cell.prototypes.data()[0] = 0.7;

  auto state = LstaState<double>::initial(1, 1, 1, 1);
  state.memory.data()[0] = 0.4;
  state.hidden.data()[0] = -0.25;
  Tensor x({1, 1, 1, 1}, {0.5});
  auto step = cell_step(x, state, cell);

  // Single spatial position: attention is 1, so x̃ = x.
  const double xt = 0.5, h = -0.25, c0 = 0.4;
  const double i = sig(0.8 * xt + 0.3 * h + 0.1);
  const double f = sig(-0.4 * xt + 0.2 * h);
  const double g = std::tanh(1.2 * xt - 0.5 * h - 0.3);
  const double c = f * c0 + i * g;
  const double o = sig(0.6 * xt + 0.1 * h + 0.2 + 0.7);  // one prototype, selected with weight 1
  EXPECT_NEAR(step.state.attention.values()[0], 1.0, 1e-15);
  EXPECT_NEAR(step.state.memory.values()[0], c, 1e-15);
  EXPECT_NEAR(step.output.values()[0], o * std::tanh(c), 1e-15);
  // Worked values: i=σ(0.425), f=σ(−0.25), g=tanh(0.425), c≈0.4177, h≈0.3018.
  EXPECT_NEAR(c, 0.417687, 1e-6);
  EXPECT_NEAR(o * std::tanh(c), 0.301784, 1e-6);
}

TEST(CellStep, HiddenStaysInUnitBallAndFinite) {
  std::mt19937_64 rng(6);
  auto cell = random_cell(3, 4, 3, 1.0, 6);
  auto state = LstaState<double>::initial(2, 4, 3, 3);
  double cmax_prev = 0;
  for (int t = 0; t < 30; ++t) {
    auto step = cell_step(random_tensor({2, 3, 3, 3}, rng, -5, 5), state, cell);
    for (double v : step.output.values()) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_LE(std::abs(v), 1.0);
    }
    double cmax = 0;
    for (double v : step.state.memory.values()) cmax = std::max(cmax, std::abs(v));
    // |c_t| ≤ |c_{t−1}| + 1 since σ(f) ≤ 1 and |σ(i)·tanh(g)| ≤ 1.
    ASSERT_LE(cmax, cmax_prev + 1.0 + 1e-12);
    cmax_prev = cmax;
    state = step.state;
  }
}

TEST(OutputPooling, DependsOnMemoryOnlyThroughSpatialMean) {
  auto cell = random_cell(2, 3, 4, 1.0, 7);
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> q(-16, 16);
  // Dyadic memory and a zero-mean dyadic pattern keep the spatial sums exact.
  std::vector<double> mem(1 * 3 * 2 * 2), pattern(mem.size());
  for (auto& v : mem) v = q(rng) / 16.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double d = q(rng) / 16.0;
    pattern[c * 4 + 0] = d;
    pattern[c * 4 + 1] = -d;
    pattern[c * 4 + 2] = 2 * d;
    pattern[c * 4 + 3] = -2 * d;
  }
  std::vector<double> shifted(mem.size());
  for (std::size_t i = 0; i < mem.size(); ++i) shifted[i] = mem[i] + pattern[i];
  auto w1 = output_pooling_bias(Tensor({1, 3, 2, 2}, mem), cell);
  auto w2 = output_pooling_bias(Tensor({1, 3, 2, 2}, shifted), cell);
  EXPECT_TRUE(bitwise_equal(w1.values(), w2.values()));
}

TEST(Aggregate, SingleFrameEqualsOneStep) {
  auto cell = random_cell(3, 4, 2, 1.0, 8);
  std::mt19937_64 rng(8);
  auto seq = random_tensor({2, 1, 3, 4, 4}, rng);
  auto d = aggregate(seq, cell);
  auto step = cell_step(select1(seq, 0), LstaState<double>::initial(2, 4, 4, 4), cell);
  EXPECT_TRUE(bitwise_equal(d.values(), avg_pool_spatial(step.output).values()));
}

TEST(Aggregate, OutputShapeIsMemorySize) {
  auto cell = random_cell(3, 5, 2, 1.0, 9);
  std::mt19937_64 rng(9);
  for (auto [t, h, w] : {std::tuple{1, 2, 2}, std::tuple{4, 3, 5}, std::tuple{7, 1, 1}}) {
    auto d = aggregate(random_tensor({2, static_cast<std::size_t>(t), 3, static_cast<std::size_t>(h),
                                      static_cast<std::size_t>(w)},
                                     rng),
                       cell);
    EXPECT_EQ(d.shape(), (Shape{2, 5}));
  }
  EXPECT_THROW(aggregate(random_tensor({1, 3, 4, 4}, rng), cell), ShapeError);
}

TEST(Aggregate, FirstFrameReceivesGradient) {
  auto cell = random_cell(3, 4, 2, 1.0, 10);
  std::mt19937_64 rng(10);
  auto seq = random_tensor({1, 4, 3, 3, 3}, rng, -1, 1, true);
  auto d = aggregate(seq, cell);
  backward(sum(mul(d, d)));
  double g = 0;
  for (std::size_t i = 0; i < 27; ++i) g += std::abs(seq.grad()[i]);
  EXPECT_GT(g, 1e-8);
}

TEST(LstaCellConfig, GateShapesMapJointChannelsToMemory) {
  auto cell = random_cell(5, 7, 3, 1.0, 11);
  for (const auto* conv : {&cell.input_gate, &cell.forget_gate, &cell.output_gate, &cell.candidate}) {
    EXPECT_EQ(conv->weight.shape(), (Shape{7, 12, 3, 3}));
  }
  EXPECT_EQ(cell.attention.weight.shape(), (Shape{1, 12, 3, 3}));
  EXPECT_EQ(cell.prototypes.shape(), (Shape{3, 7}));
  std::mt19937_64 rng(0);
  EXPECT_THROW(LstaCell<double>({0, 4, 2, 1.0}, rng), std::invalid_argument);
}
