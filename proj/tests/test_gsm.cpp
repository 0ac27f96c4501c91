#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace gsnaco;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

GsmLayer<double> saturated_layer(std::size_t channels, double bias) {
  GsmLayer<double> layer(channels);
  for (auto& v : layer.gate.bias.data()) v = bias;
  return layer;
}

GsmLayer<double> random_layer(std::size_t channels, std::mt19937_64& rng) {
  GsmLayer<double> layer(channels);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& v : layer.gate.weight.data()) v = u(rng);
  for (auto& v : layer.gate.bias.data()) v = u(rng);
  return layer;
}

}  // namespace

TEST(GroupShift, DefinitionOnThreeFrames) {
  // One channel per group, values a=1, b=2, c=3 along time.
  Tensor x({1, 3, 2, 1, 1}, {1, 1, 2, 2, 3, 3});
  auto y = group_shift(x);
  EXPECT_EQ(y.values(), (std::vector<double>{0, 2, 1, 3, 2, 0}));
}

TEST(GroupShift, SingleFrameVanishes) {
  std::mt19937_64 rng(1);
  auto y = group_shift(random_tensor({2, 1, 4, 3, 3}, rng));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(GroupShift, MatchesIndexMapOracleOnRandomShapes) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> bd(1, 3), td(1, 6), cd(1, 4), sd(1, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = bd(rng), t = td(rng), c = 2 * cd(rng), h = sd(rng), w = sd(rng);
    auto x = random_tensor({b, t, c, h, w}, rng);
    const auto ref = oracle::shift_by_index_map(x.values(), b, t, c, h * w);
    ASSERT_TRUE(bitwise_equal(group_shift(x).values(), ref)) << b << "x" << t << "x" << c << "x" << h << "x" << w;
  }
}

TEST(GroupShift, IsLinear) {
  std::mt19937_64 rng(3);
  // Dyadic values keep a·x + b·y exact.
  std::uniform_int_distribution<int> q(-64, 64);
  std::vector<double> xv(2 * 4 * 4 * 2 * 2), yv(xv.size());
  for (auto& v : xv) v = q(rng) / 8.0;
  for (auto& v : yv) v = q(rng) / 8.0;
  Tensor x({2, 4, 4, 2, 2}, xv), y({2, 4, 4, 2, 2}, yv);
  auto lhs = group_shift(add(scale(x, 0.5), scale(y, -2.0)));
  auto rhs = add(scale(group_shift(x), 0.5), scale(group_shift(y), -2.0));
  EXPECT_TRUE(bitwise_equal(lhs.values(), rhs.values()));
}

TEST(GroupShift, RejectsWrongRank) {
  EXPECT_THROW(group_shift(Tensor({2, 2}, {1, 2, 3, 4})), ShapeError);
}

TEST(SpatialGate, ZeroGateGivesZeroGatedPart) {
  std::mt19937_64 rng(4);
  auto y = random_tensor({2, 3, 4, 5, 5}, rng);
  GsmLayer<double> layer(4);
  auto s = spatial_gate(y, layer);
  for (double v : s.gated.values()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(bitwise_equal(s.residual.values(), y.values()));
}

TEST(SpatialGate, SaturatedGatePassesEverything) {
  std::mt19937_64 rng(5);
  auto y = random_tensor({1, 2, 4, 3, 3}, rng);
  auto s = spatial_gate(y, saturated_layer(4, 40.0));
  for (std::size_t i = 0; i < y.numel(); ++i) {
    EXPECT_NEAR(s.gated.values()[i], y.values()[i], 1e-6);
    EXPECT_NEAR(s.residual.values()[i], 0.0, 1e-6);
  }
}

TEST(SpatialGate, ReconstructionIsBitwiseForRandomGates) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto layer = random_layer(6, rng);
    auto y = random_tensor({2, 3, 6, 4, 4}, rng, -10, 10);
    auto s = spatial_gate(y, layer);
    ASSERT_TRUE(bitwise_equal(add(s.gated, s.residual).values(), y.values()));
  }
  TensorF yf = random_tensor<float>({1, 2, 4, 3, 3}, rng);
  GsmLayer<float> lf(4);
  for (auto& v : lf.gate.weight.data()) v = 0.3f;
  auto sf = spatial_gate(yf, lf);
  EXPECT_TRUE(bitwise_equal(add(sf.gated, sf.residual).values(), yf.values()));
}

TEST(SpatialGate, GatePlaneIsSharedWithinGroup) {
  std::mt19937_64 rng(7);
  auto layer = random_layer(4, rng);
  auto y = Tensor::full({1, 1, 4, 3, 3}, 1.0);
  auto s = spatial_gate(y, layer);
  // With a constant input, channels of one group carry the same gate plane.
  for (std::size_t p = 0; p < 9; ++p) {
    EXPECT_EQ(s.gated.values()[0 * 9 + p], s.gated.values()[1 * 9 + p]);
    EXPECT_EQ(s.gated.values()[2 * 9 + p], s.gated.values()[3 * 9 + p]);
  }
}

TEST(SpatialGate, ChannelMismatchRejected) {
  std::mt19937_64 rng(8);
  EXPECT_THROW(spatial_gate(random_tensor({1, 2, 6, 3, 3}, rng), GsmLayer<double>(4)), std::invalid_argument);
  EXPECT_THROW(GsmLayer<double>(3), std::invalid_argument);
}

TEST(GsmForward, ZeroGateIsIdentity) {
  std::mt19937_64 rng(9);
  auto y = random_tensor({2, 5, 8, 4, 4}, rng);
  EXPECT_TRUE(bitwise_equal(gsm_forward(y, GsmLayer<double>(8)).values(), y.values()));
}

TEST(GsmForward, SingleFrameKeepsOnlyResidual) {
  std::mt19937_64 rng(10);
  auto layer = random_layer(4, rng);
  auto y = random_tensor({1, 1, 4, 3, 3}, rng);
  auto out = gsm_forward(y, layer);
  EXPECT_TRUE(bitwise_equal(out.values(), spatial_gate(y, layer).residual.values()));
}

TEST(GsmForward, HandTraceWithUnitGate) {
  const double p = 1.5, q = -2.0, r = 0.25, s = 3.0;
  Tensor y({1, 2, 2, 1, 1}, {p, q, r, s});
  auto layer = saturated_layer(2, 40.0);  // tanh(40) rounds to 1 in double
  auto split = spatial_gate(y, layer);
  EXPECT_EQ(split.gated.values(), y.values());
  EXPECT_EQ(split.residual.values(), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_EQ(gsm_forward(y, layer).values(), (std::vector<double>{0, s, p, 0}));
}

TEST(Gsn, FreshModelEqualsGsmFreeBackbone) {
  std::mt19937_64 rng(11);
  GsnConfig with{testutil::tiny_backbone(true), {5, 3, 15}, 0.5, 42};
  GsnConfig without = with;
  without.backbone.use_gsm = false;
  GsnModel<double> a(with), b(without);
  for (int trial = 0; trial < 5; ++trial) {
    auto clip = random_tensor({2, 4, 3, 12, 12}, rng);
    auto sa = a.forward(clip, {}), sb = b.forward(clip, {});
    EXPECT_TRUE(bitwise_equal(sa.verb.values(), sb.verb.values()));
    EXPECT_TRUE(bitwise_equal(sa.noun.values(), sb.noun.values()));
    EXPECT_TRUE(bitwise_equal(sa.action.values(), sb.action.values()));
  }
}

TEST(Gsn, ParameterCountAddsGateKernels) {
  GsnConfig cfg{testutil::tiny_backbone(true), {5, 3, 15}, 0.5, 1};
  GsnConfig plain = cfg;
  plain.backbone.use_gsm = false;
  GsnModel<double> a(cfg), b(plain);
  std::size_t gates = 0;
  for (const auto& blk : cfg.backbone.blocks) gates += 2 * (blk.channels / 2) * 9 + 2;
  EXPECT_EQ(a.parameters().scalar_count(), b.parameters().scalar_count() + gates);
}

TEST(Gsn, SameSeedBuildsAreIdentical) {
  GsnConfig cfg{testutil::tiny_backbone(true), {5, 3, 15}, 0.5, 7};
  GsnModel<double> a(cfg), b(cfg);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters().items()[i].name, b.parameters().items()[i].name);
    EXPECT_TRUE(bitwise_equal(a.parameters().items()[i].value.values(), b.parameters().items()[i].value.values()));
  }
  cfg.seed = 8;
  GsnModel<double> c(cfg);
  EXPECT_FALSE(bitwise_equal(a.parameters().items()[0].value.values(), c.parameters().items()[0].value.values()));
}

TEST(Gsn, OddChannelsRejected) {
  GsnConfig cfg{testutil::tiny_backbone(true), {5, 3, 15}, 0.5, 1};
  cfg.backbone.blocks[1].channels = 5;
  EXPECT_THROW(GsnModel<double>{cfg}, std::invalid_argument);
  cfg = GsnConfig{testutil::tiny_backbone(true), {5, 3, 15}, 0.5, 1};
  cfg.backbone.stem_channels = 3;
  EXPECT_THROW(GsnModel<double>{cfg}, std::invalid_argument);
}

TEST(Gsn, ZeroGateScoresAreFramePermutationInvariant) {
  std::mt19937_64 rng(12);
  GsnModel<double> m({testutil::tiny_backbone(true), {5, 3, 15}, 0.5, 3});
  auto clip = random_tensor({1, 4, 3, 8, 8}, rng);
  const std::size_t fs = 3 * 8 * 8;
  const std::array<std::size_t, 4> perm{2, 0, 3, 1};
  std::vector<double> permuted(clip.numel());
  for (std::size_t t = 0; t < 4; ++t)
    std::copy_n(clip.values().begin() + perm[t] * fs, fs, permuted.begin() + t * fs);
  auto a = m.forward(clip, {}), b = m.forward(Tensor({1, 4, 3, 8, 8}, permuted), {});
  for (std::size_t i = 0; i < a.verb.numel(); ++i) EXPECT_NEAR(a.verb.values()[i], b.verb.values()[i], 1e-12);
  for (std::size_t i = 0; i < a.action.numel(); ++i) EXPECT_NEAR(a.action.values()[i], b.action.values()[i], 1e-12);
}

TEST(Gsn, NonzeroGatesMakeScoresOrderSensitive) {
  std::mt19937_64 rng(13);
  GsnModel<double> m({testutil::tiny_backbone(true), {5, 3, 15}, 0.5, 3});
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& p : m.parameters().items())
    if (p.name.find(".gsm.") != std::string::npos)
      for (auto& v : p.value.data()) v = u(rng);
  auto clips = generate_synthetic(5, 1, testutil::small_synth());
  SamplerConfig sc{4, SampleMode::center_per_segment};
  auto frames = sample_frames(clips[0], sc, nullptr);
  std::vector<float> reversed(frames.size());
  const std::size_t fs = clips[0].frame_size();
  for (std::size_t t = 0; t < 4; ++t) std::copy_n(frames.begin() + (3 - t) * fs, fs, reversed.begin() + t * fs);
  auto a = m.forward(clip_tensor<double>(frames, 4, 16, 16), {});
  auto b = m.forward(clip_tensor<double>(reversed, 4, 16, 16), {});
  double diff = 0;
  for (std::size_t i = 0; i < a.verb.numel(); ++i) diff = std::max(diff, std::abs(a.verb.values()[i] - b.verb.values()[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Gsn, ParameterNamesFollowTheLayout) {
  GsnModel<double> m({testutil::tiny_backbone(true), {5, 3, 15}, 0.5, 3});
  for (const char* name : {"backbone.stem.weight", "backbone.block0.conv.weight", "backbone.block2.gsm.gate_weight",
                           "classifier.action.weight", "classifier.verb_bias_map"}) {
    EXPECT_NE(m.parameters().find(name), nullptr) << name;
  }
  EXPECT_EQ(m.family(), "gsn");
  EXPECT_EQ(m.min_input_side(), 4u);
}
