#include <gtest/gtest.h>

#include <chrono>

#include "test_util.hpp"

using namespace gsnaco;
using testutil::bitwise_equal;

namespace {

std::map<std::string, std::vector<double>> snapshot(const VideoModel<double>& m) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : m.parameters().items())
    out[p.name] = std::vector<double>(p.value.values().begin(), p.value.values().end());
  return out;
}

EgoAcoConfig tiny_egoaco() {
  EgoAcoConfig c;
  c.backbone = testutil::tiny_backbone(false);
  c.memory_size = 4;
  c.pooling_classes = 3;
  c.seed = 3;
  return c;
}

TrainOptions tiny_options() {
  TrainOptions opt;
  opt.batch_size = 4;
  opt.batch.sampler = {4, SampleMode::random_per_segment};
  return opt;
}

}  // namespace

TEST(Schedule, ReferenceValues) {
  const LrSchedule s{0.01, 10, 60};
  EXPECT_NEAR(lr_at(4, s), 0.005, 1e-15);
  EXPECT_NEAR(lr_at(9, s), 0.01, 1e-15);
  EXPECT_NEAR(lr_at(10, s), 0.01, 1e-15);
  EXPECT_NEAR(lr_at(35, s), 0.005, 1e-12);
  EXPECT_GT(lr_at(59, s), 0.0);
  EXPECT_LT(lr_at(59, s), 1e-4);
}

TEST(Schedule, WarmupThenNonIncreasing) {
  for (auto [base, w, t] : {std::tuple{0.01, 10u, 60u}, std::tuple{1e-4, 5u, 30u}, std::tuple{0.3, 1u, 7u}}) {
    const LrSchedule s{base, w, t};
    for (std::size_t e = 0; e + 1 < w; ++e) EXPECT_LT(lr_at(e, s), lr_at(e + 1, s));
    for (std::size_t e = w - 1; e + 1 < t; ++e) EXPECT_LE(lr_at(e + 1, s), lr_at(e, s) + 1e-18);
    for (std::size_t e = 0; e < t; ++e) {
      EXPECT_GT(lr_at(e, s), 0.0);
      EXPECT_LE(lr_at(e, s), base);
    }
  }
}

TEST(Schedule, InvalidArgumentsRejected) {
  EXPECT_THROW(lr_at(0, {0.01, 10, 10}), std::invalid_argument);
  EXPECT_THROW(lr_at(0, {0.01, 12, 10}), std::invalid_argument);
  EXPECT_THROW(lr_at(60, {0.01, 10, 60}), std::out_of_range);
}

TEST(Schedule, DefaultWarmupIsOneSixth) {
  EXPECT_EQ(default_warmup(60), 10u);
  EXPECT_EQ(default_warmup(30), 5u);
  EXPECT_EQ(default_warmup(15), 3u);
  const auto cfg = ThreeStageConfig::with_epochs(12, 6, 3);
  EXPECT_EQ(cfg.warmup[0], 2u);
  EXPECT_EQ(cfg.warmup[1], 1u);
}

TEST(Schedule, StageThreeStartsAtOneFifthOfItsBase) {
  const auto plans = egoaco_plans(1);
  EXPECT_NEAR(lr_at(0, plans[2].schedule), 1e-4 / 5, 1e-18);
  EXPECT_NEAR(lr_at(0, plans[0].schedule), 0.001, 1e-15);
}

TEST(Sgd, SingleStepTrace) {
  std::vector<double> p{1.0}, g{0.0005}, v{0.0};
  sgd_update<double>(p, g, v, false, {0.9, 5e-4}, 0.01);
  EXPECT_DOUBLE_EQ(v[0], 0.0005);
  EXPECT_NEAR(p[0], 0.999995, 1e-15);
  // With decay the effective gradient picks up wd·p.
  std::vector<double> p2{1.0}, g2{0.0}, v2{0.0};
  sgd_update<double>(p2, g2, v2, true, {0.9, 5e-4}, 0.01);
  EXPECT_NEAR(p2[0], 0.999995, 1e-15);
}

TEST(Sgd, ZeroGradientZeroDecayIsFixed) {
  std::vector<double> p{0.3, -2.0}, g{0, 0}, v{0, 0};
  for (int i = 0; i < 5; ++i) sgd_update<double>(p, g, v, false, {0.9, 5e-4}, 0.1);
  EXPECT_EQ(p, (std::vector<double>{0.3, -2.0}));
}

TEST(Sgd, MomentumAccumulates) {
  std::vector<double> p{0.0}, g{1.0}, v{0.0};
  sgd_update<double>(p, g, v, false, {0.5, 0.0}, 0.1);
  sgd_update<double>(p, g, v, false, {0.5, 0.0}, 0.1);
  // v: 1 then 1.5; p: -0.1 then -0.25.
  EXPECT_DOUBLE_EQ(v[0], 1.5);
  EXPECT_DOUBLE_EQ(p[0], -0.25);
  std::vector<double> q{0.0}, w{0.0};
  sgd_update<double>(q, g, w, false, {0.0, 0.0}, 0.1);
  sgd_update<double>(q, g, w, false, {0.0, 0.0}, 0.1);
  EXPECT_DOUBLE_EQ(q[0], -0.2);
}

TEST(Sgd, SizeMismatchRejected) {
  std::vector<double> p{0, 0}, g{0}, v{0, 0};
  EXPECT_THROW(sgd_update<double>(p, g, v, false, {}, 0.1), ShapeError);
}

TEST(Plan, CoverageIsChecked) {
  EgoAcoModel<double> m(tiny_egoaco());
  StagePlan p;
  p.trainable = {"lsta.*"};
  p.frozen = {};
  EXPECT_THROW(resolve_plan(m.parameters(), p), std::invalid_argument);
  p.trainable = {"*"};
  p.frozen = {"trunk.*"};
  EXPECT_THROW(resolve_plan(m.parameters(), p), std::invalid_argument);
  for (const auto& plan : egoaco_plans(m.last_trunk_block())) EXPECT_NO_THROW(resolve_plan(m.parameters(), plan));
}

TEST(Plan, StageMasksMatchTheProtocol) {
  EgoAcoModel<double> m(tiny_egoaco());
  const auto plans = egoaco_plans(m.last_trunk_block());
  const auto& items = m.parameters().items();
  const std::string last = "trunk.block" + std::to_string(m.last_trunk_block()) + ".";
  for (int s = 0; s < 3; ++s) {
    const auto mask = resolve_plan(m.parameters(), plans[s]);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& n = items[i].name;
      bool expect = !n.starts_with("trunk.") && !n.starts_with("heads.");
      if (s >= 1) expect = expect || n.starts_with("heads.");
      if (s == 2) expect = expect || n.starts_with(last);
      EXPECT_EQ(mask[i], expect) << "stage " << s + 1 << " " << n;
    }
  }
}

TEST(Protocol, FrozenParametersNeverMove) {
  auto clips = generate_synthetic(21, 16, testutil::small_synth());
  EgoAcoModel<double> m(tiny_egoaco());
  auto train = indices_of(clips, Split::train);
  std::mt19937_64 rng(21);
  const auto start = snapshot(m);
  std::vector<int> order;
  auto before = start;
  three_stage_protocol<double>(
      m, clips, train, ThreeStageConfig::with_epochs(2, 2, 2), tiny_options(), rng,
      [&](const StagePlan& plan, const std::vector<EpochLog>& logs, const VideoModel<double>& model) {
        order.push_back(plan.stage);
        EXPECT_EQ(logs.size(), 2u);
        const auto mask = resolve_plan(model.parameters(), plan);
        const auto after = snapshot(model);
        bool any_moved = false;
        for (std::size_t i = 0; i < mask.size(); ++i) {
          const auto& n = model.parameters().items()[i].name;
          if (!mask[i]) EXPECT_TRUE(bitwise_equal(before.at(n), after.at(n))) << plan.name << " moved " << n;
          else any_moved = any_moved || !bitwise_equal(before.at(n), after.at(n));
        }
        EXPECT_TRUE(any_moved) << plan.name;
        before = after;
      });
  EXPECT_EQ(order, (std::vector<int>{1, 2, 3}));
  const auto end = snapshot(m);
  for (const auto& [name, values] : start)
    if (name.starts_with("trunk.stem.")) {
      EXPECT_TRUE(bitwise_equal(values, end.at(name))) << name;
    }
}

TEST(Protocol, LogsCarryStageAndSchedule) {
  auto clips = generate_synthetic(22, 12, testutil::small_synth());
  EgoAcoModel<double> m(tiny_egoaco());
  std::mt19937_64 rng(22);
  const auto cfg = ThreeStageConfig::with_epochs(2, 1, 2);
  auto logs = three_stage_protocol<double>(m, clips, indices_of(clips, Split::train), cfg, tiny_options(), rng);
  ASSERT_EQ(logs.size(), 5u);
  const int stages[] = {1, 1, 2, 3, 3};
  for (std::size_t i = 0; i < logs.size(); ++i) {
    EXPECT_EQ(logs[i].stage, stages[i]);
    EXPECT_TRUE(std::isfinite(logs[i].loss));
    EXPECT_GE(logs[i].action_acc, 0.0);
    EXPECT_LE(logs[i].action_acc, 100.0);
  }
  EXPECT_DOUBLE_EQ(logs[3].lr, lr_at(0, LrSchedule{1e-4, cfg.warmup[2], 2}));
}

TEST(RunStage, SameSeedIsBitwiseReproducible) {
  auto clips = generate_synthetic(23, 16, testutil::small_synth());
  auto train = indices_of(clips, Split::train);
  auto run = [&] {
    GsnModel<double> m({testutil::tiny_backbone(true), {5, 3, 15}, 0.5, 23});
    std::mt19937_64 rng(23);
    run_stage<double>(m, clips, train, gsn_plan(3, 0.01), tiny_options(), rng);
    return snapshot(m);
  };
  EXPECT_EQ(run(), run());
}

TEST(RunStage, EarlyStopAndBadOptions) {
  auto clips = generate_synthetic(24, 12, testutil::small_synth());
  auto train = indices_of(clips, Split::train);
  GsnModel<double> m({testutil::tiny_backbone(true), {5, 3, 15}, 0.0, 24});
  std::mt19937_64 rng(24);
  auto logs = run_stage<double>(m, clips, train, gsn_plan(6, 0.01), tiny_options(), rng,
                                [](const EpochLog& l) { return l.epoch == 1; });
  EXPECT_EQ(logs.size(), 2u);
  EXPECT_THROW(run_stage<double>(m, clips, {}, gsn_plan(6, 0.01), tiny_options(), rng), std::invalid_argument);
  auto opt = tiny_options();
  opt.batch_size = 0;
  EXPECT_THROW(run_stage<double>(m, clips, train, gsn_plan(6, 0.01), opt, rng), std::invalid_argument);
  auto bad = gsn_plan(6, 0.01);
  bad.schedule.warmup_epochs = 6;
  EXPECT_THROW(run_stage<double>(m, clips, train, bad, tiny_options(), rng), std::invalid_argument);
}

TEST(RunStage, GsnOverfitsEightClips) {
  auto clips = generate_synthetic(0, 40, SynthConfig{});
  auto train = indices_of(clips, Split::train);
  train.resize(8);
  GsnConfig gc;
  gc.dropout = 0;
  GsnModel<double> m(gc);
  TrainOptions opt;
  opt.batch_size = 1;
  opt.batch.augment = false;
  opt.batch.sampler = {16, SampleMode::center_per_segment};
  std::mt19937_64 rng(0);
  const auto t0 = std::chrono::steady_clock::now();
  auto logs = run_stage<double>(m, clips, train, gsn_plan(50, 0.01), opt, rng);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("8-clip overfit: %.1f s, final loss %.4f\n", secs, logs.back().loss);

  // Loss trend over the first five epochs, smoothed over a 3-epoch window.
  auto smooth = [&](std::size_t e) { return (logs[e - 1].loss + logs[e].loss + logs[e + 1].loss) / 3; };
  EXPECT_LT(smooth(3), smooth(1));
  EXPECT_LT(logs.back().loss, logs.front().loss);

  // Final-epoch parameters classify every training clip correctly.
  auto batch = make_batch<double>(clips, train, opt.batch, vocab_of(clips), rng);
  NoGradGuard ng;
  auto scores = m.forward(batch.clips, {});
  EXPECT_EQ(count_correct(scores.action, batch.labels.action), 8u);
}
