#include <gtest/gtest.h>

#include <chrono>

#include "test_util.hpp"

using namespace gsnaco;

namespace {

struct CorruptAdjoint {
  explicit CorruptAdjoint(const std::string& op) { detail::corrupted_adjoint_op() = op; }
  ~CorruptAdjoint() { detail::corrupted_adjoint_op().clear(); }
};

bool all_pass(const std::vector<GradcheckResult>& rs) {
  for (const auto& r : rs)
    if (!r.passed) return false;
  return true;
}

}  // namespace

TEST(Gradcheck, EveryLayerPasses) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    auto rs = layer_gradchecks(seed);
    EXPECT_GE(rs.size(), 10u);
    for (const auto& r : rs) {
      EXPECT_TRUE(r.passed) << r.name << " seed " << seed << " max rel " << r.max_rel_error << " skipped "
                            << r.skipped << "/" << r.checked;
      EXPECT_GT(r.checked, 0u) << r.name;
    }
  }
}

TEST(Gradcheck, EveryModelFamilyPasses) {
  for (const char* family : {"gsn", "egoaco", "gsn+egoaco"}) {
    auto r = model_gradcheck(family, 3);
    EXPECT_TRUE(r.passed) << family << " max rel " << r.max_rel_error;
    EXPECT_GE(r.checked, 50u) << family;
  }
  EXPECT_THROW(model_gradcheck("resnet", 0), std::invalid_argument);
}

TEST(Gradcheck, FullSuiteFitsTheTimeBudget) {
  const auto t0 = std::chrono::steady_clock::now();
  auto rs = run_gradcheck_suite("all", 0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_TRUE(all_pass(rs));
  EXPECT_LT(secs, 60.0);
  std::printf("gradcheck suite: %zu checks in %.2f s\n", rs.size(), secs);
}

TEST(Gradcheck, PerturbedAdjointIsCaught) {
  for (const char* op : {"group_shift", "conv2d", "multiply", "linear", "cross_entropy", "softmax_spatial"}) {
    CorruptAdjoint hook(op);
    auto rs = run_gradcheck_suite("all", 0);
    EXPECT_FALSE(all_pass(rs)) << op;
  }
  // Hook cleared again.
  EXPECT_TRUE(all_pass(run_gradcheck_suite("gsn", 0)));
}

TEST(Gradcheck, WrongGradientOfAHandWrittenLossIsDetected) {
  std::mt19937_64 rng(4);
  Tensor x({3}, {0.3, -0.7, 1.1});
  auto good = gradcheck("square", {x}, [x] { return sum(mul(x, x)); }, {}, rng);
  EXPECT_TRUE(good.passed);
  EXPECT_LT(good.max_rel_error, 1e-8);
  CorruptAdjoint hook("multiply");
  auto bad = gradcheck("square", {x}, [x] { return sum(mul(x, x)); }, {}, rng);
  EXPECT_FALSE(bad.passed);
  EXPECT_GT(bad.max_rel_error, 1e-4);
}
