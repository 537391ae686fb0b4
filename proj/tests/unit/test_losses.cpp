#include <gtest/gtest.h>

#include <cmath>

#include "pgsnet/losses.hpp"
#include "support/oracles.hpp"

namespace {

torch::Tensor map4(std::initializer_list<double> v, int64_t h, int64_t w) {
  return torch::tensor(std::vector<double>(v), torch::kDouble).view({1, 1, h, w});
}

}  // namespace

TEST(BCELoss, PerfectPredictionIsNearZero) {
  auto g = map4({1, 0, 1, 1}, 2, 2);
  const double loss = pgsnet::bce_loss(g, g).item<double>();
  EXPECT_GE(loss, 0.0);
  EXPECT_LE(loss, -std::log(1 - pgsnet::kProbabilityEpsilon) + 1e-15);
}

TEST(BCELoss, UniformHalfIsLn2) {
  auto p = torch::full({2, 1, 3, 3}, 0.5, torch::kDouble);
  auto g = (torch::rand({2, 1, 3, 3}, torch::kDouble) > 0.5).to(torch::kDouble);
  EXPECT_NEAR(pgsnet::bce_loss(p, g).item<double>(), std::log(2.0), 1e-15);
}

TEST(BCELoss, TwoPixelFixture) {
  auto p = map4({0.9, 0.1}, 1, 2);
  auto g = map4({1, 0}, 1, 2);
  EXPECT_NEAR(pgsnet::bce_loss(p, g).item<double>(), -(std::log(0.9) + std::log(0.9)) / 2, 1e-15);
}

TEST(BCELoss, RejectsBadInputs) {
  EXPECT_THROW(pgsnet::bce_loss(torch::zeros({1, 1, 2, 2}), torch::zeros({1, 1, 2, 3})), pgsnet::UsageError);
  EXPECT_THROW(pgsnet::bce_loss(torch::zeros({1, 1, 2, 2}), torch::full({1, 1, 2, 2}, 0.5)), pgsnet::UsageError);
}

TEST(IoULoss, Fixtures) {
  auto g = map4({1, 0, 1, 0}, 2, 2);
  EXPECT_EQ(pgsnet::iou_loss(g, g).item<double>(), 0.0);
  auto ones = torch::ones({1, 1, 4, 4}, torch::kDouble);
  EXPECT_DOUBLE_EQ(pgsnet::iou_loss(torch::full({1, 1, 4, 4}, 0.5, torch::kDouble), ones).item<double>(), 0.5);
  EXPECT_EQ(pgsnet::iou_loss(torch::zeros_like(ones), ones).item<double>(), 1.0);
  // Both empty: defined as 0, gradient finite.
  auto p = torch::zeros({1, 1, 4, 4}, torch::kDouble).set_requires_grad(true);
  auto l = pgsnet::iou_loss(p, torch::zeros_like(ones));
  EXPECT_EQ(l.item<double>(), 0.0);
  l.backward();
  EXPECT_TRUE(torch::isfinite(p.grad()).all().item<bool>());
}

TEST(IoULoss, RejectsShapeMismatch) {
  EXPECT_THROW(pgsnet::iou_loss(torch::zeros({1, 1, 2, 2}), torch::zeros({1, 1, 3, 2})), pgsnet::UsageError);
}

TEST(LossProperties, RangesAndMonotonicity) {
  torch::manual_seed(4);
  for (int t = 0; t < 20; ++t) {
    auto p = torch::rand({2, 1, 6, 6}, torch::kDouble);
    auto g = (torch::rand({2, 1, 6, 6}, torch::kDouble) > 0.6).to(torch::kDouble);
    g.index_put_({0, 0, 0, 0}, 1.0);
    const double iou = pgsnet::iou_loss(p, g).item<double>();
    const double bce = pgsnet::bce_loss(p, g).item<double>();
    EXPECT_GE(iou, 0.0);
    EXPECT_LE(iou, 1.0);
    EXPECT_GE(bce, 0.0);
    // Raising p at a glass pixel lowers both losses.
    auto q = p.clone();
    q.index_put_({0, 0, 0, 0}, std::min(1.0, p[0][0][0][0].item<double>() + 0.1));
    if (q[0][0][0][0].item<double>() > p[0][0][0][0].item<double>()) {
      EXPECT_LT(pgsnet::iou_loss(q, g).item<double>(), iou);
      EXPECT_LT(pgsnet::bce_loss(q, g).item<double>(), bce);
    }
  }
}

TEST(OverallLoss, DeepSupervisionWeights) {
  EXPECT_NEAR(pgsnet::deep_supervision_total({0.1, 0.2, 0.3}), 1.1, 1e-15);
  pgsnet::LossConfig cfg;
  EXPECT_EQ(cfg.level_weights, (std::array<double, 3>{4, 2, 1}));
  EXPECT_EQ(cfg.gamma, 1.0);
  EXPECT_EQ(cfg.lambda, 1.0);
}

TEST(OverallLoss, ReportDecomposesExactly) {
  torch::manual_seed(12);
  auto g = (torch::rand({2, 1, 8, 8}, torch::kDouble) > 0.5).to(torch::kDouble);
  std::vector<torch::Tensor> probs;
  for (int i = 0; i < 3; ++i) probs.push_back(torch::rand({2, 1, 8, 8}, torch::kDouble));
  auto r = pgsnet::overall_loss(probs, g);
  double recomputed = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(r.per_level[i].hybrid, r.per_level[i].bce + r.per_level[i].iou, 1e-15);
    EXPECT_GE(r.per_level[i].bce, 0);
    EXPECT_GE(r.per_level[i].iou, 0);
    recomputed += std::pow(2.0, 2 - static_cast<double>(i)) * r.per_level[i].hybrid;
  }
  EXPECT_EQ(r.total, recomputed);
  EXPECT_NEAR(r.total_tensor.item<double>(), r.total, 1e-13);
}

TEST(OverallLoss, WithoutIoUIsWeightedBCE) {
  torch::manual_seed(13);
  auto g = (torch::rand({1, 1, 8, 8}, torch::kDouble) > 0.5).to(torch::kDouble);
  std::vector<torch::Tensor> probs;
  for (int i = 0; i < 3; ++i) probs.push_back(torch::rand({1, 1, 8, 8}, torch::kDouble));
  pgsnet::LossConfig cfg;
  cfg.use_iou = false;
  auto r = pgsnet::overall_loss(probs, g, cfg);
  double expected = 0;
  for (int i = 0; i < 3; ++i) expected += cfg.level_weights[i] * pgsnet::bce_loss(probs[i], g).item<double>();
  EXPECT_NEAR(r.total, expected, 1e-14);
}

TEST(OverallLoss, PerfectLevelsGiveNearZero) {
  auto g = (torch::rand({1, 1, 8, 8}, torch::kDouble) > 0.5).to(torch::kDouble);
  auto r = pgsnet::overall_loss(std::vector<torch::Tensor>{g, g, g}, g);
  EXPECT_LT(r.total, 1e-5);
}

TEST(OverallLoss, RequiresThreeLevels) {
  auto g = torch::zeros({1, 1, 2, 2});
  EXPECT_THROW(pgsnet::overall_loss(std::vector<torch::Tensor>{g, g}, g), pgsnet::UsageError);
}

TEST(OverallLoss, GradientWrtLogitsMatchesFiniteDifferences) {
  torch::manual_seed(21);
  auto g = (torch::rand({1, 1, 8, 8}, torch::kDouble) > 0.5).to(torch::kDouble);
  // Three levels at 8x8, 4x4 and 2x2 upsampled to the mask.
  const std::array<int64_t, 3> sides{8, 4, 2};
  std::vector<torch::Tensor> logits;
  for (auto s : sides) logits.push_back(torch::randn({1, 1, s, s}, torch::kDouble));
  for (std::size_t which = 0; which < 3; ++which) {
    auto f = [&](const torch::Tensor& x) {
      auto ls = logits;
      ls[which] = x;
      return pgsnet::overall_loss_from_logits(ls, g).total_tensor;
    };
    auto cmp = oracle::check_gradient(f, logits[which]);
    EXPECT_LT(cmp.relative_error, 1e-5) << "level " << which;
    EXPECT_GT(cmp.analytic_norm, 0.0);
  }
}
