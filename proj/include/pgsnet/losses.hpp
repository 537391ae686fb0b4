#pragma once

// Hybrid BCE + soft-IoU loss and its 4:2:1 deeply supervised combination.
// All functions take B x 1 x H x W probability tensors and are differentiable.

#include <torch/torch.h>

#include <array>
#include <span>
#include <string>
#include <vector>

#include "pgsnet/errors.hpp"
#include "pgsnet/layers.hpp"

namespace pgsnet {

inline constexpr double kProbabilityEpsilon = 1e-7;

struct LossConfig {
  double gamma = 1.0;   // BCE weight
  double lambda = 1.0;  // IoU weight
  bool use_iou = true;
  // Weight of level i = 1, 2, 3 (finest first): 2^(3 - i).
  std::array<double, 3> level_weights{4.0, 2.0, 1.0};
};

struct LevelLoss {
  double bce = 0.0;
  double iou = 0.0;
  double hybrid = 0.0;
};

struct LossReport {
  torch::Tensor total_tensor;  // differentiable scalar
  double total = 0.0;
  std::array<LevelLoss, 3> per_level{};
};

namespace detail {

inline void check_loss_inputs(const torch::Tensor& pred, const torch::Tensor& gt, const char* what) {
  require_same_shape(pred, gt, what);
  auto binary = (gt == 0) | (gt == 1);
  if (!binary.all().item<bool>()) throw UsageError(std::string(what) + ": ground truth must be binary {0, 1}");
}

}  // namespace detail

// Mean over every pixel in the batch of -[g log p + (1 - g) log(1 - p)],
// with p clamped to [eps, 1 - eps].
inline torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  detail::check_loss_inputs(pred, gt, "bce_loss");
  auto p = pred.clamp(kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  return -(gt * torch::log(p) + (1 - gt) * torch::log(1 - p)).mean();
}

// 1 - sum(p g) / sum(p + g - p g) per image, averaged over the batch.
// An image whose prediction and mask are both all-zero contributes 0.
inline torch::Tensor iou_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  detail::check_loss_inputs(pred, gt, "iou_loss");
  auto p = pred.flatten(1);
  auto g = gt.flatten(1);
  auto inter = (p * g).sum(1);
  auto uni = (p + g - p * g).sum(1);
  auto nonempty = uni > 0;
  auto ratio = inter / torch::where(nonempty, uni, torch::ones_like(uni));
  auto loss = torch::where(nonempty, 1 - ratio, torch::zeros_like(ratio));
  return loss.mean();
}

// sum over i of 2^(3 - i) * hybrid_i
inline double deep_supervision_total(const std::array<double, 3>& hybrids, const LossConfig& cfg = {}) {
  double total = 0.0;
  for (std::size_t i = 0; i < 3; ++i) total += cfg.level_weights[i] * hybrids[i];
  return total;
}

// level_probs: three predictions already at ground-truth resolution, finest (i = 1) first.
inline LossReport overall_loss(std::span<const torch::Tensor> level_probs, const torch::Tensor& gt,
                               const LossConfig& cfg = {}) {
  if (level_probs.size() != 3)
    throw UsageError("overall_loss: expected 3 supervision levels, got " + std::to_string(level_probs.size()));
  LossReport report;
  torch::Tensor total;
  for (std::size_t i = 0; i < 3; ++i) {
    auto bce = bce_loss(level_probs[i], gt);
    auto iou = iou_loss(level_probs[i], gt);
    auto hybrid = cfg.gamma * bce;
    if (cfg.use_iou) hybrid = hybrid + cfg.lambda * iou;
    auto weighted = cfg.level_weights[i] * hybrid;
    total = total.defined() ? total + weighted : weighted;

    auto& level = report.per_level[i];
    level.bce = bce.item<double>();
    level.iou = iou.item<double>();
    level.hybrid = hybrid.item<double>();
  }
  report.total_tensor = total;
  report.total = deep_supervision_total(
      {report.per_level[0].hybrid, report.per_level[1].hybrid, report.per_level[2].hybrid}, cfg);
  return report;
}

inline LossReport overall_loss(const std::vector<torch::Tensor>& level_probs, const torch::Tensor& gt,
                               const LossConfig& cfg = {}) {
  return overall_loss(std::span<const torch::Tensor>(level_probs), gt, cfg);
}

// Upsamples each level's logits bilinearly to the mask size, then applies the sigmoid.
inline LossReport overall_loss_from_logits(std::span<const torch::Tensor> level_logits,
                                           const torch::Tensor& gt, const LossConfig& cfg = {}) {
  std::vector<torch::Tensor> probs;
  probs.reserve(level_logits.size());
  for (const auto& logits : level_logits)
    probs.push_back(torch::sigmoid(resize_bilinear(logits, gt.size(-2), gt.size(-1))));
  return overall_loss(std::span<const torch::Tensor>(probs), gt, cfg);
}

}  // namespace pgsnet
