#pragma once

// Discriminability Enhancement (DE) and Focus-and-Exploration Based Fusion
// (FEBF) blocks. Both are shape-polymorphic: they accept any batch size and
// spatial extent of at least 2x2.

#include <torch/torch.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pgsnet/errors.hpp"
#include "pgsnet/layers.hpp"

namespace pgsnet {

// ---------------------------------------------------------------------------
// DE module
// ---------------------------------------------------------------------------

// One multi-field branch. The separable convolutions use a 1 x k / k x 1 pair
// dilated by `dilation`; the contextual 3x3 convolution is dilated by k.
struct DEBranchConfig {
  int64_t kernel = 3;
  int64_t dilation = 1;
  int64_t context_dilation = 3;

  static DEBranchConfig for_kernel(int64_t k) { return {k, (k - 1) / 2, k}; }

  void validate() const {
    detail::require(kernel == 3 || kernel == 5 || kernel == 7 || kernel == 9,
                    "DE branch: kernel must be one of 3, 5, 7, 9");
    detail::require(dilation == (kernel - 1) / 2, "DE branch: dilation must pair with kernel (3:1, 5:2, 7:3, 9:4)");
    detail::require(context_dilation == kernel, "DE branch: context dilation must equal kernel size");
  }
};

enum class DEVariant {
  kFull,     // LFE + LFF + CFP
  kLfeLff,   // LFE + LFF
  kLfeOnly,  // LFE only; the two separable paths are summed
  kOff,      // no DE module at all
};

struct DEConfig {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t branch_channels = 0;  // 0 -> out_channels / 4 (at least 1)
  std::vector<DEBranchConfig> branches;
  bool use_channel_recalibration = true;
  bool use_interbranch_flow = true;
  DEVariant variant = DEVariant::kFull;

  // The first `num_branches` of the k = 3, 5, 7, 9 ladder.
  static DEConfig standard(int64_t in, int64_t out, int num_branches = 4) {
    DEConfig cfg;
    cfg.in_channels = in;
    cfg.out_channels = out;
    for (int b = 0; b < num_branches; ++b) cfg.branches.push_back(DEBranchConfig::for_kernel(3 + 2 * b));
    return cfg;
  }

  int64_t resolved_branch_channels() const {
    return branch_channels > 0 ? branch_channels : std::max<int64_t>(1, out_channels / 4);
  }

  void validate() const {
    detail::require(in_channels > 0 && out_channels > 0, "DE: channel counts must be positive");
    detail::require(variant != DEVariant::kOff, "DE: cannot build a module for variant 'off'");
    const auto n = branches.size();
    detail::require(n == 1 || n == 2 || n == 4, "DE: branch count must be 1, 2 or 4");
    for (const auto& b : branches) b.validate();
  }
};

class DEBranchImpl : public torch::nn::Module {
 public:
  DEBranchImpl(const DEConfig& cfg, const DEBranchConfig& branch) : variant_(cfg.variant) {
    const auto c = cfg.resolved_branch_channels();
    const auto k = branch.kernel;
    const auto r = branch.dilation;
    reduce = register_module("reduce", ConvBNReLU(cfg.in_channels, c));
    row_then_col_a = register_module("lfe_a1", ConvBNReLU(c, c, Kernel2d{1, k, r}));
    row_then_col_b = register_module("lfe_a2", ConvBNReLU(c, c, Kernel2d{k, 1, r}));
    col_then_row_a = register_module("lfe_b1", ConvBNReLU(c, c, Kernel2d{k, 1, r}));
    col_then_row_b = register_module("lfe_b2", ConvBNReLU(c, c, Kernel2d{1, k, r}));
    if (variant_ != DEVariant::kLfeOnly) {
      lff = register_module("lff", ConvBNReLU(2 * c, c));
      if (cfg.use_channel_recalibration)
        recalibration = register_module("recalibration", ChannelRecalibration(c));
    }
    if (variant_ == DEVariant::kFull)
      cfp = register_module("cfp", ConvBNReLU(c, c, Kernel2d{3, 3, branch.context_dilation}));
  }

  torch::Tensor reduce_input(const torch::Tensor& x) { return reduce->forward(x); }

  // Returns (lff output, branch output) given the already channel-reduced input.
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& reduced) {
    auto a = row_then_col_b->forward(row_then_col_a->forward(reduced));
    auto b = col_then_row_b->forward(col_then_row_a->forward(reduced));
    torch::Tensor fused;
    if (variant_ == DEVariant::kLfeOnly) {
      fused = a + b;
    } else {
      fused = lff->forward(torch::cat({a, b}, 1));
      if (recalibration) fused = recalibration->forward(fused);
    }
    auto out = cfp ? cfp->forward(fused) : fused;
    return {fused, out};
  }

  ConvBNReLU reduce{nullptr};
  ConvBNReLU row_then_col_a{nullptr}, row_then_col_b{nullptr};
  ConvBNReLU col_then_row_a{nullptr}, col_then_row_b{nullptr};
  ConvBNReLU lff{nullptr};
  ChannelRecalibration recalibration{nullptr};
  ConvBNReLU cfp{nullptr};

 private:
  DEVariant variant_;
};
TORCH_MODULE(DEBranch);

class DEModuleImpl : public torch::nn::Module {
 public:
  explicit DEModuleImpl(DEConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (std::size_t i = 0; i < cfg_.branches.size(); ++i) {
      branches_.push_back(register_module("branch" + std::to_string(i + 1),
                                          DEBranch(cfg_, cfg_.branches[i])));
    }
    const auto c = cfg_.resolved_branch_channels();
    combine = register_module(
        "combine", ConvBNReLU(c * static_cast<int64_t>(branches_.size()), cfg_.out_channels));
  }

  const DEConfig& config() const { return cfg_; }

  torch::Tensor forward(const torch::Tensor& x) {
    require_rank4(x, "de_forward");
    detail::require(x.size(1) == cfg_.in_channels,
                    "de_forward: expected " + std::to_string(cfg_.in_channels) + " channels, got " +
                        std::to_string(x.size(1)));
    detail::require(x.size(2) >= 2 && x.size(3) >= 2, "de_forward: spatial size must be at least 2x2");
    require_finite(x, "de_forward");

    std::vector<torch::Tensor> outputs;
    torch::Tensor previous_lff;
    for (auto& branch : branches_) {
      auto reduced = branch->reduce_input(x);
      if (cfg_.use_interbranch_flow && previous_lff.defined()) reduced = reduced + previous_lff;
      auto [fused, out] = branch->forward(reduced);
      previous_lff = fused;
      outputs.push_back(out);
    }
    return combine->forward(torch::cat(outputs, 1));
  }

  ConvBNReLU combine{nullptr};

 private:
  DEConfig cfg_;
  std::vector<DEBranch> branches_;
};
TORCH_MODULE(DEModule);

inline torch::Tensor de_forward(DEModule& de, const torch::Tensor& x) { return de->forward(x); }

// ---------------------------------------------------------------------------
// FEBF module
// ---------------------------------------------------------------------------

enum class FusionStrategy {
  kFebf,       // focus + exploration
  kFocusOnly,  // focus branch only
  kConcat,     // concatenate aligned features, then conv
  kAdd,
  kMultiply,
};

// Terms of the focus/exploration computation exposed for inspection.
// Both operands are the aligned features F'_h and F'_l.
struct FocusExploreTerms {
  torch::Tensor common;         // F'_l * F'_h
  torch::Tensor focus_low;      // common + F'_l
  torch::Tensor focus_high;     // common + F'_h
  torch::Tensor exploration;    // F'_l - F'_h
};

inline FocusExploreTerms focus_explore_terms(const torch::Tensor& high, const torch::Tensor& low) {
  require_same_shape(high, low, "febf_fuse");
  auto common = low * high;
  return {common, common + low, common + high, low - high};
}

class FEBFImpl : public torch::nn::Module {
 public:
  FEBFImpl(int64_t high_channels, int64_t low_channels, FusionStrategy strategy = FusionStrategy::kFebf)
      : strategy_(strategy), channels_(low_channels) {
    detail::require(high_channels > 0 && low_channels > 0, "FEBF: channel counts must be positive");
    const auto c = low_channels;
    align_high = register_module("align_high", ConvBNReLU(high_channels, c));
    align_low = register_module("align_low", ConvBNReLU(c, c));
    switch (strategy_) {
      case FusionStrategy::kFebf:
        explore = register_module("explore", ConvBNReLU(c, c));
        beta = register_parameter("beta", torch::ones({1}));
        [[fallthrough]];
      case FusionStrategy::kFocusOnly:
        focus_low = register_module("focus_low", ConvBNReLU(c, c));
        focus_high = register_module("focus_high", ConvBNReLU(c, c));
        focus_merge = register_module("focus_merge", ConvBNReLU(c, c));
        alpha = register_parameter("alpha", torch::ones({1}));
        output = register_module("output", ConvBNReLU(c, c));
        break;
      case FusionStrategy::kConcat:
        output = register_module("output", ConvBNReLU(2 * c, c));
        break;
      case FusionStrategy::kAdd:
      case FusionStrategy::kMultiply:
        output = register_module("output", ConvBNReLU(c, c));
        break;
    }
  }

  FusionStrategy strategy() const { return strategy_; }

  // Brings both inputs to the low-level grid and channel count.
  std::pair<torch::Tensor, torch::Tensor> align(const torch::Tensor& high, const torch::Tensor& low) {
    require_rank4(high, "febf_align");
    require_rank4(low, "febf_align");
    detail::require(high.size(0) == low.size(0), "febf_align: batch sizes differ");
    detail::require(low.size(1) == channels_, "febf_align: low-level channel count mismatch");
    detail::require(low.size(2) >= high.size(2) && low.size(3) >= high.size(3),
                    "febf_align: low-level features must be at least as large as high-level ones");
    auto h = align_high->forward(resize_bilinear(high, low.size(2), low.size(3)));
    auto l = align_low->forward(low);
    TORCH_INTERNAL_ASSERT(h.sizes() == l.sizes(), "febf_align: aligned shapes differ");
    return {h, l};
  }

  torch::Tensor fuse(const torch::Tensor& high, const torch::Tensor& low) {
    require_same_shape(high, low, "febf_fuse");
    switch (strategy_) {
      case FusionStrategy::kConcat:
        return output->forward(torch::cat({high, low}, 1));
      case FusionStrategy::kAdd:
        return output->forward(high + low);
      case FusionStrategy::kMultiply:
        return output->forward(high * low);
      case FusionStrategy::kFocusOnly:
      case FusionStrategy::kFebf:
        break;
    }
    auto terms = focus_explore_terms(high, low);
    auto focus = focus_merge->forward(focus_low->forward(terms.focus_low) +
                                      focus_high->forward(terms.focus_high));
    auto merged = alpha * focus;
    if (strategy_ == FusionStrategy::kFebf) merged = merged + beta * explore->forward(terms.exploration);
    return output->forward(merged);
  }

  torch::Tensor forward(const torch::Tensor& high, const torch::Tensor& low) {
    auto [h, l] = align(high, low);
    return fuse(h, l);
  }

  ConvBNReLU align_high{nullptr}, align_low{nullptr};
  ConvBNReLU focus_low{nullptr}, focus_high{nullptr}, focus_merge{nullptr};
  ConvBNReLU explore{nullptr};
  ConvBNReLU output{nullptr};
  torch::Tensor alpha, beta;

 private:
  FusionStrategy strategy_;
  int64_t channels_;
};
TORCH_MODULE(FEBF);

inline std::pair<torch::Tensor, torch::Tensor> febf_align(FEBF& m, const torch::Tensor& high,
                                                          const torch::Tensor& low) {
  return m->align(high, low);
}

inline torch::Tensor febf_fuse(FEBF& m, const torch::Tensor& high, const torch::Tensor& low) {
  return m->fuse(high, low);
}

// Enum <-> text, used by the config file and checkpoints.

inline std::string to_string(DEVariant v) {
  switch (v) {
    case DEVariant::kFull: return "full";
    case DEVariant::kLfeLff: return "lfe_lff";
    case DEVariant::kLfeOnly: return "lfe_only";
    case DEVariant::kOff: return "off";
  }
  return "?";
}

inline std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kFebf: return "febf";
    case FusionStrategy::kFocusOnly: return "focus_only";
    case FusionStrategy::kConcat: return "concat";
    case FusionStrategy::kAdd: return "add";
    case FusionStrategy::kMultiply: return "multiply";
  }
  return "?";
}

inline DEVariant parse_de_variant(const std::string& s) {
  for (auto v : {DEVariant::kFull, DEVariant::kLfeLff, DEVariant::kLfeOnly, DEVariant::kOff})
    if (to_string(v) == s) return v;
  throw UsageError("unknown DE variant '" + s + "'");
}

inline FusionStrategy parse_fusion_strategy(const std::string& s) {
  for (auto v : {FusionStrategy::kFebf, FusionStrategy::kFocusOnly, FusionStrategy::kConcat,
                 FusionStrategy::kAdd, FusionStrategy::kMultiply})
    if (to_string(v) == s) return v;
  throw UsageError("unknown fusion strategy '" + s + "'");
}

}  // namespace pgsnet
