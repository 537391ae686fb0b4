#pragma once

#include <torch/torch.h>

#include <array>
#include <memory>
#include <string>

#include "pgsnet/backbone.hpp"
#include "pgsnet/errors.hpp"
#include "pgsnet/fusion_modules.hpp"
#include "pgsnet/layers.hpp"

namespace pgsnet {

// Generic attention used in place of DE for the attention-vs-DE comparison.
// Only meaningful with de_variant == off.
enum class AttentionVariant { kNone, kChannel, kSpatial, kChannelSpatial };

inline std::string to_string(AttentionVariant a) {
  switch (a) {
    case AttentionVariant::kNone: return "none";
    case AttentionVariant::kChannel: return "channel";
    case AttentionVariant::kSpatial: return "spatial";
    case AttentionVariant::kChannelSpatial: return "channel_spatial";
  }
  return "?";
}

inline AttentionVariant parse_attention_variant(const std::string& s) {
  for (auto v : {AttentionVariant::kNone, AttentionVariant::kChannel, AttentionVariant::kSpatial,
                 AttentionVariant::kChannelSpatial})
    if (to_string(v) == s) return v;
  throw UsageError("unknown attention variant '" + s + "'");
}

struct PGSNetConfig {
  BackboneSpec backbone;
  // Output width of the DE module at each pyramid level (finest first).
  // Must equal the backbone widths when DE is off.
  std::array<int64_t, 4> de_out_channels{16, 32, 64, 128};
  FusionStrategy fusion = FusionStrategy::kFebf;
  DEVariant de_variant = DEVariant::kFull;
  AttentionVariant attention = AttentionVariant::kNone;
  int de_branches = 4;
  bool use_channel_recalibration = true;
  bool use_interbranch_flow = true;

  void validate() const {
    backbone.validate();
    for (auto c : de_out_channels) detail::require(c > 0, "network: DE output channels must be positive");
    detail::require(de_branches == 1 || de_branches == 2 || de_branches == 4,
                    "network: DE branch count must be 1, 2 or 4");
    if (de_variant == DEVariant::kOff) {
      detail::require(de_out_channels == backbone.stage_channels,
                      "network: with DE off, de_out_channels must equal the backbone stage channels");
    } else {
      detail::require(attention == AttentionVariant::kNone,
                      "network: attention variants replace DE and require de_variant = off");
    }
  }
};

// Rows A-I of the component ablation, expressed as configuration flags.
inline PGSNetConfig ablation_variant(char row, PGSNetConfig base = {}) {
  auto set = [&](FusionStrategy f, DEVariant d) {
    base.fusion = f;
    base.de_variant = d;
    if (d == DEVariant::kOff) base.de_out_channels = base.backbone.stage_channels;
    return base;
  };
  switch (row) {
    case 'A': return set(FusionStrategy::kConcat, DEVariant::kOff);
    case 'B': return set(FusionStrategy::kConcat, DEVariant::kLfeOnly);
    case 'C': return set(FusionStrategy::kConcat, DEVariant::kLfeLff);
    case 'D': return set(FusionStrategy::kConcat, DEVariant::kFull);
    case 'E': return set(FusionStrategy::kAdd, DEVariant::kOff);
    case 'F': return set(FusionStrategy::kMultiply, DEVariant::kOff);
    case 'G': return set(FusionStrategy::kFocusOnly, DEVariant::kOff);
    case 'H': return set(FusionStrategy::kFebf, DEVariant::kOff);
    case 'I': return set(FusionStrategy::kFebf, DEVariant::kFull);
    default: throw UsageError(std::string("unknown ablation row '") + row + "'");
  }
}

struct SegmentationOutput {
  // Pre-sigmoid head outputs, finest first: strides 4, 8, 16 (levels i = 1, 2, 3).
  std::array<torch::Tensor, 3> level_logits;
  // sigmoid of the stride-4 logits upsampled to the input size, B x 1 x H x W.
  torch::Tensor final_probability;
};

// Per-level feature enhancer: a DE module, a generic attention block, or identity.
class LevelEnhancerImpl : public torch::nn::Module {
 public:
  LevelEnhancerImpl(const PGSNetConfig& cfg, int64_t in, int64_t out) {
    if (cfg.de_variant != DEVariant::kOff) {
      auto de_cfg = DEConfig::standard(in, out, cfg.de_branches);
      de_cfg.variant = cfg.de_variant;
      de_cfg.use_channel_recalibration = cfg.use_channel_recalibration;
      de_cfg.use_interbranch_flow = cfg.use_interbranch_flow;
      de = register_module("de", DEModule(de_cfg));
      return;
    }
    if (cfg.attention == AttentionVariant::kChannel || cfg.attention == AttentionVariant::kChannelSpatial)
      channel = register_module("channel_attention", ChannelRecalibration(in));
    if (cfg.attention == AttentionVariant::kSpatial || cfg.attention == AttentionVariant::kChannelSpatial)
      spatial = register_module("spatial_attention", SpatialAttention());
  }

  torch::Tensor forward(torch::Tensor x) {
    if (de) return de->forward(x);
    if (channel) x = channel->forward(x);
    if (spatial) x = spatial->forward(x);
    return x;
  }

  DEModule de{nullptr};
  ChannelRecalibration channel{nullptr};
  SpatialAttention spatial{nullptr};
};
TORCH_MODULE(LevelEnhancer);

class PGSNetImpl : public torch::nn::Module {
 public:
  explicit PGSNetImpl(PGSNetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    backbone = register_module("backbone", make_backbone(cfg_.backbone));
    const auto& ch = cfg_.de_out_channels;
    for (std::size_t i = 0; i < 4; ++i) {
      enhancers[i] = register_module("enhance" + std::to_string(i + 1),
                                     LevelEnhancer(cfg_, cfg_.backbone.stage_channels[i], ch[i]));
    }
    // fusion[0] merges levels 4 -> 3, fusion[1] 3 -> 2, fusion[2] 2 -> 1.
    for (std::size_t j = 0; j < 3; ++j) {
      const auto high = ch[3 - j];
      const auto low = ch[2 - j];
      fusions[j] = register_module("fusion" + std::to_string(j + 1), FEBF(high, low, cfg_.fusion));
      heads[j] = register_module("head" + std::to_string(j + 1),
                                 torch::nn::Conv2d(conv_options(low, 1, Kernel2d{}, true)));
      torch::nn::init::zeros_(heads[j]->bias);
    }
  }

  const PGSNetConfig& config() const { return cfg_; }

  SegmentationOutput forward(const torch::Tensor& image) {
    auto pyramid = backbone->forward(image);
    std::array<torch::Tensor, 4> enhanced;
    for (std::size_t i = 0; i < 4; ++i) enhanced[i] = enhancers[i]->forward(pyramid[i]);

    SegmentationOutput out;
    auto high = enhanced[3];
    for (std::size_t j = 0; j < 3; ++j) {
      high = fusions[j]->forward(high, enhanced[2 - j]);
      // j = 0 is the coarsest fused map (level i = 3).
      out.level_logits[2 - j] = heads[j]->forward(high);
    }
    out.final_probability =
        torch::sigmoid(resize_bilinear(out.level_logits[0], image.size(2), image.size(3)));
    return out;
  }

  std::shared_ptr<BackboneImpl> backbone;
  std::array<LevelEnhancer, 4> enhancers{nullptr, nullptr, nullptr, nullptr};
  std::array<FEBF, 3> fusions{nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, 3> heads{nullptr, nullptr, nullptr};

 private:
  PGSNetConfig cfg_;
};
TORCH_MODULE(PGSNet);

inline SegmentationOutput pgsnet_forward(PGSNet& net, const torch::Tensor& image) {
  return net->forward(image);
}

inline int64_t count_parameters(const PGSNetConfig& cfg) {
  torch::NoGradGuard no_grad;
  PGSNet net(cfg);
  return parameter_count(*net);
}

}  // namespace pgsnet
