#pragma once

#include <torch/torch.h>

#include <array>
#include <memory>
#include <string>

#include "pgsnet/errors.hpp"
#include "pgsnet/layers.hpp"

namespace pgsnet {

inline constexpr std::array<int64_t, 4> kStageStrides{4, 8, 16, 32};

struct BackboneSpec {
  std::string name = "tiny";
  std::array<int64_t, 4> stage_channels{16, 32, 64, 128};
  std::array<int64_t, 4> stage_strides = kStageStrides;
  // Per-channel affine applied to [0,1] pixels before the first convolution.
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};

  void validate() const {
    detail::require(stage_strides == kStageStrides, "backbone: stage strides must be (4, 8, 16, 32)");
    for (auto c : stage_channels) detail::require(c > 0, "backbone: stage channels must be positive");
    for (auto s : std) detail::require(s > 0, "backbone: normalization std must be positive");
  }
};

// Level 0 is the finest (stride 4), level 3 the deepest (stride 32).
struct FeaturePyramid {
  std::array<torch::Tensor, 4> levels;

  const torch::Tensor& operator[](std::size_t i) const { return levels[i]; }
};

inline void check_backbone_input(const torch::Tensor& image) {
  require_rank4(image, "extract_features");
  detail::require(image.size(1) == 3, "extract_features: expected 3 input channels, got " +
                                          std::to_string(image.size(1)));
  detail::require(image.size(2) % 32 == 0 && image.size(3) % 32 == 0,
                  "extract_features: height and width must be divisible by 32, got " +
                      shape_string(image));
}

// Any multi-level extractor honoring the stride/channel contract of BackboneSpec.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(BackboneSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const BackboneSpec& spec() const { return spec_; }

  FeaturePyramid forward(const torch::Tensor& image) {
    check_backbone_input(image);
    auto opts = image.options();
    auto mean = torch::tensor(std::vector<double>(spec_.mean.begin(), spec_.mean.end()), opts)
                    .view({1, 3, 1, 1});
    auto stdev = torch::tensor(std::vector<double>(spec_.std.begin(), spec_.std.end()), opts)
                     .view({1, 3, 1, 1});
    return extract((image - mean) / stdev);
  }

 protected:
  virtual FeaturePyramid extract(const torch::Tensor& normalized) = 0;

 private:
  BackboneSpec spec_;
};

// Five stride-2 conv/BN/ReLU blocks; blocks 2..5 are tapped as the pyramid.
// The stem block reuses the width of the first stage.
class TinyBackboneImpl : public BackboneImpl {
 public:
  explicit TinyBackboneImpl(BackboneSpec spec) : BackboneImpl(std::move(spec)) {
    const auto& ch = this->spec().stage_channels;
    const std::array<int64_t, 6> widths{3, ch[0], ch[0], ch[1], ch[2], ch[3]};
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i] = register_module("block" + std::to_string(i + 1),
                                   ConvBNReLU(widths[i], widths[i + 1], Kernel2d{3, 3, 1, 2}));
    }
  }

 protected:
  FeaturePyramid extract(const torch::Tensor& normalized) override {
    FeaturePyramid pyramid;
    auto x = blocks_[0]->forward(normalized);
    for (std::size_t i = 1; i < blocks_.size(); ++i) {
      x = blocks_[i]->forward(x);
      pyramid.levels[i - 1] = x;
    }
    return pyramid;
  }

 private:
  std::array<ConvBNReLU, 5> blocks_{nullptr, nullptr, nullptr, nullptr, nullptr};
};

inline std::shared_ptr<BackboneImpl> make_backbone(const BackboneSpec& spec) {
  if (spec.name == "tiny") return std::make_shared<TinyBackboneImpl>(spec);
  throw UsageError("backbone: unknown backbone '" + spec.name + "'");
}

inline FeaturePyramid extract_features(BackboneImpl& backbone, const torch::Tensor& image) {
  return backbone.forward(image);
}

}  // namespace pgsnet
