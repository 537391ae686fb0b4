#pragma once

// Small building blocks shared by the backbone, the fusion modules and the
// network head: conv + batch-norm + ReLU, bilinear resizing, shape checks.

#include <torch/torch.h>

#include <array>
#include <sstream>
#include <string>

#include "pgsnet/errors.hpp"

namespace pgsnet {

namespace F = torch::nn::functional;

// All bilinear resizing in the library uses half-pixel centers
// (align_corners = false), which is what image resize routines do.
inline torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t height, int64_t width) {
  if (x.size(-2) == height && x.size(-1) == width) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

inline torch::Tensor resize_nearest(const torch::Tensor& x, int64_t height, int64_t width) {
  if (x.size(-2) == height && x.size(-1) == width) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{height, width})
                               .mode(torch::kNearest));
}

inline std::string shape_string(const torch::Tensor& x) {
  std::ostringstream os;
  os << x.sizes();
  return os.str();
}

inline void require_rank4(const torch::Tensor& x, const char* what) {
  detail::require(x.defined() && x.dim() == 4,
                  std::string(what) + ": expected a B x C x H x W tensor, got " +
                      (x.defined() ? shape_string(x) : std::string("undefined")));
}

inline void require_finite(const torch::Tensor& x, const char* what) {
  if (!torch::isfinite(x).all().item<bool>())
    throw UsageError(std::string(what) + ": input contains non-finite values");
}

inline void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes())
    throw UsageError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

// Kernel extent along one axis (rows or columns) and the dilation on it.
struct Kernel2d {
  int64_t height = 3;
  int64_t width = 3;
  int64_t dilation = 1;
  int64_t stride = 1;
};

// "same" padding for odd kernels: dilation * (k - 1) / 2 per side.
inline torch::nn::Conv2dOptions conv_options(int64_t in, int64_t out, Kernel2d k, bool bias) {
  return torch::nn::Conv2dOptions(in, out, {k.height, k.width})
      .stride(k.stride)
      .dilation(k.dilation)
      .padding({k.dilation * (k.height - 1) / 2, k.dilation * (k.width - 1) / 2})
      .bias(bias);
}

// psi -> N -> R, the pattern every learned convolution in the network uses.
class ConvBNReLUImpl : public torch::nn::Module {
 public:
  ConvBNReLUImpl(int64_t in, int64_t out, Kernel2d k = {})
      : conv(register_module("conv", torch::nn::Conv2d(conv_options(in, out, k, false)))),
        bn(register_module("bn", torch::nn::BatchNorm2d(out))) {}

  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(bn->forward(conv->forward(x))); }

  torch::nn::Conv2d conv;
  torch::nn::BatchNorm2d bn;
};
TORCH_MODULE(ConvBNReLU);

// Squeeze-and-excitation gate: GAP -> FC(c -> c/r) -> ReLU -> FC(c/r -> c) -> sigmoid.
class ChannelRecalibrationImpl : public torch::nn::Module {
 public:
  explicit ChannelRecalibrationImpl(int64_t channels, int64_t reduction = 4)
      : squeeze(register_module(
            "squeeze", torch::nn::Conv2d(torch::nn::Conv2dOptions(
                           channels, std::max<int64_t>(1, channels / reduction), 1)))),
        excite(register_module(
            "excite", torch::nn::Conv2d(torch::nn::Conv2dOptions(
                          std::max<int64_t>(1, channels / reduction), channels, 1)))) {}

  torch::Tensor gate(const torch::Tensor& x) {
    auto pooled = x.mean({2, 3}, /*keepdim=*/true);
    return torch::sigmoid(excite->forward(torch::relu(squeeze->forward(pooled))));
  }

  torch::Tensor forward(const torch::Tensor& x) { return x * gate(x); }

  torch::nn::Conv2d squeeze;
  torch::nn::Conv2d excite;
};
TORCH_MODULE(ChannelRecalibration);

// CBAM-style spatial gate over [mean, max] channel statistics.
class SpatialAttentionImpl : public torch::nn::Module {
 public:
  SpatialAttentionImpl()
      : conv(register_module(
            "conv", torch::nn::Conv2d(conv_options(2, 1, Kernel2d{7, 7, 1, 1}, true)))) {}

  torch::Tensor forward(const torch::Tensor& x) {
    auto stats = torch::cat({x.mean(1, true), std::get<0>(x.max(1, true))}, 1);
    return x * torch::sigmoid(conv->forward(stats));
  }

  torch::nn::Conv2d conv;
};
TORCH_MODULE(SpatialAttention);

inline int64_t parameter_count(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

}  // namespace pgsnet
