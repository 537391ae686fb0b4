#pragma once

// Grayscale maps and image file I/O.

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pgsnet/errors.hpp"

namespace pgsnet {

// Row-major single-channel map of doubles: a prediction, a mask, a heatmap.
struct Map {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> values;

  Map() = default;
  Map(int64_t h, int64_t w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h * w), fill) {}

  std::size_t size() const { return values.size(); }
  double& operator()(int64_t r, int64_t c) { return values[static_cast<std::size_t>(r * width + c)]; }
  double operator()(int64_t r, int64_t c) const { return values[static_cast<std::size_t>(r * width + c)]; }
  bool same_shape(const Map& o) const { return height == o.height && width == o.width; }
};

// Accepts H x W, 1 x H x W or 1 x 1 x H x W.
inline Map map_from_tensor(const torch::Tensor& t) {
  auto x = t.detach().to(torch::kCPU, torch::kDouble).contiguous();
  while (x.dim() > 2) {
    detail::require(x.size(0) == 1, "map_from_tensor: expected a single-channel map, got " +
                                        std::to_string(x.dim()) + "-d tensor with leading size " +
                                        std::to_string(x.size(0)));
    x = x.squeeze(0);
  }
  detail::require(x.dim() == 2, "map_from_tensor: expected a 2-d map");
  Map m(x.size(0), x.size(1));
  std::copy(x.data_ptr<double>(), x.data_ptr<double>() + x.numel(), m.values.begin());
  return m;
}

// 1 x 1 x H x W tensor of the requested dtype.
inline torch::Tensor map_to_tensor(const Map& m, torch::Dtype dtype = torch::kFloat) {
  auto t = torch::from_blob(const_cast<double*>(m.values.data()), {1, 1, m.height, m.width},
                            torch::TensorOptions().dtype(torch::kDouble))
               .clone();
  return t.to(dtype);
}

// Masks are 8-bit grayscale; any value >= 128 is glass.
inline constexpr int kMaskThreshold = 128;

inline cv::Mat read_raw(const std::filesystem::path& path, int flags) {
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw DataError("cannot decode image file: " + path.string());
  return m;
}

// 3 x H x W float tensor, RGB order, values in [0, 1].
inline torch::Tensor read_image(const std::filesystem::path& path) {
  cv::Mat bgr = read_raw(path, cv::IMREAD_COLOR);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat).div_(255.0).contiguous();
}

// 1 x H x W float tensor with values exactly 0 or 1.
inline torch::Tensor read_mask(const std::filesystem::path& path) {
  cv::Mat gray = read_raw(path, cv::IMREAD_GRAYSCALE);
  auto t = torch::from_blob(gray.data, {1, gray.rows, gray.cols}, torch::kUInt8).clone();
  return (t >= kMaskThreshold).to(torch::kFloat);
}

// Grayscale map in [0, 1] read back from an 8-bit file, value / 255.
inline Map read_probability_map(const std::filesystem::path& path) {
  cv::Mat gray = read_raw(path, cv::IMREAD_GRAYSCALE);
  Map m(gray.rows, gray.cols);
  for (int r = 0; r < gray.rows; ++r)
    for (int c = 0; c < gray.cols; ++c) m(r, c) = gray.at<std::uint8_t>(r, c) / 255.0;
  return m;
}

inline std::uint8_t to_byte(double p) {
  const double v = std::floor(std::clamp(p, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(v);
}

inline void write_gray_png(const std::filesystem::path& path, const cv::Mat& gray) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), gray)) throw DataError("cannot write image file: " + path.string());
}

// Probability x 255, rounded half-up.
inline void write_probability_png(const std::filesystem::path& path, const Map& m) {
  cv::Mat gray(static_cast<int>(m.height), static_cast<int>(m.width), CV_8UC1);
  for (int64_t r = 0; r < m.height; ++r)
    for (int64_t c = 0; c < m.width; ++c)
      gray.at<std::uint8_t>(static_cast<int>(r), static_cast<int>(c)) = to_byte(m(r, c));
  write_gray_png(path, gray);
}

// 3 x H x W tensor in [0, 1] to an 8-bit RGB file.
inline void write_image(const std::filesystem::path& path, const torch::Tensor& image) {
  auto hwc = (image.detach().to(torch::kFloat).clamp(0, 1) * 255.0 + 0.5)
                 .floor()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write image file: " + path.string());
}

// 1 x H x W binary tensor to 0/255 PNG.
inline void write_mask(const std::filesystem::path& path, const torch::Tensor& mask) {
  write_probability_png(path, map_from_tensor(mask));
}

}  // namespace pgsnet
