#pragma once

// Binary segmentation metrics (IoU, weighted F-measure, MAE, BER) and the
// location-prior baseline mask.

#include <torch/torch.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pgsnet/errors.hpp"
#include "pgsnet/image.hpp"
#include "pgsnet/layers.hpp"

namespace pgsnet {

inline constexpr double kBinarizeThreshold = 0.5;

// p >= 0.5 is glass.
inline bool is_glass(double p) { return p >= kBinarizeThreshold; }

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      c_ += (sum_ - t) + x;
    else
      c_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + c_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

struct ConfusionCounts {
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;

  int64_t positives() const { return tp + fn; }
  int64_t negatives() const { return tn + fp; }
  int64_t total() const { return tp + tn + fp + fn; }
};

namespace detail {

inline void check_metric_inputs(const Map& pred, const Map& gt, const char* what) {
  if (!pred.same_shape(gt))
    throw UsageError(std::string(what) + ": prediction is " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " but mask is " + std::to_string(gt.height) + "x" +
                     std::to_string(gt.width));
}

}  // namespace detail

inline ConfusionCounts confusion_counts(const Map& pred, const Map& gt) {
  detail::check_metric_inputs(pred, gt, "confusion_counts");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = is_glass(pred.values[i]);
    const bool g = gt.values[i] >= 0.5;
    if (p && g) ++c.tp;
    else if (!p && !g) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

// Percent. Two empty masks count as perfect agreement (100).
inline double iou_metric(const Map& pred, const Map& gt) {
  const auto c = confusion_counts(pred, gt);
  const auto uni = c.tp + c.fp + c.fn;
  if (uni == 0) return 100.0;
  return 100.0 * static_cast<double>(c.tp) / static_cast<double>(uni);
}

inline double mae_metric(const Map& pred, const Map& gt) {
  detail::check_metric_inputs(pred, gt, "mae_metric");
  CompensatedSum s;
  for (std::size_t i = 0; i < pred.size(); ++i) s.add(std::abs(pred.values[i] - gt.values[i]));
  return s.value() / static_cast<double>(pred.size());
}

inline std::optional<double> ber_from_counts(const ConfusionCounts& c) {
  if (c.positives() == 0 || c.negatives() == 0) return std::nullopt;
  const double tpr = static_cast<double>(c.tp) / static_cast<double>(c.positives());
  const double tnr = static_cast<double>(c.tn) / static_cast<double>(c.negatives());
  return (1.0 - 0.5 * (tpr + tnr)) * 100.0;
}

// Percent. Undefined (nullopt) when the mask has no glass or no background.
inline std::optional<double> ber_metric(const Map& pred, const Map& gt) {
  return ber_from_counts(confusion_counts(pred, gt));
}

// ---------------------------------------------------------------------------
// Weighted F-measure
// ---------------------------------------------------------------------------

struct WeightedFMeasureParams {
  double beta2 = 1.0;
  double sigma = 5.0;    // Gaussian dependency kernel
  int window = 7;        // kernel support (odd)
  double decay = 5.0;    // background importance: 2 - exp(ln(0.5) / decay * distance)
};

namespace detail {

// 1-d squared Euclidean distance transform of a sampled function
// (Felzenszwalb & Huttenlocher lower envelope of parabolas).
inline void distance_transform_1d(const std::vector<double>& f, std::vector<double>& d) {
  const auto n = static_cast<int64_t>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<int64_t> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n + 1));
  int64_t k = 0;
  // Skip leading infinite samples; they never form part of the envelope.
  int64_t first = 0;
  while (first < n && f[first] == inf) ++first;
  if (first == n) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (int64_t q = first + 1; q < n; ++q) {
    if (f[q] == inf) continue;
    double s = 0.0;
    while (true) {
      const auto p = v[k];
      s = ((f[q] + static_cast<double>(q * q)) - (f[p] + static_cast<double>(p * p))) /
          (2.0 * static_cast<double>(q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const auto dq = q - v[k];
    d[q] = static_cast<double>(dq * dq) + f[v[k]];
  }
}

}  // namespace detail

// Nearest-foreground lookup for every pixel: squared Euclidean distance and
// the row-major index of the nearest foreground pixel. Ties go to the
// smallest index.
struct NearestForeground {
  std::vector<double> distance2;
  std::vector<int64_t> index;
};

inline NearestForeground nearest_foreground(const std::vector<bool>& fg, int64_t height, int64_t width) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const auto n = static_cast<std::size_t>(height * width);
  NearestForeground out{std::vector<double>(n, inf), std::vector<int64_t>(n, -1)};

  // Exact squared distances via separable column/row passes.
  std::vector<double> col(static_cast<std::size_t>(height)), col_d(static_cast<std::size_t>(height));
  for (int64_t c = 0; c < width; ++c) {
    for (int64_t r = 0; r < height; ++r) col[r] = fg[r * width + c] ? 0.0 : inf;
    detail::distance_transform_1d(col, col_d);
    for (int64_t r = 0; r < height; ++r) out.distance2[r * width + c] = col_d[r];
  }
  std::vector<double> row(static_cast<std::size_t>(width)), row_d(static_cast<std::size_t>(width));
  for (int64_t r = 0; r < height; ++r) {
    for (int64_t c = 0; c < width; ++c) row[c] = out.distance2[r * width + c];
    detail::distance_transform_1d(row, row_d);
    for (int64_t c = 0; c < width; ++c) out.distance2[r * width + c] = row_d[c];
  }

  // Recover the argmin: walk candidate offsets on the circle of the exact
  // (integer) squared radius in row-major order; the first hit is the
  // smallest index among ties.
  for (int64_t r = 0; r < height; ++r) {
    for (int64_t c = 0; c < width; ++c) {
      const auto i = static_cast<std::size_t>(r * width + c);
      if (fg[i]) {
        out.distance2[i] = 0.0;
        out.index[i] = static_cast<int64_t>(i);
        continue;
      }
      const double d2 = out.distance2[i];
      if (d2 == inf) continue;
      const auto rad2 = static_cast<int64_t>(std::llround(d2));
      const auto rad = static_cast<int64_t>(std::floor(std::sqrt(static_cast<double>(rad2))));
      for (int64_t dy = -rad; dy <= rad && out.index[i] < 0; ++dy) {
        const auto rr = r + dy;
        if (rr < 0 || rr >= height) continue;
        const auto rem = rad2 - dy * dy;
        auto dx = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(rem))));
        if (dx * dx != rem) continue;
        for (auto cc : {c - dx, c + dx}) {
          if (cc >= 0 && cc < width && fg[rr * width + cc]) {
            out.index[i] = rr * width + cc;
            break;
          }
        }
      }
      TORCH_INTERNAL_ASSERT(out.index[i] >= 0, "nearest_foreground: argmin recovery failed");
    }
  }
  return out;
}

// Normalized 1-d Gaussian taps; their outer product is the 2-d kernel.
inline std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(window));
  const int half = window / 2;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    const double x = i - half;
    taps[i] = std::exp(-(x * x) / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

// 'same'-size correlation with zero padding, separable.
inline std::vector<double> gaussian_filter(const std::vector<double>& src, int64_t height, int64_t width,
                                           int window, double sigma) {
  const auto taps = gaussian_taps(window, sigma);
  const int half = window / 2;
  std::vector<double> tmp(src.size(), 0.0), dst(src.size(), 0.0);
  for (int64_t r = 0; r < height; ++r)
    for (int64_t c = 0; c < width; ++c) {
      double acc = 0.0;
      for (int t = -half; t <= half; ++t) {
        const auto cc = c + t;
        if (cc >= 0 && cc < width) acc += taps[t + half] * src[r * width + cc];
      }
      tmp[r * width + c] = acc;
    }
  for (int64_t r = 0; r < height; ++r)
    for (int64_t c = 0; c < width; ++c) {
      double acc = 0.0;
      for (int t = -half; t <= half; ++t) {
        const auto rr = r + t;
        if (rr >= 0 && rr < height) acc += taps[t + half] * tmp[rr * width + c];
      }
      dst[r * width + c] = acc;
    }
  return dst;
}

// F^w_beta. Undefined (nullopt) for a mask without glass.
inline std::optional<double> weighted_fmeasure(const Map& pred, const Map& gt,
                                               const WeightedFMeasureParams& params = {}) {
  detail::check_metric_inputs(pred, gt, "weighted_fmeasure");
  const auto h = gt.height;
  const auto w = gt.width;
  const auto n = gt.size();
  std::vector<bool> fg(n);
  std::size_t n_fg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fg[i] = gt.values[i] >= 0.5;
    n_fg += fg[i];
  }
  if (n_fg == 0) return std::nullopt;

  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = std::abs(pred.values[i] - (fg[i] ? 1.0 : 0.0));

  const auto nearest = nearest_foreground(fg, h, w);
  // Background pixels inherit the error of their nearest foreground pixel.
  std::vector<double> err_t = err;
  for (std::size_t i = 0; i < n; ++i)
    if (!fg[i]) err_t[i] = err[static_cast<std::size_t>(nearest.index[i])];
  const auto err_a = gaussian_filter(err_t, h, w, params.window, params.sigma);

  const double alpha = std::log(0.5) / params.decay;
  CompensatedSum ew_fg, ew_bg;
  for (std::size_t i = 0; i < n; ++i) {
    if (fg[i]) {
      ew_fg.add(std::min(err[i], err_a[i]));
    } else {
      const double importance = 2.0 - std::exp(alpha * std::sqrt(nearest.distance2[i]));
      ew_bg.add(err[i] * importance);
    }
  }
  constexpr double eps = std::numeric_limits<double>::epsilon();
  const double tpw = static_cast<double>(n_fg) - ew_fg.value();
  const double fpw = ew_bg.value();
  const double recall = 1.0 - ew_fg.value() / static_cast<double>(n_fg);
  const double precision = tpw / (eps + tpw + fpw);
  return (1.0 + params.beta2) * recall * precision / (eps + recall + params.beta2 * precision);
}

// ---------------------------------------------------------------------------
// Location-prior baseline
// ---------------------------------------------------------------------------

// Each mask is resized bilinearly to (height, width); pixels whose mean over
// the list is >= 0.5 become glass. Accumulation is in fixed point so the
// result does not depend on the order of the list.
inline Map statistics_baseline(const std::vector<Map>& train_masks, int64_t height, int64_t width) {
  if (train_masks.empty()) throw UsageError("statistics_baseline: empty training mask list");
  detail::require(height > 0 && width > 0, "statistics_baseline: target size must be positive");
  constexpr double kScale = 4294967296.0;  // 2^32
  std::vector<int64_t> acc(static_cast<std::size_t>(height * width), 0);
  for (const auto& m : train_masks) {
    auto resized = map_from_tensor(
        resize_bilinear(map_to_tensor(m, torch::kDouble), height, width));
    for (std::size_t i = 0; i < acc.size(); ++i)
      acc[i] += std::llround(std::clamp(resized.values[i], 0.0, 1.0) * kScale);
  }
  // mean >= 0.5  <=>  2 * sum >= n * scale
  const auto threshold = static_cast<int64_t>(train_masks.size()) * static_cast<int64_t>(kScale);
  Map baseline(height, width);
  for (std::size_t i = 0; i < acc.size(); ++i) baseline.values[i] = 2 * acc[i] >= threshold ? 1.0 : 0.0;
  return baseline;
}

// ---------------------------------------------------------------------------
// Dataset evaluation
// ---------------------------------------------------------------------------

struct ImageMetrics {
  std::string id;
  double iou = 0.0;                 // percent
  std::optional<double> wf;         // [0, 1]; nullopt when the mask is empty
  double mae = 0.0;                 // [0, 1]
  std::optional<double> ber;        // percent; nullopt when glass or background is absent
};

struct MetricReport {
  std::vector<ImageMetrics> images;
  double mean_iou = 0.0;
  double mean_wf = std::numeric_limits<double>::quiet_NaN();
  double mean_mae = 0.0;
  double mean_ber = std::numeric_limits<double>::quiet_NaN();
  std::size_t wf_excluded = 0;
  std::size_t ber_excluded = 0;
};

inline ImageMetrics evaluate_image(const Map& pred, const Map& gt, std::string id = {}) {
  ImageMetrics m;
  m.id = std::move(id);
  m.iou = iou_metric(pred, gt);
  m.wf = weighted_fmeasure(pred, gt);
  m.mae = mae_metric(pred, gt);
  m.ber = ber_metric(pred, gt);
  return m;
}

// Unweighted per-image means; images where a metric is undefined are left
// out of that metric's mean and counted. Rows are ordered by id so the report
// does not depend on input order.
inline MetricReport summarize(std::vector<ImageMetrics> images) {
  MetricReport report;
  std::stable_sort(images.begin(), images.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  report.images = std::move(images);
  CompensatedSum iou, wf, mae, ber;
  std::size_t n_wf = 0, n_ber = 0;
  for (const auto& m : report.images) {
    iou.add(m.iou);
    mae.add(m.mae);
    if (m.wf) {
      wf.add(*m.wf);
      ++n_wf;
    } else {
      ++report.wf_excluded;
    }
    if (m.ber) {
      ber.add(*m.ber);
      ++n_ber;
    } else {
      ++report.ber_excluded;
    }
  }
  const auto n = static_cast<double>(report.images.size());
  if (!report.images.empty()) {
    report.mean_iou = iou.value() / n;
    report.mean_mae = mae.value() / n;
  }
  if (n_wf > 0) report.mean_wf = wf.value() / static_cast<double>(n_wf);
  if (n_ber > 0) report.mean_ber = ber.value() / static_cast<double>(n_ber);
  return report;
}

inline MetricReport evaluate_dataset(const std::vector<Map>& preds, const std::vector<Map>& gts,
                                     const std::vector<std::string>& ids = {}) {
  if (preds.size() != gts.size())
    throw UsageError("evaluate_dataset: " + std::to_string(preds.size()) + " predictions but " +
                     std::to_string(gts.size()) + " masks");
  if (!ids.empty() && ids.size() != preds.size())
    throw UsageError("evaluate_dataset: id list length does not match");
  std::vector<ImageMetrics> rows;
  rows.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    rows.push_back(evaluate_image(preds[i], gts[i], ids.empty() ? std::to_string(i) : ids[i]));
  return summarize(std::move(rows));
}

}  // namespace pgsnet
