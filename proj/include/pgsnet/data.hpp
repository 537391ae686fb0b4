#pragma once

// Corpus ingestion, augmentation, inference resizing, synthetic corpora and
// dataset statistics.

#include <torch/torch.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pgsnet/errors.hpp"
#include "pgsnet/image.hpp"
#include "pgsnet/layers.hpp"

namespace pgsnet {

namespace fs = std::filesystem;

inline constexpr int64_t kNetworkInputSize = 352;

struct SamplePair {
  std::string id;
  torch::Tensor image;  // 3 x H x W, [0, 1]
  torch::Tensor mask;   // 1 x H x W, {0, 1}
};

// Deterministic 64-bit FNV-1a; std::hash is not stable across implementations.
inline std::uint64_t stable_hash(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// Independent stream per (seed, sample id, epoch) so worker scheduling never
// changes what a sample sees.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::string_view id, std::uint64_t epoch = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stable_hash(id)),
                    static_cast<std::uint32_t>(stable_hash(id) >> 32), static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

// Uniform [0, 1) with an explicit construction so corpora are identical
// across standard library implementations.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

namespace detail {

inline bool has_extension(const fs::path& p, std::initializer_list<const char*> exts) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return std::any_of(exts.begin(), exts.end(), [&](const char* e) { return ext == e; });
}

inline std::map<std::string, fs::path> list_by_stem(const fs::path& dir,
                                                    std::initializer_list<const char*> exts) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) throw DataError("missing directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !has_extension(entry.path(), exts)) continue;
    auto stem = entry.path().stem().string();
    if (!out.emplace(stem, entry.path()).second)
      throw DataError("duplicate sample id '" + stem + "' in " + dir.string());
  }
  return out;
}

}  // namespace detail

// Reads <root>/image/*.{png,jpg,jpeg} and <root>/mask/*.png, matched by file
// stem, sorted by id. All problems are collected and reported together.
inline std::vector<SamplePair> load_corpus(const fs::path& root) {
  const auto images = detail::list_by_stem(root / "image", {".png", ".jpg", ".jpeg"});
  const auto masks = detail::list_by_stem(root / "mask", {".png"});
  std::vector<std::string> problems;
  for (const auto& [id, path] : images)
    if (!masks.count(id)) problems.push_back("image without mask: " + path.string());
  for (const auto& [id, path] : masks)
    if (!images.count(id)) problems.push_back("mask without image: " + path.string());

  std::vector<SamplePair> corpus;
  for (const auto& [id, image_path] : images) {
    auto mask_it = masks.find(id);
    if (mask_it == masks.end()) continue;
    try {
      SamplePair s{id, read_image(image_path), read_mask(mask_it->second)};
      if (s.image.size(1) != s.mask.size(1) || s.image.size(2) != s.mask.size(2)) {
        problems.push_back("size mismatch between " + image_path.string() + " and " +
                           mask_it->second.string());
        continue;
      }
      corpus.push_back(std::move(s));
    } catch (const DataError& e) {
      problems.push_back(e.what());
    }
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "corpus " << root.string() << ":";
    for (const auto& p : problems) os << "\n  " << p;
    throw DataError(os.str());
  }
  return corpus;
}

inline void write_corpus(const fs::path& root, const std::vector<SamplePair>& corpus) {
  for (const auto& s : corpus) {
    write_image(root / "image" / (s.id + ".png"), s.image);
    write_mask(root / "mask" / (s.id + ".png"), s.mask);
  }
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  int64_t base_size = kNetworkInputSize;
  bool use_multiscale = true;
  std::vector<double> scales{0.75, 1.0, 1.25};
  double flip_probability = 0.5;
};

// s * base rounded to the nearest multiple of 32 (the backbone stride), at least 32.
inline int64_t scaled_size(int64_t base, double scale) {
  return std::max<int64_t>(32, static_cast<int64_t>(std::llround(scale * static_cast<double>(base) / 32.0)) * 32);
}

inline SamplePair horizontal_flip(const SamplePair& s) {
  return {s.id, s.image.flip({-1}), s.mask.flip({-1})};
}

inline SamplePair resize_sample(const SamplePair& s, int64_t height, int64_t width) {
  return {s.id, resize_bilinear(s.image.unsqueeze(0), height, width).squeeze(0),
          resize_nearest(s.mask.unsqueeze(0), height, width).squeeze(0)};
}

inline double draw_scale(std::mt19937_64& rng, const AugmentConfig& cfg) {
  if (!cfg.use_multiscale || cfg.scales.empty()) return 1.0;
  return cfg.scales[static_cast<std::size_t>(rng() % cfg.scales.size())];
}

// Random horizontal flip then resize to a square of scaled_size(base, s).
// The same flip and size apply to image and mask.
inline SamplePair augment_train(const SamplePair& sample, std::mt19937_64& rng, const AugmentConfig& cfg) {
  const bool flip = uniform01(rng) < cfg.flip_probability;
  const auto side = scaled_size(cfg.base_size, draw_scale(rng, cfg));
  auto out = flip ? horizontal_flip(sample) : sample;
  return resize_sample(out, side, side);
}

// ---------------------------------------------------------------------------
// Inference resizing
// ---------------------------------------------------------------------------

struct InferenceInput {
  torch::Tensor tensor;  // 1 x 3 x S x S
  int64_t original_height = 0;
  int64_t original_width = 0;
  // Bilinearly maps a 1 x 1 x S x S prediction back to 1 x 1 x H x W.
  std::function<torch::Tensor(const torch::Tensor&)> restore;
};

inline InferenceInput prepare_inference(const torch::Tensor& image, int64_t size = kNetworkInputSize) {
  detail::require(image.dim() == 3 && image.size(0) == 3, "prepare_inference: expected a 3 x H x W image");
  const auto h = image.size(1);
  const auto w = image.size(2);
  detail::require(h >= 2 && w >= 2, "prepare_inference: image must be at least 2x2");
  InferenceInput in;
  in.tensor = resize_bilinear(image.unsqueeze(0), size, size);
  in.original_height = h;
  in.original_width = w;
  in.restore = [h, w](const torch::Tensor& pred) { return resize_bilinear(pred, h, w); };
  return in;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  int64_t size = 64;
  double min_area = 0.05;
  double max_area = 0.6;
};

namespace detail {

inline torch::Tensor box_blur(const torch::Tensor& image, int64_t radius) {
  auto x = image.unsqueeze(0);
  const auto k = 2 * radius + 1;
  x = F::pad(x, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReplicate));
  return F::avg_pool2d(x, F::AvgPool2dFuncOptions(k).stride(1)).squeeze(0);
}

}  // namespace detail

// Textured backgrounds with one rectangular "glass" pane: the pane shows a
// blurred, dimmed copy of the scene behind it plus a soft highlight. Fully
// determined by (n, seed, cfg).
inline std::vector<SamplePair> make_synthetic_corpus(int n, std::uint64_t seed, const SyntheticConfig& cfg = {}) {
  detail::require(n >= 1, "make_synthetic_corpus: n must be at least 1");
  detail::require(cfg.size >= 8, "make_synthetic_corpus: size must be at least 8");
  detail::require(0 < cfg.min_area && cfg.min_area <= cfg.max_area && cfg.max_area <= 1,
                  "make_synthetic_corpus: bad area range");
  const auto s = cfg.size;
  const double total = static_cast<double>(s * s);
  std::vector<SamplePair> corpus;
  for (int k = 0; k < n; ++k) {
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%03d", k);
    auto rng = sample_rng(seed, id);

    // Background: coarse colour field, a few opaque objects, fine noise.
    constexpr int64_t coarse = 6;
    std::vector<float> field(static_cast<std::size_t>(3 * coarse * coarse));
    for (auto& v : field) v = static_cast<float>(uniform(rng, 0.1, 0.7));
    auto bg = resize_bilinear(torch::from_blob(field.data(), {1, 3, coarse, coarse}).clone(), s, s).squeeze(0);
    for (int obj = 0; obj < 4; ++obj) {
      const auto y0 = static_cast<int64_t>(uniform(rng, 0, s * 0.8));
      const auto x0 = static_cast<int64_t>(uniform(rng, 0, s * 0.8));
      const auto oh = static_cast<int64_t>(uniform(rng, s * 0.1, s * 0.3));
      const auto ow = static_cast<int64_t>(uniform(rng, s * 0.1, s * 0.3));
      for (int c = 0; c < 3; ++c)
        bg[c].slice(0, y0, std::min(s, y0 + oh)).slice(1, x0, std::min(s, x0 + ow)).fill_(uniform(rng, 0.0, 0.8));
    }
    std::vector<float> noise(static_cast<std::size_t>(3 * s * s));
    for (auto& v : noise) v = static_cast<float>(uniform(rng, -0.08, 0.08));
    bg = (bg + torch::from_blob(noise.data(), {3, s, s}).clone()).clamp(0, 1);

    // Pane geometry with the realized pixel area inside [min_area, max_area].
    int64_t ph = 0, pw = 0;
    for (int attempt = 0;; ++attempt) {
      const double area = uniform(rng, cfg.min_area, cfg.max_area);
      const double aspect = uniform(rng, 0.6, 1.6);
      ph = std::clamp<int64_t>(std::llround(std::sqrt(area * total / aspect)), 1, s);
      pw = std::clamp<int64_t>(std::llround(area * total / static_cast<double>(ph)), 1, s);
      const double realized = static_cast<double>(ph * pw) / total;
      if (realized >= cfg.min_area && realized <= cfg.max_area) break;
      TORCH_CHECK(attempt < 1000, "make_synthetic_corpus: cannot place pane");
    }
    const auto y0 = static_cast<int64_t>(uniform01(rng) * static_cast<double>(s - ph + 1));
    const auto x0 = static_cast<int64_t>(uniform01(rng) * static_cast<double>(s - pw + 1));

    auto mask = torch::zeros({1, s, s});
    mask.slice(1, y0, y0 + ph).slice(2, x0, x0 + pw).fill_(1.0);

    // Highlight: a diagonal soft band across the pane.
    auto ys = torch::arange(s, torch::kFloat).view({s, 1});
    auto xs = torch::arange(s, torch::kFloat).view({1, s});
    const double phase = uniform(rng, 0, 1);
    auto band = torch::exp(-torch::pow(torch::sin(((xs - ys) / static_cast<double>(s) + phase) * M_PI * 1.5), 2) * 4.0);
    auto glass = (detail::box_blur(bg, 2) * 0.6 + 0.3 + 0.15 * band.unsqueeze(0)).clamp(0, 1);

    auto image = torch::where(mask.expand({3, s, s}) > 0.5, glass, bg);
    corpus.push_back({id, image.contiguous(), mask});
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct DatasetStats {
  static constexpr int64_t kHeatmapSize = 64;
  static constexpr int kBins = 10;

  Map location_heatmap{kHeatmapSize, kHeatmapSize};
  std::array<int64_t, kBins> area_histogram{};      // bins over [0, 1]
  std::array<int64_t, kBins> contrast_histogram{};  // bins over [0, 1]
  std::vector<double> area_fractions;
  std::vector<double> contrasts;
  std::map<std::string, int64_t> counts_per_source;
  int64_t image_count = 0;
};

inline int histogram_bin(double v, int bins) {
  return std::clamp(static_cast<int>(std::floor(v * bins)), 0, bins - 1);
}

// Glass pixels / total pixels.
inline double area_fraction(const torch::Tensor& mask) { return mask.to(torch::kDouble).mean().item<double>(); }

// |mean intensity inside the mask - mean intensity outside|, intensity being
// the mean over RGB. 0 when either region is empty.
inline double region_contrast(const torch::Tensor& image, const torch::Tensor& mask) {
  auto intensity = image.to(torch::kDouble).mean(0);
  auto m = mask.to(torch::kDouble).squeeze(0);
  const double inside_n = m.sum().item<double>();
  const double outside_n = static_cast<double>(m.numel()) - inside_n;
  if (inside_n == 0 || outside_n == 0) return 0.0;
  const double inside = (intensity * m).sum().item<double>() / inside_n;
  const double outside = (intensity * (1 - m)).sum().item<double>() / outside_n;
  return std::abs(inside - outside);
}

// The source of "hso_0001" is "hso"; ids without '_' are their own source.
inline std::string sample_source(const std::string& id) { return id.substr(0, id.find('_')); }

inline DatasetStats compute_stats(const std::vector<SamplePair>& corpus) {
  if (corpus.empty()) throw UsageError("compute_stats: empty corpus");
  DatasetStats stats;
  const auto hs = DatasetStats::kHeatmapSize;
  auto heat = torch::zeros({1, 1, hs, hs}, torch::kDouble);
  for (const auto& s : corpus) {
    heat += resize_bilinear(s.mask.to(torch::kDouble).unsqueeze(0), hs, hs);
    const double area = area_fraction(s.mask);
    const double contrast = region_contrast(s.image, s.mask);
    stats.area_fractions.push_back(area);
    stats.contrasts.push_back(contrast);
    ++stats.area_histogram[histogram_bin(area, DatasetStats::kBins)];
    ++stats.contrast_histogram[histogram_bin(contrast, DatasetStats::kBins)];
    ++stats.counts_per_source[sample_source(s.id)];
  }
  stats.image_count = static_cast<int64_t>(corpus.size());
  stats.location_heatmap = map_from_tensor((heat / static_cast<double>(corpus.size())).clamp(0, 1));
  return stats;
}

}  // namespace pgsnet
