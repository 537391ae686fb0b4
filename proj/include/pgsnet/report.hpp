#pragma once

// MetricReport and DatasetStats serialization.
//
// Report CSV columns: id,iou,wf,mae,ber,wf_excluded,ber_excluded
// followed by a final row whose id is "__mean__". Undefined values are empty
// cells in CSV and null in JSON.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "pgsnet/data.hpp"
#include "pgsnet/errors.hpp"
#include "pgsnet/image.hpp"
#include "pgsnet/metrics.hpp"

namespace pgsnet {

using json = nlohmann::json;

namespace detail {

inline json optional_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::string csv_cell(double v) {
  if (!std::isfinite(v)) return {};
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}
inline std::string csv_cell(const std::optional<double>& v) { return v ? csv_cell(*v) : std::string{}; }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path.string());
  out << text;
}

}  // namespace detail

inline json to_json(const MetricReport& r) {
  json images = json::array();
  for (const auto& m : r.images) {
    images.push_back({{"id", m.id},
                      {"iou", m.iou},
                      {"wf", detail::optional_number(m.wf)},
                      {"mae", m.mae},
                      {"ber", detail::optional_number(m.ber)},
                      {"wf_excluded", !m.wf.has_value()},
                      {"ber_excluded", !m.ber.has_value()}});
  }
  return {{"images", images},
          {"summary",
           {{"count", r.images.size()},
            {"iou", r.mean_iou},
            {"wf", detail::optional_number(r.mean_wf)},
            {"mae", r.mean_mae},
            {"ber", detail::optional_number(r.mean_ber)},
            {"wf_excluded", r.wf_excluded},
            {"ber_excluded", r.ber_excluded}}}};
}

inline std::string to_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "id,iou,wf,mae,ber,wf_excluded,ber_excluded\n";
  for (const auto& m : r.images) {
    os << m.id << ',' << detail::csv_cell(m.iou) << ',' << detail::csv_cell(m.wf) << ','
       << detail::csv_cell(m.mae) << ',' << detail::csv_cell(m.ber) << ',' << (m.wf ? 0 : 1) << ','
       << (m.ber ? 0 : 1) << '\n';
  }
  os << "__mean__," << detail::csv_cell(r.mean_iou) << ',' << detail::csv_cell(r.mean_wf) << ','
     << detail::csv_cell(r.mean_mae) << ',' << detail::csv_cell(r.mean_ber) << ',' << r.wf_excluded << ','
     << r.ber_excluded << '\n';
  return os.str();
}

// Writes <stem>.csv and <stem>.json; an extension on `out` is replaced.
inline void write_report(const std::filesystem::path& out, const MetricReport& r) {
  auto stem = out;
  stem.replace_extension();
  detail::write_text(stem.string() + ".csv", to_csv(r));
  detail::write_text(stem.string() + ".json", to_json(r).dump(2) + "\n");
}

inline json to_json(const DatasetStats& s) {
  json heat = json::array();
  for (int64_t r = 0; r < s.location_heatmap.height; ++r) {
    json row = json::array();
    for (int64_t c = 0; c < s.location_heatmap.width; ++c) row.push_back(s.location_heatmap(r, c));
    heat.push_back(row);
  }
  return {{"image_count", s.image_count},
          {"counts_per_source", s.counts_per_source},
          {"bins", DatasetStats::kBins},
          {"area_histogram", s.area_histogram},
          {"contrast_histogram", s.contrast_histogram},
          {"area_fractions", s.area_fractions},
          {"contrasts", s.contrasts},
          {"location_heatmap", heat}};
}

inline cv::Mat render_histogram(const std::array<int64_t, DatasetStats::kBins>& bins) {
  constexpr int kBarWidth = 24, kHeight = 160;
  cv::Mat img(kHeight, kBarWidth * DatasetStats::kBins, CV_8UC1, cv::Scalar(255));
  const auto peak = std::max<int64_t>(1, *std::max_element(bins.begin(), bins.end()));
  for (int i = 0; i < DatasetStats::kBins; ++i) {
    const int h = static_cast<int>(std::lround(static_cast<double>(bins[i]) / peak * (kHeight - 4)));
    cv::rectangle(img, cv::Point(i * kBarWidth + 2, kHeight - h), cv::Point((i + 1) * kBarWidth - 3, kHeight - 1),
                  cv::Scalar(0), cv::FILLED);
  }
  return img;
}

// stats.json, location_heatmap.png, area_histogram.png, contrast_histogram.png
inline void write_stats(const std::filesystem::path& dir, const DatasetStats& s) {
  detail::write_text(dir / "stats.json", to_json(s).dump(2) + "\n");
  write_probability_png(dir / "location_heatmap.png", s.location_heatmap);
  write_gray_png(dir / "area_histogram.png", render_histogram(s.area_histogram));
  write_gray_png(dir / "contrast_histogram.png", render_histogram(s.contrast_histogram));
}

}  // namespace pgsnet
