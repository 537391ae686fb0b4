#pragma once

// Training configuration and its flat "key = value" text form.
//
//   # comment
//   base_lr = 0.001
//   fusion = febf
//   stage_channels = 16,32,64,128
//
// Unknown keys and malformed values are rejected. The same text is embedded
// in checkpoints.

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pgsnet/data.hpp"
#include "pgsnet/errors.hpp"
#include "pgsnet/losses.hpp"
#include "pgsnet/network.hpp"

namespace pgsnet {

struct TrainConfig {
  double base_lr = 0.001;
  double power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int64_t batch_size = 2;
  int64_t max_epochs = 10;
  std::uint64_t seed = 0;
  LossConfig loss;
  PGSNetConfig network;
  AugmentConfig augment;

  void validate() const {
    detail::require(base_lr > 0 && power > 0 && momentum >= 0 && weight_decay >= 0,
                    "config: learning-rate parameters must be positive");
    detail::require(batch_size >= 1, "config: batch_size must be at least 1");
    detail::require(max_epochs >= 1, "config: max_epochs must be at least 1");
    detail::require(augment.base_size > 0 && augment.base_size % 32 == 0,
                    "config: input_size must be a positive multiple of 32");
    detail::require(augment.flip_probability >= 0 && augment.flip_probability <= 1,
                    "config: flip_probability must lie in [0, 1]");
    for (auto s : augment.scales) detail::require(s > 0, "config: scales must be positive");
    network.validate();
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw UsageError("config: bad value for '" + key + "': '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw UsageError("config: bad boolean for '" + key + "': '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  return out;
}

template <typename T, std::size_t N>
std::array<T, N> parse_array(const std::string& key, const std::string& text) {
  auto v = parse_list<T>(key, text);
  if (v.size() != N)
    throw UsageError("config: '" + key + "' needs " + std::to_string(N) + " comma-separated values");
  std::array<T, N> out;
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

// Shortest text that parses back to the same value.
template <typename T>
std::string format_number(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename Range>
std::string join(const Range& r) {
  std::string out;
  for (const auto& v : r) {
    if (!out.empty()) out += ',';
    out += format_number(v);
  }
  return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> setters = {
      {"base_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.base_lr = parse_number<double>(k, v); }},
      {"power", [](TrainConfig& c, const std::string& k, const std::string& v) { c.power = parse_number<double>(k, v); }},
      {"momentum", [](TrainConfig& c, const std::string& k, const std::string& v) { c.momentum = parse_number<double>(k, v); }},
      {"weight_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_number<double>(k, v); }},
      {"batch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_number<int64_t>(k, v); }},
      {"max_epochs", [](TrainConfig& c, const std::string& k, const std::string& v) { c.max_epochs = parse_number<int64_t>(k, v); }},
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"gamma", [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.gamma = parse_number<double>(k, v); }},
      {"lambda", [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.lambda = parse_number<double>(k, v); }},
      {"use_iou", [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.use_iou = parse_bool(k, v); }},
      {"input_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment.base_size = parse_number<int64_t>(k, v); }},
      {"use_multiscale", [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment.use_multiscale = parse_bool(k, v); }},
      {"scales", [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment.scales = parse_list<double>(k, v); }},
      {"flip_probability", [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment.flip_probability = parse_number<double>(k, v); }},
      {"backbone", [](TrainConfig& c, const std::string&, const std::string& v) { c.network.backbone.name = v; }},
      {"stage_channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.network.backbone.stage_channels = parse_array<int64_t, 4>(k, v); }},
      {"norm_mean", [](TrainConfig& c, const std::string& k, const std::string& v) { c.network.backbone.mean = parse_array<double, 3>(k, v); }},
      {"norm_std", [](TrainConfig& c, const std::string& k, const std::string& v) { c.network.backbone.std = parse_array<double, 3>(k, v); }},
      {"de_out_channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.network.de_out_channels = parse_array<int64_t, 4>(k, v); }},
      {"fusion", [](TrainConfig& c, const std::string&, const std::string& v) { c.network.fusion = parse_fusion_strategy(v); }},
      {"de_variant", [](TrainConfig& c, const std::string&, const std::string& v) { c.network.de_variant = parse_de_variant(v); }},
      {"attention", [](TrainConfig& c, const std::string&, const std::string& v) { c.network.attention = parse_attention_variant(v); }},
      {"de_branches", [](TrainConfig& c, const std::string& k, const std::string& v) { c.network.de_branches = parse_number<int>(k, v); }},
      {"use_channel_recalibration", [](TrainConfig& c, const std::string& k, const std::string& v) { c.network.use_channel_recalibration = parse_bool(k, v); }},
      {"use_interbranch_flow", [](TrainConfig& c, const std::string& k, const std::string& v) { c.network.use_interbranch_flow = parse_bool(k, v); }},
  };
  return setters;
}

}  // namespace detail

// Keys absent from the text keep their defaults; the result is validated.
inline TrainConfig parse_config(const std::string& text, TrainConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  const auto& setters = detail::config_setters();
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw UsageError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second(cfg, key, value);
    seen.insert(key);
  }
  // DE widths follow the backbone unless given explicitly.
  if (!seen.count("de_out_channels")) cfg.network.de_out_channels = cfg.network.backbone.stage_channels;
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string to_text(const TrainConfig& c) {
  using detail::format_number;
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "base_lr = " << format_number(c.base_lr) << '\n'
     << "power = " << format_number(c.power) << '\n'
     << "momentum = " << format_number(c.momentum) << '\n'
     << "weight_decay = " << format_number(c.weight_decay) << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "max_epochs = " << c.max_epochs << '\n'
     << "seed = " << c.seed << '\n'
     << "gamma = " << format_number(c.loss.gamma) << '\n'
     << "lambda = " << format_number(c.loss.lambda) << '\n'
     << "use_iou = " << b(c.loss.use_iou) << '\n'
     << "input_size = " << c.augment.base_size << '\n'
     << "use_multiscale = " << b(c.augment.use_multiscale) << '\n'
     << "scales = " << detail::join(c.augment.scales) << '\n'
     << "flip_probability = " << format_number(c.augment.flip_probability) << '\n'
     << "backbone = " << c.network.backbone.name << '\n'
     << "stage_channels = " << detail::join(c.network.backbone.stage_channels) << '\n'
     << "norm_mean = " << detail::join(c.network.backbone.mean) << '\n'
     << "norm_std = " << detail::join(c.network.backbone.std) << '\n'
     << "de_out_channels = " << detail::join(c.network.de_out_channels) << '\n'
     << "fusion = " << to_string(c.network.fusion) << '\n'
     << "de_variant = " << to_string(c.network.de_variant) << '\n'
     << "attention = " << to_string(c.network.attention) << '\n'
     << "de_branches = " << c.network.de_branches << '\n'
     << "use_channel_recalibration = " << b(c.network.use_channel_recalibration) << '\n'
     << "use_interbranch_flow = " << b(c.network.use_interbranch_flow) << '\n';
  return os.str();
}

}  // namespace pgsnet
