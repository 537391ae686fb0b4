// pgsnet command-line driver: train, predict, eval, stats, baseline, synth.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <glob.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pgsnet/pgsnet.hpp"

namespace fs = std::filesystem;
using namespace pgsnet;

namespace {

std::vector<fs::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<fs::path> out;
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (out.empty()) throw DataError("no images match '" + pattern + "'");
  std::sort(out.begin(), out.end());
  return out;
}

int run_train(const fs::path& config, const fs::path& data, const fs::path& out) {
  auto cfg = load_config(config);
  auto corpus = load_corpus(data);
  fs::create_directories(out);
  std::ofstream log(out / "train_log.csv");
  log << log_csv_header();
  TrainOptions options;
  options.snapshot_dir = out;
  options.on_step = [&](const LogRow& row) { log << log_csv_row(row) << std::flush; };
  auto result = train(corpus, cfg, options);
  save_checkpoint(out / "checkpoint.pt", result.state);
  std::ofstream(out / "config.txt") << to_text(cfg);
  const auto& last = result.log.back();
  std::cout << "trained " << result.log.size() << " steps; final loss " << last.loss.total << "\n"
            << "checkpoint: " << (out / "checkpoint.pt").string() << "\n";
  return 0;
}

int run_predict(const fs::path& ckpt, const std::string& images, const fs::path& out) {
  auto written = predict(ckpt, expand_glob(images), out);
  std::cout << "wrote " << written.size() << " prediction maps to " << out.string() << "\n";
  return 0;
}

int run_eval(const fs::path& pred, const fs::path& gt, const fs::path& out) {
  auto report = eval_command(pred, gt, out);
  std::cout << to_json(report)["summary"].dump(2) << "\n";
  return 0;
}

int run_stats(const fs::path& data, const fs::path& out) {
  auto stats = compute_stats(load_corpus(data));
  auto j = to_json(stats);
  if (!out.empty()) write_stats(out, stats);
  j.erase("location_heatmap");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_baseline(const fs::path& data, const fs::path& out, int64_t size, const fs::path& like,
                 const fs::path& pred_out) {
  auto corpus = load_corpus(data);
  std::vector<Map> masks;
  for (const auto& s : corpus) masks.push_back(map_from_tensor(s.mask));
  auto baseline = statistics_baseline(masks, size, size);
  write_probability_png(out, baseline);
  std::cout << "baseline mask: " << out.string() << "\n";
  if (!like.empty()) {
    // One copy of the fixed mask per target mask, resized to its size.
    auto dir = fs::is_directory(like / "mask") ? like / "mask" : like;
    const auto targets = pgsnet::detail::list_by_stem(dir, {".png"});
    for (const auto& [id, path] : targets) {
      auto target = read_mask(path);
      auto resized = resize_nearest(map_to_tensor(baseline), target.size(1), target.size(2));
      write_probability_png(pred_out / (id + ".png"), map_from_tensor(resized));
    }
    std::cout << "wrote " << targets.size() << " baseline predictions to " << pred_out.string() << "\n";
  }
  return 0;
}

int run_synth(const fs::path& out, int n, std::uint64_t seed, int64_t size) {
  SyntheticConfig cfg;
  cfg.size = size;
  write_corpus(out, make_synthetic_corpus(n, seed, cfg));
  std::cout << "wrote " << n << " synthetic pairs to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive glass segmentation: train, predict, evaluate"};
  app.require_subcommand(1);

  fs::path config, data, out, ckpt, pred, gt, like, pred_out;
  std::string images;
  int64_t size = kNetworkInputSize;
  int64_t synth_size = SyntheticConfig{}.size;
  int n = 8;
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--threads", threads, "intra-op worker threads")->check(CLI::PositiveNumber);

  auto* train_cmd = app.add_subcommand("train", "train a model on a corpus");
  train_cmd->add_option("--config", config, "flat key = value config file")->required();
  train_cmd->add_option("--data", data, "corpus root with image/ and mask/")->required();
  train_cmd->add_option("--out", out, "output directory")->required();

  auto* predict_cmd = app.add_subcommand("predict", "write probability maps for images");
  predict_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  predict_cmd->add_option("--images", images, "glob pattern of input images")->required();
  predict_cmd->add_option("--out", out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "score prediction maps against masks");
  eval_cmd->add_option("--pred", pred, "directory of prediction PNGs")->required();
  eval_cmd->add_option("--gt", gt, "directory of ground-truth masks (or a corpus root)")->required();
  eval_cmd->add_option("--out", out, "report path; writes <report>.csv and <report>.json")->required();

  auto* stats_cmd = app.add_subcommand("stats", "dataset location/area/contrast statistics");
  stats_cmd->add_option("--data", data, "corpus root")->required();
  stats_cmd->add_option("--out", out, "directory for stats.json and rendered images");

  auto* baseline_cmd = app.add_subcommand("baseline", "location-prior baseline mask");
  baseline_cmd->add_option("--data", data, "training corpus root")->required();
  baseline_cmd->add_option("--out", out, "output mask PNG")->required();
  baseline_cmd->add_option("--size", size, "baseline resolution")->check(CLI::PositiveNumber);
  auto* like_opt = baseline_cmd->add_option("--like", like, "also emit one prediction per mask in this directory");
  baseline_cmd->add_option("--pred-out", pred_out, "directory for the emitted predictions")->needs(like_opt);

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus");
  synth_cmd->add_option("--out", out, "corpus root to create")->required();
  synth_cmd->add_option("--n", n, "number of pairs")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", seed, "generator seed");
  synth_cmd->add_option("--size", synth_size, "image side length")->check(CLI::Range(8, 4096));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  torch::set_num_threads(threads);
  try {
    if (*train_cmd) return run_train(config, data, out);
    if (*predict_cmd) return run_predict(ckpt, images, out);
    if (*eval_cmd) return run_eval(pred, gt, out);
    if (*stats_cmd) return run_stats(data, out);
    if (*baseline_cmd) {
      if (!like.empty() && pred_out.empty()) throw UsageError("--like requires --pred-out");
      return run_baseline(data, out, size, like, pred_out);
    }
    if (*synth_cmd) return run_synth(out, n, seed, synth_size);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kUsage);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kNumerical);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
  return static_cast<int>(ExitCode::kUsage);
}
