#pragma once

// Training loop, checkpoints, prediction and evaluation drivers.

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pgsnet/config.hpp"
#include "pgsnet/data.hpp"
#include "pgsnet/errors.hpp"
#include "pgsnet/image.hpp"
#include "pgsnet/losses.hpp"
#include "pgsnet/metrics.hpp"
#include "pgsnet/network.hpp"
#include "pgsnet/report.hpp"

namespace pgsnet {

inline constexpr int64_t kCheckpointSchemaVersion = 1;

// base_lr * (1 - iter / max_iter)^power
inline double poly_lr(int64_t iter, int64_t max_iter, double base_lr, double power) {
  detail::require(max_iter > 0, "poly_lr: max_iter must be positive");
  detail::require(iter >= 0 && iter <= max_iter, "poly_lr: iteration " + std::to_string(iter) +
                                                     " outside [0, " + std::to_string(max_iter) + "]");
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

inline double poly_lr(int64_t iter, int64_t max_iter, const TrainConfig& cfg) {
  return poly_lr(iter, max_iter, cfg.base_lr, cfg.power);
}

inline int64_t steps_per_epoch(int64_t corpus_size, int64_t batch_size) {
  return (corpus_size + batch_size - 1) / batch_size;
}

// ---------------------------------------------------------------------------
// Optimizer and training state
// ---------------------------------------------------------------------------

// Weight decay applies to convolution kernels only (4-d parameters); norm
// scales, biases and the FEBF scalars are not decayed.
inline bool is_decayed_parameter(const torch::Tensor& p) { return p.dim() == 4; }

// Momentum SGD over two groups: `decayed` with cfg.weight_decay, `plain` without.
inline std::unique_ptr<torch::optim::SGD> make_sgd(std::vector<torch::Tensor> decayed,
                                                   std::vector<torch::Tensor> plain, const TrainConfig& cfg) {
  auto options = [&](double wd) {
    return std::make_unique<torch::optim::SGDOptions>(
        torch::optim::SGDOptions(cfg.base_lr).momentum(cfg.momentum).weight_decay(wd));
  };
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(std::move(decayed), options(cfg.weight_decay));
  groups.emplace_back(std::move(plain), options(0.0));
  return std::make_unique<torch::optim::SGD>(groups, torch::optim::SGDOptions(cfg.base_lr));
}

inline std::unique_ptr<torch::optim::SGD> make_optimizer(PGSNet& net, const TrainConfig& cfg) {
  std::vector<torch::Tensor> decayed, plain;
  for (auto& p : net->parameters()) (is_decayed_parameter(p) ? decayed : plain).push_back(p);
  return make_sgd(std::move(decayed), std::move(plain), cfg);
}

inline void set_learning_rate(torch::optim::SGD& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
}

struct TrainState {
  TrainConfig config;
  PGSNet net{nullptr};
  std::unique_ptr<torch::optim::SGD> optimizer;
  int64_t iteration = 0;
};

// Parameter initialization is seeded from cfg.seed.
inline TrainState make_train_state(const TrainConfig& cfg) {
  cfg.validate();
  torch::manual_seed(cfg.seed);
  TrainState s;
  s.config = cfg;
  s.net = PGSNet(cfg.network);
  s.optimizer = make_optimizer(s.net, cfg);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

// Archive layout: schema_version (int), config (flat text), iteration (int),
// model/<parameter and buffer names>, optimizer/<momentum buffers>.
inline void save_checkpoint(const std::filesystem::path& path, const TrainState& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  archive.write("schema_version", c10::IValue(kCheckpointSchemaVersion));
  archive.write("config", c10::IValue(to_text(s.config)));
  archive.write("iteration", c10::IValue(s.iteration));
  torch::serialize::OutputArchive model, optim;
  s.net->save(model);
  s.optimizer->save(optim);
  archive.write("model", model);
  archive.write("optimizer", optim);
  archive.save_to(path.string());
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw DataError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  c10::IValue version, config, iteration;
  if (!archive.try_read("schema_version", version) || !archive.try_read("config", config) ||
      !archive.try_read("iteration", iteration))
    throw DataError("checkpoint " + path.string() + " is missing required entries");
  if (!version.isInt() || version.toInt() != kCheckpointSchemaVersion)
    throw DataError("checkpoint " + path.string() + " has unsupported schema version");
  TrainConfig cfg;
  try {
    cfg = parse_config(config.toStringRef());
  } catch (const UsageError& e) {
    throw DataError("checkpoint " + path.string() + " carries an invalid config: " + e.what());
  }
  TrainState s;
  s.config = cfg;
  s.net = PGSNet(cfg.network);
  s.optimizer = make_optimizer(s.net, cfg);
  s.iteration = iteration.toInt();
  try {
    torch::serialize::InputArchive model, optim;
    archive.read("model", model);
    archive.read("optimizer", optim);
    s.net->load(model);
    s.optimizer->load(optim);
  } catch (const c10::Error& e) {
    throw DataError("checkpoint " + path.string() + " does not match its config: " + e.what_without_backtrace());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct LogRow {
  int64_t step = 0;
  int64_t epoch = 0;
  double lr = 0.0;
  LossReport loss;
};

inline std::string log_csv_header() {
  return "step,epoch,lr,total,l1_bce,l1_iou,l1_hybrid,l2_bce,l2_iou,l2_hybrid,l3_bce,l3_iou,l3_hybrid\n";
}

inline std::string log_csv_row(const LogRow& r) {
  std::ostringstream os;
  os << std::setprecision(10) << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss.total;
  for (const auto& l : r.loss.per_level) os << ',' << l.bce << ',' << l.iou << ',' << l.hybrid;
  os << '\n';
  return os.str();
}

struct TrainOptions {
  // Where to drop the diagnostic snapshot when training aborts; empty = nowhere.
  std::filesystem::path snapshot_dir;
  std::function<void(const LogRow&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<LogRow> log;
};

struct Batch {
  std::vector<std::string> ids;
  torch::Tensor images;  // B x 3 x S x S
  torch::Tensor masks;   // B x 1 x S x S
};

namespace detail {

inline std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = sample_rng(seed, "__epoch__", static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

inline void abort_non_finite(const std::string& what, int64_t step, const Batch& batch,
                             const TrainOptions& options) {
  std::ostringstream os;
  os << what << " at step " << step << " (samples:";
  for (const auto& id : batch.ids) os << ' ' << id;
  os << ')';
  if (!options.snapshot_dir.empty()) {
    std::filesystem::create_directories(options.snapshot_dir);
    const auto file = options.snapshot_dir / ("nonfinite_step_" + std::to_string(step) + ".pt");
    torch::save(std::vector<torch::Tensor>{batch.images, batch.masks}, file.string());
    os << "; inputs saved to " << file.string();
  }
  throw NumericalError(os.str());
}

}  // namespace detail

// One minibatch: a shared scale drawn per step, a flip drawn per sample.
inline Batch make_batch(const std::vector<SamplePair>& corpus, const std::vector<std::size_t>& indices,
                        const TrainConfig& cfg, int64_t epoch, int64_t step) {
  auto scale_rng = sample_rng(cfg.seed, "__batch__", static_cast<std::uint64_t>(step));
  auto aug = cfg.augment;
  aug.scales = {draw_scale(scale_rng, cfg.augment)};
  aug.use_multiscale = true;
  Batch b;
  std::vector<torch::Tensor> images, masks;
  for (auto i : indices) {
    auto rng = sample_rng(cfg.seed, corpus[i].id, static_cast<std::uint64_t>(epoch));
    auto s = augment_train(corpus[i], rng, aug);
    b.ids.push_back(s.id);
    images.push_back(s.image);
    masks.push_back(s.mask);
  }
  b.images = torch::stack(images);
  b.masks = torch::stack(masks);
  return b;
}

// SGD with momentum on the deeply supervised hybrid loss, poly schedule over
// max_epochs * steps_per_epoch iterations. Reproducible from cfg.seed.
inline TrainResult train(const std::vector<SamplePair>& corpus, const TrainConfig& cfg,
                         const TrainOptions& options = {}) {
  if (corpus.empty()) throw UsageError("train: empty corpus");
  TrainResult result{make_train_state(cfg), {}};
  auto& state = result.state;
  auto& net = state.net;
  net->train();

  const auto per_epoch = steps_per_epoch(static_cast<int64_t>(corpus.size()), cfg.batch_size);
  const auto max_iter = per_epoch * cfg.max_epochs;
  for (int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto order = detail::shuffled_order(corpus.size(), cfg.seed, epoch);
    for (int64_t k = 0; k < per_epoch; ++k) {
      const auto begin = static_cast<std::size_t>(k * cfg.batch_size);
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> indices(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                       order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto step = state.iteration;
      auto batch = make_batch(corpus, indices, cfg, epoch, step);

      const double lr = poly_lr(step, max_iter, cfg);
      set_learning_rate(*state.optimizer, lr);
      if (!torch::isfinite(batch.images).all().item<bool>())
        detail::abort_non_finite("non-finite input", step, batch, options);
      state.optimizer->zero_grad();
      auto out = net->forward(batch.images);
      auto loss = overall_loss_from_logits(out.level_logits, batch.masks, cfg.loss);
      if (!std::isfinite(loss.total)) detail::abort_non_finite("non-finite loss", step, batch, options);
      loss.total_tensor.backward();
      for (const auto& p : net->parameters()) {
        if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>())
          detail::abort_non_finite("non-finite gradient", step, batch, options);
      }
      state.optimizer->step();
      ++state.iteration;

      LogRow row{step, epoch, lr, loss};
      row.loss.total_tensor = torch::Tensor();
      if (options.on_step) options.on_step(row);
      result.log.push_back(std::move(row));
    }
  }
  net->eval();
  return result;
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

// Eval-mode probability map for a 3 x H x W image at its original size.
inline Map predict_image(PGSNet& net, const torch::Tensor& image, int64_t input_size) {
  torch::NoGradGuard no_grad;
  net->eval();
  auto in = prepare_inference(image, input_size);
  auto out = net->forward(in.tensor);
  return map_from_tensor(in.restore(out.final_probability).clamp(0, 1));
}

// Writes <out_dir>/<stem>.png per input image; returns the written paths.
inline std::vector<std::filesystem::path> predict(const std::filesystem::path& checkpoint,
                                                  const std::vector<std::filesystem::path>& images,
                                                  const std::filesystem::path& out_dir) {
  auto state = load_checkpoint(checkpoint);
  std::vector<std::filesystem::path> written;
  for (const auto& path : images) {
    auto image = read_image(path);
    auto prob = predict_image(state.net, image, state.config.augment.base_size);
    auto target = out_dir / (path.stem().string() + ".png");
    write_probability_png(target, prob);
    written.push_back(target);
  }
  return written;
}

// Pairs <pred_dir>/<id>.png with <gt_dir>/<id>.png (or <gt_dir>/mask/<id>.png
// for a corpus root) and evaluates them in id order.
inline MetricReport evaluate_directories(const std::filesystem::path& pred_dir, std::filesystem::path gt_dir) {
  if (std::filesystem::is_directory(gt_dir / "mask")) gt_dir /= "mask";
  const auto preds = detail::list_by_stem(pred_dir, {".png"});
  const auto gts = detail::list_by_stem(gt_dir, {".png"});
  std::vector<std::string> unmatched;
  for (const auto& [id, p] : preds)
    if (!gts.count(id)) unmatched.push_back(p.string());
  for (const auto& [id, p] : gts)
    if (!preds.count(id)) unmatched.push_back(p.string());
  if (!unmatched.empty()) {
    std::string msg = "unmatched files:";
    for (const auto& u : unmatched) msg += "\n  " + u;
    throw DataError(msg);
  }
  std::vector<ImageMetrics> rows;
  for (const auto& [id, pred_path] : preds) {
    auto pred = read_probability_map(pred_path);
    auto gt = map_from_tensor(read_mask(gts.at(id)));
    if (!pred.same_shape(gt)) throw DataError("size mismatch between " + pred_path.string() + " and its mask");
    rows.push_back(evaluate_image(pred, gt, id));
  }
  return summarize(std::move(rows));
}

inline MetricReport eval_command(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                 const std::filesystem::path& out) {
  auto report = evaluate_directories(pred_dir, gt_dir);
  write_report(out, report);
  return report;
}

}  // namespace pgsnet
