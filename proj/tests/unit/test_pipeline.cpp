#include <gtest/gtest.h>

#include <fstream>

#include "pgsnet/pipeline.hpp"
#include "pgsnet/report.hpp"

using namespace pgsnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("pgsnet_pipeline_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small network and input so a handful of steps run in seconds.
TrainConfig small_config() {
  TrainConfig cfg;
  cfg.base_lr = 0.01;
  cfg.max_epochs = 2;
  cfg.seed = 3;
  cfg.augment.base_size = 64;
  cfg.augment.use_multiscale = false;
  cfg.network.backbone.stage_channels = {8, 16, 16, 32};
  cfg.network.de_out_channels = {8, 16, 16, 32};
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void expect_same_state(PGSNet& a, PGSNet& b) {
  auto pa = a->named_parameters(), pb = b->named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (const auto& p : pa) EXPECT_TRUE(torch::equal(p.value(), pb[p.key()])) << p.key();
  auto ba = a->named_buffers(), bb = b->named_buffers();
  ASSERT_EQ(ba.size(), bb.size());
  for (const auto& p : ba) EXPECT_TRUE(torch::equal(p.value(), bb[p.key()])) << p.key();
}

}  // namespace

TEST(PolyLr, EndpointsAndMidpoint) {
  EXPECT_EQ(poly_lr(0, 100, 0.001, 0.9), 0.001);
  EXPECT_EQ(poly_lr(100, 100, 0.001, 0.9), 0.0);
  EXPECT_NEAR(poly_lr(50, 100, 0.001, 0.9), 0.0005358867312681466, 1e-12);
  EXPECT_EQ(steps_per_epoch(5, 2), 3);
  EXPECT_EQ(steps_per_epoch(4, 2), 2);
}

TEST(PolyLr, StrictlyDecreasingAndNonNegative) {
  double prev = poly_lr(0, 37, 0.01, 0.9);
  for (int64_t i = 1; i <= 37; ++i) {
    const double lr = poly_lr(i, 37, 0.01, 0.9);
    EXPECT_LT(lr, prev);
    EXPECT_GE(lr, 0.0);
    prev = lr;
  }
}

TEST(PolyLr, RangeErrors) {
  EXPECT_THROW(poly_lr(0, 0, 0.001, 0.9), UsageError);
  EXPECT_THROW(poly_lr(-1, 10, 0.001, 0.9), UsageError);
  EXPECT_THROW(poly_lr(11, 10, 0.001, 0.9), UsageError);
}

TEST(Optimizer, MomentumRecurrenceWithWeightDecay) {
  // f(p) = 0.5 * a * p^2 per element, so grad = a * p.
  TrainConfig cfg;
  cfg.base_lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.01;
  auto w = torch::full({1, 1, 1, 1}, 2.0, torch::dtype(torch::kDouble).requires_grad(true));
  auto b = torch::full({1}, -1.5, torch::dtype(torch::kDouble).requires_grad(true));
  auto opt = make_sgd({w}, {b}, cfg);
  const double a = 3.0;
  double pw = 2.0, pb = -1.5, vw = 0.0, vb = 0.0;
  for (int step = 0; step < 4; ++step) {
    const double lr = poly_lr(step, 4, cfg);
    set_learning_rate(*opt, lr);
    opt->zero_grad();
    (0.5 * a * (w * w).sum() + 0.5 * a * (b * b).sum()).backward();
    opt->step();
    const double gw = a * pw + cfg.weight_decay * pw, gb = a * pb;
    vw = step == 0 ? gw : cfg.momentum * vw + gw;
    vb = step == 0 ? gb : cfg.momentum * vb + gb;
    pw -= lr * vw;
    pb -= lr * vb;
    EXPECT_NEAR(w.item<double>(), pw, 1e-12) << step;
    EXPECT_NEAR(b.item<double>(), pb, 1e-12) << step;
  }
}

TEST(Optimizer, WeightDecayOnlyOnConvolutionWeights) {
  PGSNet net(small_config().network);
  auto cfg = small_config();
  auto opt = make_optimizer(net, cfg);
  ASSERT_EQ(opt->param_groups().size(), 2u);
  const auto& decayed = opt->param_groups()[0];
  const auto& plain = opt->param_groups()[1];
  EXPECT_EQ(static_cast<const torch::optim::SGDOptions&>(decayed.options()).weight_decay(), cfg.weight_decay);
  EXPECT_EQ(static_cast<const torch::optim::SGDOptions&>(plain.options()).weight_decay(), 0.0);
  for (const auto& p : decayed.params()) EXPECT_EQ(p.dim(), 4);
  for (const auto& p : plain.params()) EXPECT_NE(p.dim(), 4);
  EXPECT_EQ(decayed.params().size() + plain.params().size(), net->parameters().size());
  EXPECT_FALSE(plain.params().empty());
}

TEST(Config, TextRoundTrip) {
  auto cfg = small_config();
  cfg.loss.use_iou = false;
  cfg.network.fusion = FusionStrategy::kConcat;
  cfg.augment.scales = {0.5, 1.0};
  auto back = parse_config(to_text(cfg));
  EXPECT_EQ(to_text(back), to_text(cfg));
  EXPECT_EQ(back.base_lr, cfg.base_lr);
  EXPECT_EQ(back.network.backbone.stage_channels, cfg.network.backbone.stage_channels);
  EXPECT_FALSE(back.loss.use_iou);
  EXPECT_EQ(back.augment.scales, cfg.augment.scales);
}

TEST(Config, ParsingRulesAndErrors) {
  auto cfg = parse_config("# comment\n\nbase_lr = 0.05\nstage_channels = 4, 8, 8, 16\n");
  EXPECT_EQ(cfg.base_lr, 0.05);
  EXPECT_EQ(cfg.network.de_out_channels, (std::array<int64_t, 4>{4, 8, 8, 16}));
  EXPECT_THROW(parse_config("learning_rate = 0.1\n"), UsageError);
  EXPECT_THROW(parse_config("base_lr = fast\n"), UsageError);
  EXPECT_THROW(parse_config("base_lr\n"), UsageError);
  EXPECT_THROW(parse_config("use_iou = maybe\n"), UsageError);
  EXPECT_THROW(parse_config("input_size = 100\n"), UsageError);
  EXPECT_THROW(parse_config("stage_channels = 1, 2\n"), UsageError);
  EXPECT_THROW(parse_config("fusion = sum\n"), UsageError);
  EXPECT_THROW(load_config("/nonexistent/config.txt"), UsageError);
}

TEST(Checkpoint, BitExactRoundTrip) {
  TempDir dir("ckpt");
  auto corpus = make_synthetic_corpus(2, 1);
  auto cfg = small_config();
  cfg.max_epochs = 1;
  auto result = train(corpus, cfg);
  save_checkpoint(dir.path / "model.pt", result.state);
  auto loaded = load_checkpoint(dir.path / "model.pt");
  EXPECT_EQ(loaded.iteration, result.state.iteration);
  EXPECT_EQ(to_text(loaded.config), to_text(cfg));
  expect_same_state(loaded.net, result.state.net);
  auto image = corpus[0].image;
  auto a = predict_image(result.state.net, image, 64), b = predict_image(loaded.net, image, 64);
  EXPECT_EQ(a.values, b.values);
}

TEST(Checkpoint, RejectsForeignOrMismatchedArchives) {
  TempDir dir("badckpt");
  EXPECT_THROW(load_checkpoint(dir.path / "missing.pt"), DataError);
  std::ofstream(dir.path / "junk.pt") << "junk";
  EXPECT_THROW(load_checkpoint(dir.path / "junk.pt"), DataError);

  auto state = make_train_state(small_config());
  torch::serialize::OutputArchive archive;
  archive.write("schema_version", c10::IValue(kCheckpointSchemaVersion + 1));
  archive.write("config", c10::IValue(to_text(state.config)));
  archive.write("iteration", c10::IValue(int64_t{0}));
  archive.save_to((dir.path / "future.pt").string());
  EXPECT_THROW(load_checkpoint(dir.path / "future.pt"), DataError);
}

TEST(Train, DeterministicForFixedSeed) {
  auto corpus = make_synthetic_corpus(3, 2);
  auto cfg = small_config();
  cfg.augment.use_multiscale = true;
  cfg.augment.scales = {1.0, 1.5};
  auto a = train(corpus, cfg), b = train(corpus, cfg);
  ASSERT_EQ(a.log.size(), 4u);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss.total, b.log[i].loss.total) << i;
  expect_same_state(a.state.net, b.state.net);
  EXPECT_EQ(a.state.iteration, 4);
  EXPECT_EQ(a.log.back().lr, poly_lr(3, 4, cfg));
}

TEST(Train, WithoutIouTermLossIsFiniteAndDecreases) {
  auto corpus = make_synthetic_corpus(2, 4);
  auto cfg = small_config();
  cfg.loss.use_iou = false;
  cfg.max_epochs = 20;
  cfg.batch_size = 2;
  auto result = train(corpus, cfg);
  ASSERT_EQ(result.log.size(), 20u);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 5; ++i) first += result.log[i].loss.total;
  for (std::size_t i = 15; i < 20; ++i) last += result.log[i].loss.total;
  for (const auto& row : result.log) {
    EXPECT_TRUE(std::isfinite(row.loss.total));
    for (const auto& l : row.loss.per_level) EXPECT_EQ(l.hybrid, l.bce);
  }
  EXPECT_LT(last, first);
}

TEST(Train, NonFiniteInputAbortsWithSnapshot) {
  TempDir dir("nan");
  auto corpus = make_synthetic_corpus(2, 6);
  corpus[1].image[0][5][5] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = small_config();
  cfg.augment.flip_probability = 0.0;
  TrainOptions options;
  options.snapshot_dir = dir.path;
  try {
    train(corpus, cfg, options);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("synth_001"), std::string::npos) << e.what();
  }
  bool snapshot = false;
  for (const auto& entry : fs::directory_iterator(dir.path)) snapshot |= entry.path().extension() == ".pt";
  EXPECT_TRUE(snapshot);
}

TEST(Train, StepCallbackAndLogFormat) {
  auto corpus = make_synthetic_corpus(2, 8);
  auto cfg = small_config();
  cfg.max_epochs = 1;
  TrainOptions options;
  std::vector<int64_t> steps;
  options.on_step = [&](const LogRow& r) { steps.push_back(r.step); };
  auto result = train(corpus, cfg, options);
  EXPECT_EQ(steps, (std::vector<int64_t>{0}));
  auto row = log_csv_row(result.log[0]);
  const auto header = log_csv_header();
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
  EXPECT_THROW(train({}, cfg), UsageError);
}

TEST(Predict, WritesOriginalSizeAndIsRepeatable) {
  TempDir dir("predict");
  auto state = make_train_state(small_config());
  save_checkpoint(dir.path / "model.pt", state);
  auto image = torch::rand({3, 400, 500});
  write_image(dir.path / "in" / "wide.png", image);
  auto first = predict(dir.path / "model.pt", {dir.path / "in" / "wide.png"}, dir.path / "out1");
  auto second = predict(dir.path / "model.pt", {dir.path / "in" / "wide.png"}, dir.path / "out2");
  ASSERT_EQ(first.size(), 1u);
  auto map = read_probability_map(first[0]);
  EXPECT_EQ(map.height, 400);
  EXPECT_EQ(map.width, 500);
  EXPECT_EQ(read_file(first[0]), read_file(second[0]));
}

TEST(Eval, GroundTruthAsPredictionIsPerfect) {
  TempDir dir("eval");
  auto corpus = make_synthetic_corpus(4, 9);
  write_corpus(dir.path / "data", corpus);
  for (const auto& s : corpus) write_mask(dir.path / "pred" / (s.id + ".png"), s.mask);
  auto report = eval_command(dir.path / "pred", dir.path / "data", dir.path / "report");
  EXPECT_EQ(report.mean_iou, 100.0);
  EXPECT_NEAR(report.mean_wf, 1.0, 1e-12);
  EXPECT_EQ(report.mean_mae, 0.0);
  EXPECT_EQ(report.mean_ber, 0.0);
  EXPECT_TRUE(fs::exists(dir.path / "report.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "report.json"));
  auto js = nlohmann::json::parse(read_file(dir.path / "report.json"));
  EXPECT_EQ(js["summary"]["iou"].get<double>(), 100.0);
}

TEST(Eval, ReportIndependentOfInputOrder) {
  std::mt19937 rng(5);
  auto corpus = make_synthetic_corpus(5, 10);
  std::vector<ImageMetrics> rows;
  for (const auto& s : corpus) {
    auto gt = map_from_tensor(s.mask);
    auto pred = gt;
    for (auto& v : pred.values) v = std::clamp(v + std::uniform_real_distribution<double>(-0.6, 0.6)(rng), 0.0, 1.0);
    rows.push_back(evaluate_image(pred, gt, s.id));
  }
  auto shuffled = rows;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_EQ(to_csv(summarize(rows)), to_csv(summarize(shuffled)));
  EXPECT_EQ(to_json(summarize(rows)).dump(), to_json(summarize(shuffled)).dump());
}

TEST(Eval, UnmatchedFilesAreReported) {
  TempDir dir("unmatched");
  auto mask = torch::zeros({1, 8, 8});
  write_mask(dir.path / "gt" / "a.png", mask);
  write_mask(dir.path / "gt" / "b.png", mask);
  write_mask(dir.path / "pred" / "a.png", mask);
  write_mask(dir.path / "pred" / "c.png", mask);
  try {
    evaluate_directories(dir.path / "pred", dir.path / "gt");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("b.png"), std::string::npos);
    EXPECT_NE(msg.find("c.png"), std::string::npos);
  }
}
