#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "advpose/harness.hpp"
#include "fixtures.hpp"

using namespace advpose;

namespace {

ExperimentConfig tiny_experiment(RotationMode mode) {
  ExperimentConfig c;
  c.scene = fixtures::tiny_scene(mode);
  c.train = fixtures::tiny_train(mode);
  c.refine.max_iters = 5;
  c.sweep = {{1e-3, 1e-2}, {0, 3}};
  c.bench = {{0, 2, 4}, 4, 1};
  c.ablate.feature_dims = {10, 20};
  return c;
}

std::string error_of(const json& j) {
  try {
    experiment_config_from_json(j);
  } catch (const InvalidConfig& e) {
    return e.what();
  }
  return "";
}

json minimal() {
  return json::parse(R"({"scene": {"n_landmarks": 16, "n_frames": 40}, "train": {"total_epochs": 3}})");
}

}  // namespace

TEST(Config, JsonRoundtrip) {
  for (RotationMode mode : {RotationMode::Quaternion, RotationMode::LogQuaternion}) {
    ExperimentConfig c = tiny_experiment(mode);
    c.scene.extent = Vec3(1.0, 2.0, 3.0);
    c.scene.projection_scale = 0.25;
    c.seeds = {4, 5, 6};
    c.workers = 2;
    c.refine.eq7_literal = true;
    EXPECT_EQ(experiment_config_from_json(to_json(c)), c);
    // Through text too, at full precision.
    EXPECT_EQ(experiment_config_from_json(json::parse(to_json(c).dump())), c);
  }
}

TEST(Config, DefaultsFillOptionalFields) {
  const ExperimentConfig c = experiment_config_from_json(minimal());
  EXPECT_EQ(c.train.total_epochs, 3);
  EXPECT_EQ(c.train.warmup_epochs, 0);  // 10% of 3, rounded down
  EXPECT_EQ(c.scene.feature_dim, 70u);
  json j = minimal();
  j["train"]["mode"] = "logq";
  EXPECT_EQ(experiment_config_from_json(j).scene.feature_dim, 60u);
}

TEST(Config, UnknownKeysNameTheirPath) {
  json j = minimal();
  j["scene"]["landmarks"] = 3;
  EXPECT_NE(error_of(j).find("scene.landmarks"), std::string::npos) << error_of(j);
  j = minimal();
  j["typo"] = 1;
  EXPECT_NE(error_of(j).find("typo"), std::string::npos);
  j = minimal();
  j["bench"] = {{"iters", {1, 2}}};
  EXPECT_NE(error_of(j).find("bench.iters"), std::string::npos);
}

TEST(Config, MissingAndInvalidFields) {
  json j = minimal();
  j["train"].erase("total_epochs");
  EXPECT_NE(error_of(j).find("train.total_epochs"), std::string::npos);
  j = minimal();
  j["scene"].erase("n_landmarks");
  EXPECT_NE(error_of(j).find("scene.n_landmarks"), std::string::npos);
  j = minimal();
  j["scene"]["n_landmarks"] = "many";
  EXPECT_NE(error_of(j).find("scene.n_landmarks"), std::string::npos);
  j = minimal();
  j["scene"]["camera_region"] = 1.5;
  EXPECT_NE(error_of(j).find("scene.camera_region"), std::string::npos);
  j = minimal();
  j["train"]["mode"] = "euler";
  EXPECT_FALSE(error_of(j).empty());
  j = minimal();
  j["refine"] = {{"step_size", -1.0}};
  EXPECT_NE(error_of(j).find("refine.step_size"), std::string::npos);
  j = minimal();
  j["ablate"] = {{"feature_dims", {4}}};
  EXPECT_NE(error_of(j).find("ablate.feature_dims"), std::string::npos);
}

TEST(Config, FileErrors) {
  fixtures::TempDir dir("cfg");
  EXPECT_THROW(load_experiment_config(dir / "missing.json"), IoError);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_experiment_config(dir / "bad.json"), InvalidConfig);
  std::ofstream(dir / "ok.json") << minimal().dump();
  EXPECT_EQ(load_experiment_config(dir / "ok.json").train.total_epochs, 3);
}

TEST(Config, SetModeMovesDefaultFeatureWidth) {
  ExperimentConfig c = experiment_config_from_json(minimal());
  set_mode(c, RotationMode::LogQuaternion);
  EXPECT_EQ(c.train.mode, RotationMode::LogQuaternion);
  EXPECT_EQ(c.scene.feature_dim, 60u);
  c.scene.feature_dim = 33;
  set_mode(c, RotationMode::Quaternion);
  EXPECT_EQ(c.scene.feature_dim, 33u);
}

TEST(RunDir, NumberedAndForced) {
  fixtures::TempDir root("runs");
  EXPECT_EQ(make_run_dir(root.path(), "eval", false).filename(), "eval-001");
  EXPECT_EQ(make_run_dir(root.path(), "eval", false).filename(), "eval-002");
  const auto forced = make_run_dir(root.path(), "eval", true);
  EXPECT_EQ(forced.filename(), "eval");
  std::ofstream(forced / "stale.txt") << "x";
  make_run_dir(root.path(), "eval", true);
  EXPECT_FALSE(fs::exists(forced / "stale.txt"));
}

TEST(Harness, HistogramCountsEveryValue) {
  const Histogram h = histogram({0.0, 0.5, 1.0, 2.0, 4.0}, 4);
  ASSERT_EQ(h.edges.size(), 5u);
  EXPECT_EQ(h.edges.back(), 4.0);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 1, 1, 1}));
}

TEST(Harness, LineFit) {
  const LineFit exact = fit_line({0, 1, 2, 3}, {1, 3, 5, 7});
  EXPECT_NEAR(exact.slope, 2.0, 1e-12);
  EXPECT_NEAR(exact.intercept, 1.0, 1e-12);
  EXPECT_NEAR(exact.r_squared, 1.0, 1e-12);
  const LineFit noisy = fit_line({0, 1, 2, 3}, {0, 1, 0, 1});
  EXPECT_LT(noisy.r_squared, 0.5);
}

TEST(Harness, GenerateWritesLoadableDataset) {
  fixtures::TempDir dir("gen");
  std::ostringstream log;
  const auto cfg = tiny_experiment(RotationMode::Quaternion);
  const auto res = cmd_generate(cfg, dir.path(), log);
  EXPECT_EQ(res.n_train, 48u);
  EXPECT_EQ(file_checksum(res.dataset_path), res.checksum);
  const Dataset d = load_dataset_for(cfg, res.dataset_path);
  EXPECT_EQ(d.params, cfg.scene);
  auto other = cfg;
  other.scene.feature_dim = 20;
  EXPECT_THROW(load_dataset_for(other, res.dataset_path), InvalidConfig);
  const json m = json::parse(std::ifstream(dir / "manifest.json"));
  EXPECT_EQ(m.at("n_test").get<std::size_t>(), 12u);
  EXPECT_EQ(m.at("command"), "generate");
}

TEST(Harness, BaseModelFlagEqualsZeroLambdaConfig) {
  fixtures::TempDir a("base"), b("base");
  std::ostringstream log;
  const auto cfg = tiny_experiment(RotationMode::Quaternion);
  const Dataset d = make_dataset(cfg.scene);
  TrainOptions flag;
  flag.base_model = true;
  cmd_train(cfg, d, a.path(), flag, log);
  auto zero = cfg;
  zero.train.lambda = 0.0;
  cmd_train(zero, d, b.path(), {}, log);
  EXPECT_EQ(fixtures::read_bytes(a / "checkpoint.apck"), fixtures::read_bytes(b / "checkpoint.apck"));
}

TEST(Harness, InterruptedTrainingResumesToTheSameModel) {
  for (RotationMode mode : {RotationMode::Quaternion, RotationMode::LogQuaternion}) {
    fixtures::TempDir straight("st"), part("pt"), rest("rs");
    std::ostringstream log;
    const auto cfg = tiny_experiment(mode);
    const Dataset d = make_dataset(cfg.scene);
    cmd_train(cfg, d, straight.path(), {}, log);
    TrainOptions first;
    first.max_epochs = 2;
    cmd_train(cfg, d, part.path(), first, log);
    EXPECT_EQ(load_model(load_checkpoint(part / "checkpoint.apck")).epochs_done, 2);
    TrainOptions second;
    second.resume = part / "checkpoint.apck";
    const auto res = cmd_train(cfg, d, rest.path(), second, log);
    EXPECT_EQ(res.log.size(), 6u);

    const TrainedModel x = load_model(load_checkpoint(straight / "checkpoint.apck"));
    const TrainedModel y = load_model(load_checkpoint(rest / "checkpoint.apck"));
    for (const auto& [name, t] : x.regressor.params()) {
      const auto& u = y.regressor.params().at(name).values;
      for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(u[i], t.values[i], 1e-12);
    }
    std::ifstream in(rest / "train_log.jsonl");
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    EXPECT_EQ(lines, 6u);

    auto wrong = cfg;
    set_mode(wrong, mode == RotationMode::Quaternion ? RotationMode::LogQuaternion : RotationMode::Quaternion);
    EXPECT_THROW(cmd_train(wrong, d, rest.path(), second, log), ModeMismatch);
  }
}

TEST(Harness, EvalSweepBenchWriteTheirOutputs) {
  fixtures::TempDir dir("eval");
  std::ostringstream log;
  const auto cfg = tiny_experiment(RotationMode::LogQuaternion);
  const Dataset d = make_dataset(cfg.scene);
  const auto ours = load_model(train(d, cfg.train).checkpoint);
  auto base_cfg = cfg.train;
  base_cfg.lambda = 0.0;
  const auto base = load_model(train(d, base_cfg).checkpoint);

  const auto ev = cmd_eval(cfg, d, ours, base, true, RotationMode::LogQuaternion, dir.path(), log, 5);
  ASSERT_EQ(ev.columns.size(), 3u);
  EXPECT_EQ(ev.columns[0].name, "Base");
  EXPECT_EQ(ev.columns[2].name, "Ours+Ref");
  for (const char* f : {"errors_ours.csv", "errors_base.csv", "histogram.csv", "summary.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const json summary = json::parse(std::ifstream(dir / "summary.json"));
  EXPECT_NEAR(summary.at("columns")[1].at("median_rot_deg").get<double>(), ev.ours.median_rot_before, 1e-12);
  EXPECT_THROW(cmd_eval(cfg, d, ours, std::nullopt, false, RotationMode::Quaternion, dir.path(), log), ModeMismatch);

  const auto sw = run_sweep(ours.regressor, ours.discriminator, d.test, cfg.refine, cfg.sweep, 1);
  ASSERT_EQ(sw.cells.size(), 4u);
  EXPECT_EQ(sw.cells[0].median_rot, sw.median_rot_before);  // zero iterations
  EXPECT_FALSE(sw.cells[0].unstable);
  EXPECT_EQ(sw.cells[1].mean_iterations, 3.0);

  const auto bench = run_bench(d, ours.regressor, ours.discriminator, cfg.refine, cfg.bench);
  ASSERT_EQ(bench.rows.size(), 3u);
  EXPECT_EQ(bench.rows[0].refine_seconds_per_frame, 0.0);
  EXPECT_GT(bench.rows[2].refine_seconds_per_frame, 0.0);
}

TEST(Harness, AblationRunsOneArmPerWidthPlusPoseOnly) {
  auto cfg = tiny_experiment(RotationMode::Quaternion);
  cfg.train.total_epochs = 3;
  cfg.train.warmup_epochs = 1;
  const Dataset d = make_dataset(cfg.scene);
  const auto rows = run_ablation(cfg, d);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].arm, "d_f=10");
  EXPECT_EQ(rows[2].arm, "no features");
  EXPECT_FALSE(rows[2].use_features);
  EXPECT_EQ(rows[2].feature_dim, d.extractor.feature_dim());
}
