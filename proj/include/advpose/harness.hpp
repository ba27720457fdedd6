#ifndef ADVPOSE_HARNESS_HPP
#define ADVPOSE_HARNESS_HPP

// Experiment runner behind the command-line tool. Every command writes into
// its own run directory: a table on stdout, raw arrays as CSV with a header
// row, and a manifest.json describing the invocation.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "advpose/checkpoint.hpp"
#include "advpose/evaluate.hpp"
#include "advpose/json_fields.hpp"
#include "advpose/refine.hpp"
#include "advpose/scenes.hpp"
#include "advpose/train.hpp"

namespace advpose {

namespace fs = std::filesystem;

struct SweepGrid {
  std::vector<double> step_sizes = {1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  std::vector<int> iterations = {5, 10, 20, 30, 50};

  bool operator==(const SweepGrid&) const = default;
};

struct BenchConfig {
  std::vector<int> iterations = {0, 10, 20, 30, 40, 50};
  std::size_t frames = 32;
  int repeats = 3;

  bool operator==(const BenchConfig&) const = default;
};

struct AblateConfig {
  std::vector<std::size_t> feature_dims = {10, 30, 60, 70, 100};

  bool operator==(const AblateConfig&) const = default;
};

struct ExperimentConfig {
  DatasetParams scene;
  TrainConfig train;
  RefineConfig refine;
  std::string out_dir = "runs";
  std::vector<std::uint64_t> seeds = {0};
  SweepGrid sweep;
  BenchConfig bench;
  AblateConfig ablate;
  unsigned workers = 1;

  bool operator==(const ExperimentConfig&) const = default;
};

inline json to_json(const DatasetParams& p) {
  return json{{"seed", p.seed},
              {"n_landmarks", p.n_landmarks},
              {"extent", {p.extent[0], p.extent[1], p.extent[2]}},
              {"n_frames", p.n_frames},
              {"train_fraction", p.train_fraction},
              {"train_sequences", p.train_sequences},
              {"test_sequences", p.test_sequences},
              {"smoothness_deg", p.smoothness_deg},
              {"max_tilt_deg", p.max_tilt_deg},
              {"translation_step", p.translation_step},
              {"camera_region", p.camera_region},
              {"observation_noise", p.observation_noise},
              {"hidden_dim", p.hidden_dim},
              {"projection_scale", p.projection_scale},
              {"feature_dim", p.feature_dim}};
}

/// `feature_dim` falls back to the per-mode default when absent.
inline DatasetParams dataset_params_from_json(FieldReader r, RotationMode mode) {
  DatasetParams p;
  r.optional("seed", p.seed);
  r.required("n_landmarks", p.n_landmarks);
  std::vector<double> extent;
  if (r.optional("extent", extent)) {
    if (extent.size() != 3) throw InvalidConfig(r.field("extent"), "expected 3 entries");
    p.extent = Vec3(extent[0], extent[1], extent[2]);
  }
  r.required("n_frames", p.n_frames);
  r.optional("train_fraction", p.train_fraction);
  r.optional("train_sequences", p.train_sequences);
  r.optional("test_sequences", p.test_sequences);
  r.optional("smoothness_deg", p.smoothness_deg);
  r.optional("max_tilt_deg", p.max_tilt_deg);
  r.optional("translation_step", p.translation_step);
  r.optional("camera_region", p.camera_region);
  r.optional("observation_noise", p.observation_noise);
  r.optional("hidden_dim", p.hidden_dim);
  r.optional("projection_scale", p.projection_scale);
  p.feature_dim = default_feature_dim(mode);
  r.optional("feature_dim", p.feature_dim);
  r.finish();

  if (p.n_landmarks < 8) throw InvalidConfig(r.field("n_landmarks"), "need at least 8 landmarks");
  if (p.n_frames < 2) throw InvalidConfig(r.field("n_frames"), "need at least 2 frames");
  if (!(p.extent.array() > 0.0).all()) throw InvalidConfig(r.field("extent"), "entries must be > 0");
  if (!(p.train_fraction > 0.0 && p.train_fraction < 1.0)) {
    throw InvalidConfig(r.field("train_fraction"), "must lie strictly between 0 and 1");
  }
  if (p.train_sequences < 1) throw InvalidConfig(r.field("train_sequences"), "must be >= 1");
  if (p.test_sequences < 1) throw InvalidConfig(r.field("test_sequences"), "must be >= 1");
  if (!(p.smoothness_deg >= 0.0)) throw InvalidConfig(r.field("smoothness_deg"), "must be >= 0");
  if (!(p.max_tilt_deg >= 0.0)) throw InvalidConfig(r.field("max_tilt_deg"), "must be >= 0");
  if (!(p.translation_step >= 0.0)) throw InvalidConfig(r.field("translation_step"), "must be >= 0");
  if (!(p.camera_region > 0.0 && p.camera_region <= 1.0)) {
    throw InvalidConfig(r.field("camera_region"), "must lie in (0, 1]");
  }
  if (!(p.observation_noise >= 0.0)) throw InvalidConfig(r.field("observation_noise"), "must be >= 0");
  if (p.hidden_dim < 1) throw InvalidConfig(r.field("hidden_dim"), "must be >= 1");
  if (!(p.projection_scale > 0.0)) throw InvalidConfig(r.field("projection_scale"), "must be > 0");
  if (p.feature_dim < pose_width(mode)) {
    throw InvalidConfig(r.field("feature_dim"), "must be at least the pose width");
  }
  return p;
}

inline json to_json(const ExperimentConfig& c) {
  return json{{"scene", to_json(c.scene)},
              {"train", to_json(c.train)},
              {"refine", to_json(c.refine)},
              {"out_dir", c.out_dir},
              {"seeds", c.seeds},
              {"sweep", {{"step_sizes", c.sweep.step_sizes}, {"iterations", c.sweep.iterations}}},
              {"bench",
               {{"iterations", c.bench.iterations}, {"frames", c.bench.frames}, {"repeats", c.bench.repeats}}},
              {"ablate", {{"feature_dims", c.ablate.feature_dims}}},
              {"workers", c.workers}};
}

/// Strict parse of a whole experiment file. Required: scene.n_landmarks,
/// scene.n_frames, train.total_epochs. Unknown keys are rejected with their
/// dotted path.
inline ExperimentConfig experiment_config_from_json(const json& j) {
  FieldReader r(j, "");
  ExperimentConfig c;
  if (!r.has("train")) throw InvalidConfig("train", "required field is missing");
  if (!r.has("scene")) throw InvalidConfig("scene", "required field is missing");
  c.train = train_config_from_json(r.child("train"));
  c.scene = dataset_params_from_json(r.child("scene"), c.train.mode);
  if (r.has("refine")) c.refine = refine_config_from_json(r.child("refine"));
  r.optional("out_dir", c.out_dir);
  r.optional("seeds", c.seeds);
  if (c.seeds.empty()) throw InvalidConfig("seeds", "need at least one seed");
  if (r.has("sweep")) {
    FieldReader s = r.child("sweep");
    s.optional("step_sizes", c.sweep.step_sizes);
    s.optional("iterations", c.sweep.iterations);
    s.finish();
    if (c.sweep.step_sizes.empty()) throw InvalidConfig("sweep.step_sizes", "must not be empty");
    if (c.sweep.iterations.empty()) throw InvalidConfig("sweep.iterations", "must not be empty");
    for (double l : c.sweep.step_sizes) {
      if (!(l > 0.0)) throw InvalidConfig("sweep.step_sizes", "entries must be > 0");
    }
    for (int n : c.sweep.iterations) {
      if (n < 0) throw InvalidConfig("sweep.iterations", "entries must be >= 0");
    }
  }
  if (r.has("bench")) {
    FieldReader b = r.child("bench");
    b.optional("iterations", c.bench.iterations);
    b.optional("frames", c.bench.frames);
    b.optional("repeats", c.bench.repeats);
    b.finish();
    if (c.bench.iterations.size() < 2) throw InvalidConfig("bench.iterations", "need at least two counts");
    if (c.bench.frames < 1) throw InvalidConfig("bench.frames", "must be >= 1");
    if (c.bench.repeats < 1) throw InvalidConfig("bench.repeats", "must be >= 1");
  }
  if (r.has("ablate")) {
    FieldReader a = r.child("ablate");
    a.optional("feature_dims", c.ablate.feature_dims);
    a.finish();
    if (c.ablate.feature_dims.empty()) throw InvalidConfig("ablate.feature_dims", "must not be empty");
    for (std::size_t d : c.ablate.feature_dims) {
      if (d < pose_width(c.train.mode)) throw InvalidConfig("ablate.feature_dims", "entries must be >= the pose width");
    }
  }
  r.optional("workers", c.workers);
  if (c.workers < 1) throw InvalidConfig("workers", "must be >= 1");
  r.finish();
  return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidConfig("<file>", std::string("malformed JSON: ") + e.what());
  }
  return experiment_config_from_json(j);
}

/// Switches the parameterization and moves the feature width along with it
/// when it still holds the previous mode's default.
inline void set_mode(ExperimentConfig& c, RotationMode mode) {
  if (c.scene.feature_dim == default_feature_dim(c.train.mode)) c.scene.feature_dim = default_feature_dim(mode);
  c.train.mode = mode;
}

// ---------------------------------------------------------------------------
// Output plumbing

/// Without `force`, picks the first unused `<root>/<name>-NNN`; with `force`,
/// clears and reuses `<root>/<name>`.
inline fs::path make_run_dir(const fs::path& root, const std::string& name, bool force) {
  std::error_code ec;
  fs::path dir;
  if (force) {
    dir = root / name;
    fs::remove_all(dir, ec);
    if (ec) throw IoError("cannot clear '" + dir.string() + "': " + ec.message());
  } else {
    for (int i = 1;; ++i) {
      std::ostringstream leaf;
      leaf << name << '-' << std::setw(3) << std::setfill('0') << i;
      dir = root / leaf.str();
      if (!fs::exists(dir)) break;
    }
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::setprecision(17);
  return out;
}

inline void write_json(const fs::path& path, const json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

/// CPU model name and logical core count.
inline std::string hardware_string() {
  std::string model = "unknown cpu";
  std::ifstream cpu("/proc/cpuinfo");
  for (std::string line; std::getline(cpu, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " logical cores";
}

inline json manifest(const std::string& command, const ExperimentConfig& cfg, json extra) {
  json m = {{"command", command}, {"timestamp", utc_timestamp()}, {"hardware", hardware_string()},
            {"config", to_json(cfg)}};
  m.update(extra);
  return m;
}

/// Counts per bin over [0, max]; bin edges follow the largest value.
struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};

inline Histogram histogram(const std::vector<double>& values, std::size_t bins) {
  Histogram h;
  const double top = values.empty() ? 1.0 : std::max(*std::max_element(values.begin(), values.end()), 1e-12);
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(top * static_cast<double>(i) / static_cast<double>(bins));
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(v / top * static_cast<double>(bins));
    h.counts[std::min(b, bins - 1)] += 1;
  }
  return h;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateResult {
  fs::path dataset_path;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::uint32_t checksum = 0;
};

inline std::uint32_t file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return diff::crc32_bytes(0, bytes.data(), bytes.size());
}

inline GenerateResult cmd_generate(const ExperimentConfig& cfg, const fs::path& run_dir, std::ostream& log) {
  const Dataset d = make_dataset(cfg.scene);
  GenerateResult res;
  res.dataset_path = run_dir / "dataset.apds";
  save_dataset(d, res.dataset_path);
  res.n_train = d.train.size();
  res.n_test = d.test.size();
  res.checksum = file_checksum(res.dataset_path);
  write_json(run_dir / "manifest.json",
             manifest("generate", cfg,
                      {{"dataset", res.dataset_path.filename().string()},
                       {"scene", to_json(cfg.scene)},
                       {"n_train", res.n_train},
                       {"n_test", res.n_test},
                       {"file_crc32", res.checksum}}));
  log << "dataset " << res.dataset_path.string() << ": " << res.n_train << " train / " << res.n_test
      << " test frames, crc32 " << res.checksum << '\n';
  return res;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  bool base_model = false;
  std::optional<fs::path> resume;
  /// Stop after this many epochs in this invocation (simulates interruption).
  std::optional<int> max_epochs;
};

struct TrainCommandResult {
  fs::path checkpoint_path;
  fs::path log_path;
  std::vector<EpochLog> log;
};

inline Dataset load_dataset_for(const ExperimentConfig& cfg, const fs::path& path) {
  Dataset d = load_dataset(path);
  if (d.params.feature_dim != cfg.scene.feature_dim) {
    throw InvalidConfig("scene.feature_dim", "dataset has " + std::to_string(d.params.feature_dim) +
                                                 " features, config asks for " +
                                                 std::to_string(cfg.scene.feature_dim));
  }
  return d;
}

inline void write_train_log(const fs::path& path, const std::vector<EpochLog>& log) {
  auto out = open_output(path);
  for (const auto& e : log) out << to_json(e).dump() << '\n';
}

/// Trains (or resumes) and rewrites checkpoint.apck and train_log.jsonl after
/// every epoch.
inline TrainCommandResult cmd_train(const ExperimentConfig& cfg, const Dataset& data, const fs::path& run_dir,
                                    const TrainOptions& opt, std::ostream& log) {
  TrainConfig tc = cfg.train;
  if (opt.base_model) tc.lambda = 0.0;
  std::optional<Trainer> trainer;
  if (opt.resume) {
    const Checkpoint ck = load_checkpoint(*opt.resume);
    if (ck.mode != tc.mode) throw ModeMismatch("checkpoint mode '" + to_string(ck.mode) + "' but config asks for '" +
                                               to_string(tc.mode) + "'");
    trainer.emplace(data, ck);
  } else {
    trainer.emplace(data, tc);
  }
  TrainCommandResult res;
  res.checkpoint_path = run_dir / "checkpoint.apck";
  res.log_path = run_dir / "train_log.jsonl";
  const fs::path tmp = run_dir / "checkpoint.apck.tmp";
  int ran = 0;
  while (!trainer->finished() && (!opt.max_epochs || ran < *opt.max_epochs)) {
    trainer->run_epoch();
    ++ran;
    save_checkpoint(trainer->checkpoint(), tmp);
    fs::rename(tmp, res.checkpoint_path);
    write_train_log(res.log_path, trainer->log());
    const EpochLog& e = trainer->log().back();
    log << "epoch " << e.epoch << (e.adversarial ? " adv " : " warm") << " L_pose " << e.pose_loss;
    if (e.adversarial) log << " L_adv " << e.adv_loss << " L_D " << e.disc_loss;
    log << '\n';
  }
  res.log = trainer->log();
  write_json(run_dir / "manifest.json",
             manifest("train", cfg,
                      {{"base_model", opt.base_model},
                       {"resumed_from", opt.resume ? opt.resume->string() : ""},
                       {"effective_train", to_json(trainer->config())},
                       {"epochs_done", trainer->epochs_done()},
                       {"checkpoint", res.checkpoint_path.filename().string()},
                       {"log", res.log_path.filename().string()}}));
  return res;
}

// ---------------------------------------------------------------------------
// eval

struct EvalColumn {
  std::string name;
  std::vector<double> rot;
  std::vector<double> trans;
  double median_rot = 0.0;
  double median_trans = 0.0;
};

struct EvalReport {
  std::vector<EvalColumn> columns;
  Metrics ours;
  std::optional<Metrics> base;
  bool refined = false;
};

inline void check_model_for(const TrainedModel& m, const Dataset& d, std::optional<RotationMode> expected) {
  if (expected && *expected != m.config.mode) {
    throw ModeMismatch("checkpoint uses '" + to_string(m.config.mode) + "' but '" + to_string(*expected) +
                       "' was requested");
  }
  if (m.discriminator.feature_dim() != d.extractor.feature_dim()) {
    throw ShapeMismatch("checkpoint expects " + std::to_string(m.discriminator.feature_dim()) +
                        " features, dataset has " + std::to_string(d.extractor.feature_dim()));
  }
}

inline void write_errors_csv(const fs::path& path, const Metrics& m) {
  auto out = open_output(path);
  out << "frame,rot_before_deg,trans_before,rot_after_deg,trans_after,iterations,non_monotone\n";
  for (std::size_t i = 0; i < m.rot_before.size(); ++i) {
    out << i << ',' << m.rot_before[i] << ',' << m.trans_before[i] << ',' << m.rot_after[i] << ','
        << m.trans_after[i] << ',' << m.iterations[i] << ',' << m.non_monotone[i] << '\n';
  }
}

inline EvalReport cmd_eval(const ExperimentConfig& cfg, const Dataset& data, const TrainedModel& ours,
                           const std::optional<TrainedModel>& base, bool refine, std::optional<RotationMode> mode,
                           const fs::path& run_dir, std::ostream& log, std::size_t bins = 20) {
  check_model_for(ours, data, mode);
  if (base) check_model_for(*base, data, ours.config.mode);
  EvalReport rep;
  rep.refined = refine;
  std::optional<RefineConfig> rc;
  if (refine) rc = cfg.refine;
  rep.ours = evaluate(ours.regressor, &ours.discriminator, data.test, rc, cfg.workers);
  write_errors_csv(run_dir / "errors_ours.csv", rep.ours);
  if (base) {
    rep.base = evaluate(base->regressor, nullptr, data.test, std::nullopt, cfg.workers);
    write_errors_csv(run_dir / "errors_base.csv", *rep.base);
    rep.columns.push_back({"Base", rep.base->rot_before, rep.base->trans_before, 0, 0});
  }
  rep.columns.push_back({"Ours", rep.ours.rot_before, rep.ours.trans_before, 0, 0});
  if (refine) rep.columns.push_back({"Ours+Ref", rep.ours.rot_after, rep.ours.trans_after, 0, 0});
  for (auto& c : rep.columns) {
    c.median_rot = median(c.rot);
    c.median_trans = median(c.trans);
  }

  {
    auto out = open_output(run_dir / "histogram.csv");
    out << "column,quantity,bin,lower,upper,count\n";
    for (const auto& c : rep.columns) {
      for (const auto* q : {&c.rot, &c.trans}) {
        const Histogram h = histogram(*q, bins);
        for (std::size_t b = 0; b < bins; ++b) {
          out << c.name << ',' << (q == &c.rot ? "rotation_deg" : "translation") << ',' << b << ',' << h.edges[b]
              << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
        }
      }
    }
  }

  json cols = json::array();
  log << std::left << std::setw(10) << "column" << std::setw(16) << "median rot deg" << "median trans\n";
  for (const auto& c : rep.columns) {
    log << std::setw(10) << c.name << std::setw(16) << c.median_rot << c.median_trans << '\n';
    cols.push_back({{"name", c.name}, {"median_rot_deg", c.median_rot}, {"median_trans", c.median_trans}});
  }
  json summary = {{"columns", cols}, {"n_frames", data.test.size()}, {"refined", refine}};
  if (refine) {
    summary["rot_improvement_pct"] = 100.0 * rep.ours.rot_improvement;
    summary["trans_improvement_pct"] = 100.0 * rep.ours.trans_improvement;
    summary["converged"] = rep.ours.converged;
    summary["hit_max_iters"] = rep.ours.hit_max_iters;
    summary["mean_iterations"] = rep.ours.mean_iterations();
    log << "relative improvement: rotation " << 100.0 * rep.ours.rot_improvement << "%, translation "
        << 100.0 * rep.ours.trans_improvement << "%\n";
  }
  log << std::right;
  write_json(run_dir / "summary.json", summary);
  write_json(run_dir / "manifest.json", manifest("eval", cfg, {{"refine", refine}}));
  return rep;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepCell {
  double step_size = 0.0;
  int iterations = 0;
  double median_rot = 0.0;
  double median_trans = 0.0;
  double mean_iterations = 0.0;
  double seconds_per_frame = 0.0;
  std::size_t non_monotone_frames = 0;
  /// Median rotation or translation error after exceeds before.
  bool unstable = false;
};

struct SweepResult {
  double median_rot_before = 0.0;
  double median_trans_before = 0.0;
  std::vector<SweepCell> cells;
  std::vector<Metrics> metrics;  // parallel to cells
};

inline SweepResult run_sweep(const Regressor& reg, const Discriminator& disc, std::span<const FrameSample> split,
                             const RefineConfig& base_cfg, const SweepGrid& grid, unsigned workers) {
  SweepResult res;
  const Metrics plain = evaluate(reg, &disc, split, std::nullopt, workers);
  res.median_rot_before = plain.median_rot_before;
  res.median_trans_before = plain.median_trans_before;
  for (double l : grid.step_sizes) {
    for (int n : grid.iterations) {
      SweepCell c;
      c.step_size = l;
      c.iterations = n;
      const auto t0 = std::chrono::steady_clock::now();
      Metrics m = plain;
      if (n > 0) {
        RefineConfig rc = base_cfg;
        rc.step_size = l;
        rc.max_iters = n;
        m = evaluate(reg, &disc, split, rc, workers);
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      c.median_rot = m.median_rot_after;
      c.median_trans = m.median_trans_after;
      c.mean_iterations = m.mean_iterations();
      c.seconds_per_frame = secs / static_cast<double>(split.size());
      c.non_monotone_frames = static_cast<std::size_t>(
          std::count_if(m.non_monotone.begin(), m.non_monotone.end(), [](int k) { return k > 0; }));
      c.unstable = m.median_rot_after > m.median_rot_before || m.median_trans_after > m.median_trans_before;
      res.cells.push_back(c);
      res.metrics.push_back(std::move(m));
    }
  }
  return res;
}

inline SweepResult cmd_sweep(const ExperimentConfig& cfg, const Dataset& data, const TrainedModel& model,
                             std::optional<RotationMode> mode, const fs::path& run_dir, std::ostream& log) {
  check_model_for(model, data, mode);
  SweepResult res = run_sweep(model.regressor, model.discriminator, data.test, cfg.refine, cfg.sweep, cfg.workers);
  {
    auto out = open_output(run_dir / "sweep.csv");
    out << "step_size,iterations,median_rot_deg,median_trans,mean_iterations,seconds_per_frame,non_monotone_frames,"
           "unstable\n";
    for (const auto& c : res.cells) {
      out << c.step_size << ',' << c.iterations << ',' << c.median_rot << ',' << c.median_trans << ','
          << c.mean_iterations << ',' << c.seconds_per_frame << ',' << c.non_monotone_frames << ','
          << (c.unstable ? 1 : 0) << '\n';
    }
  }
  {
    auto out = open_output(run_dir / "sweep_frames.csv");
    out << "step_size,iterations,frame,rot_before_deg,trans_before,rot_after_deg,trans_after,iterations_used\n";
    for (std::size_t k = 0; k < res.cells.size(); ++k) {
      const Metrics& m = res.metrics[k];
      for (std::size_t i = 0; i < m.rot_after.size(); ++i) {
        out << res.cells[k].step_size << ',' << res.cells[k].iterations << ',' << i << ',' << m.rot_before[i] << ','
            << m.trans_before[i] << ',' << m.rot_after[i] << ',' << m.trans_after[i] << ',' << m.iterations[i]
            << '\n';
      }
    }
  }
  log << "unrefined: rot " << res.median_rot_before << " deg, trans " << res.median_trans_before << '\n';
  log << std::setw(10) << "step" << std::setw(7) << "iters" << std::setw(12) << "rot deg" << std::setw(12) << "trans"
      << "  flag\n";
  for (const auto& c : res.cells) {
    log << std::setw(10) << c.step_size << std::setw(7) << c.iterations << std::setw(12) << c.median_rot
        << std::setw(12) << c.median_trans << (c.unstable ? "  unstable" : "") << '\n';
  }
  write_json(run_dir / "manifest.json",
             manifest("sweep", cfg, {{"cells", res.cells.size()}, {"median_rot_before", res.median_rot_before},
                                     {"median_trans_before", res.median_trans_before}}));
  return res;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
  int iterations = 0;
  double refine_seconds_per_frame = 0.0;
};

struct BenchReport {
  double feature_seconds_per_frame = 0.0;
  double regression_seconds_per_frame = 0.0;
  std::vector<BenchRow> rows;
  double slope = 0.0;      // seconds per iteration
  double intercept = 0.0;  // seconds
  double r_squared = 0.0;
  std::string hardware;
  std::string timestamp;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least-squares line through (x, y); R^2 is 1 - SS_res / SS_tot.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += e * e;
  }
  f.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : (ss_res == 0.0 ? 1.0 : 0.0);
  return f;
}

/// Per-frame wall-clock of each stage. Refinement runs with tol = 0 so every
/// frame uses exactly the requested iteration count; each count keeps its
/// fastest of `repeats` interleaved passes.
inline BenchReport run_bench(const Dataset& data, const Regressor& reg, const Discriminator& disc,
                             const RefineConfig& base_cfg, const BenchConfig& bc) {
  using clock = std::chrono::steady_clock;
  const std::size_t n = std::min(bc.frames, data.test.size());
  if (n == 0) throw EmptyDataset("benchmark needs test frames");
  const std::span<const FrameSample> frames(data.test.data(), n);
  BenchReport rep;
  rep.hardware = hardware_string();
  rep.timestamp = utc_timestamp();

  volatile double sink = 0.0;
  auto best_of = [&](auto&& body) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < bc.repeats; ++r) {
      const auto t0 = clock::now();
      body();
      best = std::min(best, std::chrono::duration<double>(clock::now() - t0).count());
    }
    return best / static_cast<double>(n);
  };

  rep.feature_seconds_per_frame = best_of([&] {
    for (const auto& s : frames) sink = sink + extract_features(s.observation, data.extractor)[0];
  });
  std::vector<Pose> start(n);
  rep.regression_seconds_per_frame = best_of([&] {
    for (std::size_t i = 0; i < n; ++i) start[i] = regress_pose(reg, frames[i].observation);
  });

  // Counts are interleaved within each pass so slow or fast host phases hit
  // every count alike instead of skewing one row.
  std::vector<double> best(bc.iterations.size(), std::numeric_limits<double>::infinity());
  for (int r = 0; r < bc.repeats; ++r) {
    for (std::size_t c = 0; c < bc.iterations.size(); ++c) {
      if (bc.iterations[c] <= 0) continue;
      RefineConfig rc = base_cfg;
      rc.tol = 0.0;
      rc.max_iters = bc.iterations[c];
      const auto t0 = clock::now();
      for (std::size_t i = 0; i < n; ++i) {
        const RefineResult res = refine_pose(disc, frames[i].features, start[i], rc);
        sink = sink + res.pose.translation.t[0];
      }
      best[c] = std::min(best[c], std::chrono::duration<double>(clock::now() - t0).count());
    }
  }
  std::vector<double> xs, ys;
  for (std::size_t c = 0; c < bc.iterations.size(); ++c) {
    BenchRow row;
    row.iterations = bc.iterations[c];
    if (row.iterations > 0) row.refine_seconds_per_frame = best[c] / static_cast<double>(n);
    xs.push_back(static_cast<double>(row.iterations));
    ys.push_back(row.refine_seconds_per_frame);
    rep.rows.push_back(row);
  }
  const LineFit f = fit_line(xs, ys);
  rep.slope = f.slope;
  rep.intercept = f.intercept;
  rep.r_squared = f.r_squared;
  return rep;
}

inline BenchReport cmd_bench(const ExperimentConfig& cfg, const Dataset& data, const TrainedModel& model,
                             std::optional<RotationMode> mode, const fs::path& run_dir, std::ostream& log) {
  check_model_for(model, data, mode);
  BenchReport rep = run_bench(data, model.regressor, model.discriminator, cfg.refine, cfg.bench);
  {
    auto out = open_output(run_dir / "bench.csv");
    out << "iterations,refine_seconds_per_frame\n";
    for (const auto& r : rep.rows) out << r.iterations << ',' << r.refine_seconds_per_frame << '\n';
  }
  json rows = json::array();
  for (const auto& r : rep.rows) rows.push_back({{"iterations", r.iterations}, {"seconds", r.refine_seconds_per_frame}});
  write_json(run_dir / "bench.json", {{"hardware", rep.hardware},
                                      {"timestamp", rep.timestamp},
                                      {"feature_seconds_per_frame", rep.feature_seconds_per_frame},
                                      {"regression_seconds_per_frame", rep.regression_seconds_per_frame},
                                      {"refinement", rows},
                                      {"slope_seconds_per_iteration", rep.slope},
                                      {"intercept_seconds", rep.intercept},
                                      {"r_squared", rep.r_squared}});
  write_json(run_dir / "manifest.json", manifest("bench", cfg, {{"r_squared", rep.r_squared}}));
  log << "hardware: " << rep.hardware << "\ntimestamp: " << rep.timestamp << '\n';
  log << "feature extraction: " << rep.feature_seconds_per_frame * 1e6 << " us/frame\n";
  log << "pose regression:    " << rep.regression_seconds_per_frame * 1e6 << " us/frame\n";
  for (const auto& r : rep.rows) {
    log << "refinement " << std::setw(3) << r.iterations << " iters: " << r.refine_seconds_per_frame * 1e6
        << " us/frame\n";
  }
  log << "per iteration: " << rep.slope * 1e6 << " us, linear fit R^2 = " << rep.r_squared
      << (rep.r_squared > 0.95 ? " (linear)" : " (NOT linear)") << '\n';
  return rep;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  std::string arm;  // "d_f=N" or "no features"
  std::size_t feature_dim = 0;
  bool use_features = true;
  Metrics metrics;
};

/// One fully trained and refined model per arm, all with the same seed: each
/// feature width in the list, then a pose-only discriminator at the
/// configured width.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const Dataset& data) {
  std::vector<AblationRow> rows;
  auto arm = [&](std::size_t d_f, bool use_features) {
    const Dataset d = d_f == data.extractor.feature_dim() ? data : with_feature_dim(data, d_f);
    TrainConfig tc = cfg.train;
    tc.disc_use_features = use_features;
    const TrainResult r = train(d, tc);
    AblationRow row;
    row.arm = use_features ? "d_f=" + std::to_string(d_f) : "no features";
    row.feature_dim = d_f;
    row.use_features = use_features;
    row.metrics = evaluate(r.regressor, &r.discriminator, d.test, cfg.refine, cfg.workers);
    rows.push_back(std::move(row));
  };
  for (std::size_t d_f : cfg.ablate.feature_dims) arm(d_f, true);
  arm(data.extractor.feature_dim(), false);
  return rows;
}

inline std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, const Dataset& data, const fs::path& run_dir,
                                           std::ostream& log) {
  auto rows = run_ablation(cfg, data);
  {
    auto out = open_output(run_dir / "ablation.csv");
    out << "arm,feature_dim,use_features,median_rot_before,median_rot_after,median_trans_before,median_trans_after,"
           "rot_decrease_pct,trans_decrease_pct\n";
    for (const auto& r : rows) {
      const Metrics& m = r.metrics;
      out << r.arm << ',' << r.feature_dim << ',' << (r.use_features ? 1 : 0) << ',' << m.median_rot_before << ','
          << m.median_rot_after << ',' << m.median_trans_before << ',' << m.median_trans_after << ','
          << 100.0 * m.rot_improvement << ',' << 100.0 * m.trans_improvement << '\n';
    }
  }
  {
    auto out = open_output(run_dir / "ablation_frames.csv");
    out << "arm,frame,rot_before_deg,trans_before,rot_after_deg,trans_after\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.metrics.rot_before.size(); ++i) {
        out << r.arm << ',' << i << ',' << r.metrics.rot_before[i] << ',' << r.metrics.trans_before[i] << ','
            << r.metrics.rot_after[i] << ',' << r.metrics.trans_after[i] << '\n';
      }
    }
  }
  log << std::left << std::setw(14) << "arm" << std::setw(16) << "rot decrease %" << "trans decrease %\n";
  for (const auto& r : rows) {
    log << std::setw(14) << r.arm << std::setw(16) << 100.0 * r.metrics.rot_improvement
        << 100.0 * r.metrics.trans_improvement << '\n';
  }
  log << std::right;
  write_json(run_dir / "manifest.json", manifest("ablate", cfg, {{"rows", rows.size()}}));
  return rows;
}

}  // namespace advpose

#endif
