// Command-line front end: generate, train, eval, sweep, bench, ablate.
//
// Exit codes: 0 success, 2 invalid config or arguments, 3 I/O or file format
// failure, 4 numerical abort during training, 1 anything else.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "advpose/harness.hpp"

namespace {

using namespace advpose;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> out;
  bool force = false;
  std::optional<unsigned> workers;
};

struct DataArgs {
  std::string dataset;
  std::string checkpoint;
};

struct RefineArgs {
  bool refine = false;
  std::optional<double> step_size;
  std::optional<int> max_iters;
  bool eq7_literal = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides scene.seed, train.seed and the seed list");
  cmd->add_option("--mode", c.mode, "rotation parameterization")->check(CLI::IsMember({"quat", "logq"}));
  cmd->add_option("--out", c.out, "output root (default: out_dir from the config)");
  cmd->add_flag("--force", c.force, "reuse <out>/<command> instead of a fresh numbered run directory");
  cmd->add_option("--workers", c.workers, "threads for frame-parallel evaluation");
}

void add_refine(CLI::App* cmd, RefineArgs& r, bool with_switch) {
  if (with_switch) cmd->add_flag("--refine", r.refine, "refine regressed poses against the discriminator");
  cmd->add_option("--step-size", r.step_size, "refinement step size l");
  cmd->add_option("--max-iters", r.max_iters, "refinement iteration cap");
  cmd->add_flag("--eq7-literal", r.eq7_literal, "use the literal (I - g g^T) g update direction");
}

ExperimentConfig resolve(const Common& c, const RefineArgs* r) {
  ExperimentConfig cfg = load_experiment_config(c.config);
  if (c.mode) set_mode(cfg, parse_rotation_mode(*c.mode));
  if (c.seed) {
    cfg.scene.seed = *c.seed;
    cfg.train.seed = *c.seed;
    cfg.seeds = {*c.seed};
  }
  if (c.out) cfg.out_dir = *c.out;
  if (c.workers) {
    if (*c.workers < 1) throw InvalidConfig("workers", "must be >= 1");
    cfg.workers = *c.workers;
  }
  if (r) {
    if (r->step_size) cfg.refine.step_size = *r->step_size;
    if (r->max_iters) cfg.refine.max_iters = *r->max_iters;
    if (r->eq7_literal) cfg.refine.eq7_literal = true;
    cfg.refine.validate();
  }
  return cfg;
}

/// Loads --dataset when given, otherwise regenerates it from the config.
Dataset dataset_for(const ExperimentConfig& cfg, const std::string& path) {
  return path.empty() ? make_dataset(cfg.scene) : load_dataset_for(cfg, path);
}

std::optional<RotationMode> mode_flag(const Common& c) {
  if (!c.mode) return std::nullopt;
  return parse_rotation_mode(*c.mode);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial camera pose regression and refinement on synthetic scenes"};
  app.require_subcommand(1);

  Common common;
  DataArgs data;
  RefineArgs refine;
  TrainOptions train_opt;
  std::optional<int> max_epochs;
  std::string resume;
  std::string base_checkpoint;
  std::vector<double> step_sizes;
  std::vector<int> iteration_list;
  std::vector<std::size_t> feature_dims;
  std::optional<std::size_t> bench_frames;
  std::size_t bins = 20;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset and its manifest");
  add_common(gen, common);

  auto* tr = app.add_subcommand("train", "train the regressor and discriminator");
  add_common(tr, common);
  tr->add_option("--dataset", data.dataset, "dataset file (default: regenerate from the config)");
  tr->add_flag("--base-model", train_opt.base_model, "force lambda = 0 (non-adversarial baseline)");
  tr->add_option("--resume", resume, "continue from a checkpoint written by train")->check(CLI::ExistingFile);
  tr->add_option("--max-epochs", max_epochs, "stop after this many epochs in this invocation");

  auto* ev = app.add_subcommand("eval", "median errors before and after refinement");
  add_common(ev, common);
  ev->add_option("--dataset", data.dataset, "dataset file (default: regenerate from the config)");
  ev->add_option("--checkpoint", data.checkpoint, "trained model")->required()->check(CLI::ExistingFile);
  ev->add_option("--base-checkpoint", base_checkpoint, "baseline model for the Base column")
      ->check(CLI::ExistingFile);
  ev->add_option("--bins", bins, "histogram bins")->check(CLI::PositiveNumber);
  add_refine(ev, refine, true);

  auto* sw = app.add_subcommand("sweep", "grid over refinement step sizes and iteration counts");
  add_common(sw, common);
  sw->add_option("--dataset", data.dataset, "dataset file (default: regenerate from the config)");
  sw->add_option("--checkpoint", data.checkpoint, "trained model")->required()->check(CLI::ExistingFile);
  sw->add_option("--step-sizes", step_sizes, "step-size grid")->delimiter(',');
  sw->add_option("--iterations", iteration_list, "iteration grid")->delimiter(',');
  sw->add_flag("--eq7-literal", refine.eq7_literal, "use the literal (I - g g^T) g update direction");

  auto* be = app.add_subcommand("bench", "per-stage wall-clock timings");
  add_common(be, common);
  be->add_option("--dataset", data.dataset, "dataset file (default: regenerate from the config)");
  be->add_option("--checkpoint", data.checkpoint, "trained model")->required()->check(CLI::ExistingFile);
  be->add_option("--iters", iteration_list, "refinement iteration counts")->delimiter(',');
  be->add_option("--frames", bench_frames, "test frames to time");

  auto* ab = app.add_subcommand("ablate", "refinement gain per feature width, plus a pose-only discriminator");
  add_common(ab, common);
  ab->add_option("--dataset", data.dataset, "dataset file (default: regenerate from the config)");
  ab->add_option("--feature-dims", feature_dims, "feature widths to compare")->delimiter(',');
  add_refine(ab, refine, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      ExperimentConfig cfg = resolve(common, nullptr);
      const auto dir = make_run_dir(cfg.out_dir, "generate", common.force);
      cmd_generate(cfg, dir, std::cout);
      std::cout << "run directory: " << dir.string() << '\n';
    } else if (tr->parsed()) {
      ExperimentConfig cfg = resolve(common, nullptr);
      const Dataset d = dataset_for(cfg, data.dataset);
      if (!resume.empty()) train_opt.resume = resume;
      train_opt.max_epochs = max_epochs;
      const auto dir = make_run_dir(cfg.out_dir, "train", common.force);
      cmd_train(cfg, d, dir, train_opt, std::cout);
      std::cout << "run directory: " << dir.string() << '\n';
    } else if (ev->parsed()) {
      ExperimentConfig cfg = resolve(common, &refine);
      const Dataset d = dataset_for(cfg, data.dataset);
      const TrainedModel ours = load_model(load_checkpoint(data.checkpoint));
      std::optional<TrainedModel> base;
      if (!base_checkpoint.empty()) base = load_model(load_checkpoint(base_checkpoint));
      check_model_for(ours, d, mode_flag(common));
      if (base) check_model_for(*base, d, ours.config.mode);
      const auto dir = make_run_dir(cfg.out_dir, "eval", common.force);
      cmd_eval(cfg, d, ours, base, refine.refine, mode_flag(common), dir, std::cout, bins);
      std::cout << "run directory: " << dir.string() << '\n';
    } else if (sw->parsed()) {
      ExperimentConfig cfg = resolve(common, &refine);
      if (!step_sizes.empty()) cfg.sweep.step_sizes = step_sizes;
      if (!iteration_list.empty()) cfg.sweep.iterations = iteration_list;
      for (double l : cfg.sweep.step_sizes) {
        if (!(l > 0.0)) throw InvalidConfig("sweep.step_sizes", "entries must be > 0");
      }
      for (int n : cfg.sweep.iterations) {
        if (n < 0) throw InvalidConfig("sweep.iterations", "entries must be >= 0");
      }
      const Dataset d = dataset_for(cfg, data.dataset);
      const TrainedModel model = load_model(load_checkpoint(data.checkpoint));
      check_model_for(model, d, mode_flag(common));
      const auto dir = make_run_dir(cfg.out_dir, "sweep", common.force);
      cmd_sweep(cfg, d, model, mode_flag(common), dir, std::cout);
      std::cout << "run directory: " << dir.string() << '\n';
    } else if (be->parsed()) {
      ExperimentConfig cfg = resolve(common, nullptr);
      if (!iteration_list.empty()) cfg.bench.iterations = iteration_list;
      if (bench_frames) cfg.bench.frames = *bench_frames;
      if (cfg.bench.iterations.size() < 2) throw InvalidConfig("bench.iterations", "need at least two counts");
      const Dataset d = dataset_for(cfg, data.dataset);
      const TrainedModel model = load_model(load_checkpoint(data.checkpoint));
      check_model_for(model, d, mode_flag(common));
      const auto dir = make_run_dir(cfg.out_dir, "bench", common.force);
      cmd_bench(cfg, d, model, mode_flag(common), dir, std::cout);
      std::cout << "run directory: " << dir.string() << '\n';
    } else if (ab->parsed()) {
      ExperimentConfig cfg = resolve(common, &refine);
      if (!feature_dims.empty()) cfg.ablate.feature_dims = feature_dims;
      for (std::size_t d_f : cfg.ablate.feature_dims) {
        if (d_f < pose_width(cfg.train.mode)) {
          throw InvalidConfig("ablate.feature_dims", "entries must be >= the pose width");
        }
      }
      const Dataset d = dataset_for(cfg, data.dataset);
      const auto dir = make_run_dir(cfg.out_dir, "ablate", common.force);
      cmd_ablate(cfg, d, dir, std::cout);
      std::cout << "run directory: " << dir.string() << '\n';
    }
  } catch (const InvalidConfig& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  } catch (const ModeMismatch& e) {
    std::cerr << "mode mismatch: " << e.what() << '\n';
    return 2;
  } catch (const ShapeMismatch& e) {
    std::cerr << "shape mismatch: " << e.what() << '\n';
    return 2;
  } catch (const NonFiniteLoss& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 4;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const FormatVersionMismatch& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 3;
  } catch (const ChecksumMismatch& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
