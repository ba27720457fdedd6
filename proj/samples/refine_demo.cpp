// Library walkthrough: build a toy scene, train briefly, refine one test frame
// and print the refinement trace.
//
//   refine_demo [quat|logq]

#include <cstdio>
#include <string>

#include "advpose/evaluate.hpp"
#include "advpose/refine.hpp"
#include "advpose/train.hpp"

int main(int argc, char** argv) {
  using namespace advpose;
  const RotationMode mode = parse_rotation_mode(argc > 1 ? argv[1] : "quat");

  DatasetParams scene;
  scene.n_landmarks = 32;
  scene.n_frames = 200;
  scene.feature_dim = default_feature_dim(mode);
  const Dataset data = make_dataset(scene);

  TrainConfig cfg;
  cfg.mode = mode;
  cfg.total_epochs = 20;
  cfg.warmup_epochs = 5;
  cfg.batch_size = 16;
  cfg.lr = 1e-3;
  cfg.disc_lr = 1e-3;
  const TrainResult model = train(data, cfg);
  std::printf("trained %zu epochs, final pose loss %.4f\n", model.log.size(), model.log.back().pose_loss);

  const FrameSample& frame = data.test.front();
  const Pose start = regress_pose(model.regressor, frame.observation);
  RefineConfig rc;
  rc.step_size = 1e-2;
  rc.max_iters = 10;
  const RefineResult r = refine_pose(model.discriminator, frame.features, start, rc);

  std::printf("start: rot err %.3f deg, trans err %.4f\n", rotation_error_deg(start, frame.pose_gt),
              translation_error(start, frame.pose_gt));
  std::printf("iter  L_ref      D(f,p)   rot err  trans err\n");
  for (std::size_t i = 0; i < r.trace.entries.size(); ++i) {
    const TraceEntry& e = r.trace.entries[i];
    std::printf("%4zu  %.6f  %.4f   %.3f    %.4f\n", i + 1, e.loss, e.disc_output,
                rotation_error_deg(e.pose, frame.pose_gt), translation_error(e.pose, frame.pose_gt));
  }
  std::printf("stopped: %s\n", to_string(r.trace.stop).c_str());

  const Metrics m = evaluate(model.regressor, &model.discriminator, data.test, rc);
  std::printf("test medians: rot %.3f -> %.3f deg, trans %.4f -> %.4f\n", m.median_rot_before, m.median_rot_after,
              m.median_trans_before, m.median_trans_after);
  return 0;
}
