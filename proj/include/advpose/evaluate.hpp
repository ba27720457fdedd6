#ifndef ADVPOSE_EVALUATE_HPP
#define ADVPOSE_EVALUATE_HPP

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "advpose/model.hpp"
#include "advpose/quat_geom.hpp"
#include "advpose/refine.hpp"
#include "advpose/scenes.hpp"

namespace advpose {

/// Median; for an even count, the mean of the two central values.
inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

inline double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// (before - after) / before; 0 when before is 0.
inline double relative_improvement(double before, double after) {
  return before == 0.0 ? 0.0 : (before - after) / before;
}

struct Metrics {
  std::vector<double> rot_before;
  std::vector<double> trans_before;
  std::vector<double> rot_after;
  std::vector<double> trans_after;
  std::vector<int> iterations;
  std::vector<int> non_monotone;
  double median_rot_before = 0.0;
  double median_trans_before = 0.0;
  double median_rot_after = 0.0;
  double median_trans_after = 0.0;
  double mean_rot_before = 0.0;
  double mean_trans_before = 0.0;
  double mean_rot_after = 0.0;
  double mean_trans_after = 0.0;
  double rot_improvement = 0.0;
  double trans_improvement = 0.0;
  std::size_t converged = 0;
  std::size_t hit_max_iters = 0;
  /// Largest |‖q‖ - 1| over every emitted refinement quaternion.
  double max_unit_norm_deviation = 0.0;

  double mean_iterations() const {
    if (iterations.empty()) return 0.0;
    return static_cast<double>(std::accumulate(iterations.begin(), iterations.end(), 0)) /
           static_cast<double>(iterations.size());
  }
};

/// Recomputes every aggregate from the per-frame arrays.
inline void summarize(Metrics& m) {
  m.median_rot_before = median(m.rot_before);
  m.median_trans_before = median(m.trans_before);
  m.median_rot_after = median(m.rot_after);
  m.median_trans_after = median(m.trans_after);
  m.mean_rot_before = mean(m.rot_before);
  m.mean_trans_before = mean(m.trans_before);
  m.mean_rot_after = mean(m.rot_after);
  m.mean_trans_after = mean(m.trans_after);
  m.rot_improvement = relative_improvement(m.median_rot_before, m.median_rot_after);
  m.trans_improvement = relative_improvement(m.median_trans_before, m.median_trans_after);
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn fn) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline Pose ground_truth_in(const FrameSample& s, RotationMode mode) {
  Pose p = s.pose_gt;
  p.rotation = p.unit_rotation().canonical();
  return p.as(mode);
}

/// Per-frame errors of the regressed pose and, when `refine` is given, of the
/// pose refined against `disc`. Without refinement the "after" arrays copy
/// the "before" arrays.
inline Metrics evaluate(const Regressor& reg, const Discriminator* disc, std::span<const FrameSample> split,
                        const std::optional<RefineConfig>& refine, unsigned workers = 1) {
  if (split.empty()) throw EmptyDataset("evaluation split is empty");
  if (refine && !disc) throw Error("refinement requested without a discriminator");
  const std::size_t n = split.size();
  Metrics m;
  m.rot_before.resize(n);
  m.trans_before.resize(n);
  m.rot_after.resize(n);
  m.trans_after.resize(n);
  m.iterations.assign(n, 0);
  m.non_monotone.assign(n, 0);
  std::vector<StopReason> stops(n, StopReason::Converged);
  std::vector<double> norm_dev(n, 0.0);

  parallel_for(n, workers, [&](std::size_t i) {
    const FrameSample& s = split[i];
    const Pose pred = regress_pose(reg, s.observation);
    m.rot_before[i] = rotation_error_deg(pred, s.pose_gt);
    m.trans_before[i] = translation_error(pred, s.pose_gt);
    if (!refine) {
      m.rot_after[i] = m.rot_before[i];
      m.trans_after[i] = m.trans_before[i];
      return;
    }
    const RefineResult r = refine_pose(*disc, s.features, pred, *refine);
    m.rot_after[i] = rotation_error_deg(r.pose, s.pose_gt);
    m.trans_after[i] = translation_error(r.pose, s.pose_gt);
    m.iterations[i] = static_cast<int>(r.trace.iterations());
    m.non_monotone[i] = static_cast<int>(r.trace.non_monotone_count());
    stops[i] = r.trace.stop;
    for (const auto& e : r.trace.entries) {
      if (const auto* q = std::get_if<UnitQuaternion>(&e.pose.rotation)) {
        norm_dev[i] = std::max(norm_dev[i], std::abs(q->coeffs().norm() - 1.0));
      }
    }
  });

  if (refine) {
    for (StopReason s : stops) (s == StopReason::Converged ? m.converged : m.hit_max_iters) += 1;
  }
  m.max_unit_norm_deviation = *std::max_element(norm_dev.begin(), norm_dev.end());
  summarize(m);
  return m;
}

struct DiscAccuracy {
  double real = 0.0;
  double fake = 0.0;
  double overall() const { return 0.5 * (real + fake); }
};

/// Fraction of ground-truth pairs scored > 0.5 and of regressed pairs scored
/// < 0.5 on `split`.
inline DiscAccuracy discriminator_accuracy(const Regressor& reg, const Discriminator& disc,
                                           std::span<const FrameSample> split) {
  if (split.empty()) throw EmptyDataset("accuracy split is empty");
  std::size_t real = 0, fake = 0;
  for (const auto& s : split) {
    real += disc_output(disc, s.features, ground_truth_in(s, reg.mode())) > 0.5 ? 1 : 0;
    fake += disc_output(disc, s.features, regress_pose(reg, s.observation)) < 0.5 ? 1 : 0;
  }
  const double n = static_cast<double>(split.size());
  return {static_cast<double>(real) / n, static_cast<double>(fake) / n};
}

}  // namespace advpose

#endif
