#ifndef ADVPOSE_REFINE_HPP
#define ADVPOSE_REFINE_HPP

// Test-time pose refinement against a frozen discriminator: descend
// L_ref = bce(D(f, p), c) with respect to the pose only. Quaternions move
// along great circles of the unit sphere; log-quaternions and translations
// take plain gradient steps of the same size.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "advpose/diffcore.hpp"
#include "advpose/json_fields.hpp"
#include "advpose/model.hpp"
#include "advpose/quat_geom.hpp"

namespace advpose {

struct RefineConfig {
  double step_size = 1e-3;
  int max_iters = 50;
  /// Converged once both update magnitudes fall below this.
  double tol = 1e-6;
  double target = 0.5;
  /// Use the literal (I - g g^T) g direction instead of the tangent projection.
  bool eq7_literal = false;

  bool operator==(const RefineConfig&) const = default;

  void validate() const {
    if (!(step_size > 0.0)) throw InvalidConfig("refine.step_size", "must be > 0");
    if (max_iters < 1) throw InvalidConfig("refine.max_iters", "must be >= 1");
    if (!(tol >= 0.0)) throw InvalidConfig("refine.tol", "must be >= 0");
    if (!(target > 0.0 && target < 1.0)) throw InvalidConfig("refine.target", "must lie in (0, 1)");
  }
};

inline json to_json(const RefineConfig& c) {
  return json{{"step_size", c.step_size},
              {"max_iters", c.max_iters},
              {"tol", c.tol},
              {"target", c.target},
              {"eq7_literal", c.eq7_literal}};
}

inline RefineConfig refine_config_from_json(FieldReader r) {
  RefineConfig c;
  r.optional("step_size", c.step_size);
  r.optional("max_iters", c.max_iters);
  r.optional("tol", c.tol);
  r.optional("target", c.target);
  r.optional("eq7_literal", c.eq7_literal);
  r.finish();
  c.validate();
  return c;
}

enum class StopReason { Converged, MaxIters };

inline std::string to_string(StopReason r) { return r == StopReason::Converged ? "converged" : "max_iters"; }

struct TraceEntry {
  Pose pose;  // after this iteration's update
  double loss = 0.0;
  double disc_output = 0.0;
  double grad_norm_rotation = 0.0;
  double grad_norm_translation = 0.0;
  /// <v, q> of the applied quaternion direction (0 in log-quaternion mode).
  double direction_dot = 0.0;
};

struct RefinementTrace {
  std::vector<TraceEntry> entries;
  StopReason stop = StopReason::MaxIters;

  std::size_t iterations() const { return entries.size(); }

  /// Number of iterations whose L_ref exceeds the previous one.
  std::size_t non_monotone_count() const {
    std::size_t n = 0;
    for (std::size_t i = 1; i < entries.size(); ++i) n += entries[i].loss > entries[i - 1].loss ? 1 : 0;
    return n;
  }
};

struct RefineResult {
  Pose pose;
  RefinementTrace trace;
};

/// L_ref and its gradient with respect to the rotation block and translation.
struct RefineGradient {
  double loss = 0.0;
  double disc_output = 0.0;
  std::vector<double> rotation;
  Vec3 translation = Vec3::Zero();
};

inline RefineGradient refinement_gradient(const Discriminator& disc, std::span<const double> features,
                                          std::span<const double> rotation, const Vec3& translation,
                                          double target) {
  diff::Tape tape;
  auto params = diff::bind(tape, disc.params(), false);
  auto f = tape.constant({features.begin(), features.end()});
  auto rot = tape.input({rotation.begin(), rotation.end()}, true);
  auto t = tape.input({translation[0], translation[1], translation[2]}, true);
  auto d = disc_forward(disc, params, f, diff::concat(rot, t));
  auto loss = diff::bce(d, target);
  tape.backward(loss);
  RefineGradient g;
  g.loss = loss.item();
  g.disc_output = d.item();
  auto gr = tape.grad(rot);
  g.rotation.assign(gr.begin(), gr.end());
  auto gt = tape.grad(t);
  g.translation = Vec3(gt[0], gt[1], gt[2]);
  return g;
}

inline RefineResult refine_pose(const Discriminator& disc, std::span<const double> features, const Pose& pose0,
                                const RefineConfig& cfg) {
  cfg.validate();
  if (pose0.mode() != disc.mode()) throw ModeMismatch("pose and discriminator use different parameterizations");
  RefineResult res;
  Pose pose = pose0;
  const double l = cfg.step_size;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Eigen::VectorXd pv = pose.vector();
    const std::size_t k = rotation_width(pose.mode());
    const RefineGradient g =
        refinement_gradient(disc, features, std::span<const double>(pv.data(), k), pose.translation.t, cfg.target);

    TraceEntry e;
    e.loss = g.loss;
    e.disc_output = g.disc_output;
    double rot_delta = 0.0;
    Eigen::Map<const Eigen::VectorXd> grad_rot(g.rotation.data(), static_cast<Eigen::Index>(k));
    e.grad_norm_rotation = grad_rot.norm();
    e.grad_norm_translation = g.translation.norm();

    if (auto* q = std::get_if<UnitQuaternion>(&pose.rotation)) {
      const Vec4 descent = -Vec4(grad_rot);
      const Vec4 v = cfg.eq7_literal ? tangent_project_literal(descent) : tangent_project(*q, descent).v;
      e.direction_dot = v.dot(q->coeffs());
      const UnitQuaternion next = detail::great_circle_update(*q, v, l);
      rot_delta = (next.coeffs() - q->coeffs()).norm();
      *q = next;
    } else {
      auto& log = std::get<LogQuaternion>(pose.rotation);
      const Vec3 step = l * Vec3(grad_rot);
      rot_delta = step.norm();
      log.v -= step;
    }
    const Vec3 t_step = l * g.translation;
    pose.translation.t -= t_step;

    e.pose = pose;
    res.trace.entries.push_back(e);
    if (rot_delta < cfg.tol && t_step.norm() < cfg.tol) {
      res.trace.stop = StopReason::Converged;
      break;
    }
  }
  res.pose = pose;
  return res;
}

}  // namespace advpose

#endif
