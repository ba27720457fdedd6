#ifndef ADVPOSE_MODEL_HPP
#define ADVPOSE_MODEL_HPP

// Pose regressor, pose discriminator and the losses that couple them.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advpose/diffcore.hpp"
#include "advpose/quat_geom.hpp"
#include "advpose/scenes.hpp"

namespace advpose {

namespace detail {

inline std::string layer_name(const std::string& prefix, std::size_t i, const char* what) {
  return prefix + "." + std::to_string(i) + "." + what;
}

/// Number of consecutive "<prefix>.<i>.weight" entries in a store.
inline std::size_t count_layers(const diff::ParamStore& p, const std::string& prefix) {
  std::size_t n = 0;
  while (p.contains(layer_name(prefix, n, "weight"))) ++n;
  return n;
}

}  // namespace detail

/// Observation -> pose network: an ELU trunk followed by a translation head
/// (width 3) and a rotation head (width 4 or 3), plus the two loss-balancing
/// scalars beta and alpha.
class Regressor {
 public:
  Regressor() = default;

  Regressor(RotationMode mode, std::size_t input_dim, const std::vector<std::size_t>& hidden, std::uint64_t seed,
            double beta0, double alpha0)
      : mode_(mode) {
    std::mt19937_64 rng(seed);
    std::size_t in = input_dim;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      params_.add(detail::layer_name("trunk", i, "weight"), diff::glorot_uniform(hidden[i], in, rng));
      params_.add(detail::layer_name("trunk", i, "bias"), diff::Tensor::zeros({hidden[i]}, true));
      in = hidden[i];
    }
    params_.add("head_t.weight", diff::glorot_uniform(3, in, rng));
    params_.add("head_t.bias", diff::Tensor::zeros({3}, true));
    const std::size_t k = rotation_width(mode);
    params_.add("head_q.weight", diff::glorot_uniform(k, in, rng));
    // A zero bias would make the initial quaternion output arbitrary; start
    // near the identity rotation instead.
    std::vector<double> qb(k, 0.0);
    if (mode == RotationMode::Quaternion) qb[0] = 1.0;
    params_.add("head_q.bias", diff::Tensor::vector(qb, true));
    params_.add("beta", diff::Tensor::scalar(beta0, true));
    params_.add("alpha", diff::Tensor::scalar(alpha0, true));
  }

  /// Rebuilds a regressor around existing parameters (e.g. from a checkpoint).
  Regressor(RotationMode mode, diff::ParamStore params) : mode_(mode), params_(std::move(params)) {
    if (params_.at("head_q.weight").shape[0] != rotation_width(mode)) {
      throw ModeMismatch("regressor rotation head does not match mode '" + to_string(mode) + "'");
    }
  }

  RotationMode mode() const { return mode_; }
  std::size_t input_dim() const { return params_.at("trunk.0.weight").shape[1]; }
  std::size_t depth() const { return detail::count_layers(params_, "trunk"); }
  const diff::ParamStore& params() const { return params_; }
  diff::ParamStore& params() { return params_; }

 private:
  RotationMode mode_ = RotationMode::Quaternion;
  diff::ParamStore params_;
};

/// (features, replicated pose) -> probability of being a ground-truth pair.
/// Dense ELU stack (default widths 32, 16) ending in a width-1 sigmoid.
/// Without features the input is the replicated pose alone.
class Discriminator {
 public:
  Discriminator() = default;

  Discriminator(RotationMode mode, std::size_t feature_dim, bool use_features, const std::vector<std::size_t>& hidden,
                std::uint64_t seed)
      : mode_(mode), feature_dim_(feature_dim), use_features_(use_features) {
    if (pose_width(mode) > feature_dim) throw ShapeMismatch("feature width smaller than the pose vector");
    std::mt19937_64 rng(seed);
    std::size_t in = use_features ? 2 * feature_dim : feature_dim;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      params_.add(detail::layer_name("layer", i, "weight"), diff::glorot_uniform(hidden[i], in, rng));
      params_.add(detail::layer_name("layer", i, "bias"), diff::Tensor::zeros({hidden[i]}, true));
      in = hidden[i];
    }
    params_.add("out.weight", diff::glorot_uniform(1, in, rng));
    params_.add("out.bias", diff::Tensor::zeros({1}, true));
  }

  Discriminator(RotationMode mode, std::size_t feature_dim, bool use_features, diff::ParamStore params)
      : mode_(mode), feature_dim_(feature_dim), use_features_(use_features), params_(std::move(params)) {
    const std::size_t expected = use_features ? 2 * feature_dim : feature_dim;
    if (params_.at("layer.0.weight").shape[1] != expected) {
      throw ShapeMismatch("discriminator input width does not match the feature width");
    }
  }

  RotationMode mode() const { return mode_; }
  std::size_t feature_dim() const { return feature_dim_; }
  bool use_features() const { return use_features_; }
  std::size_t depth() const { return detail::count_layers(params_, "layer"); }
  const diff::ParamStore& params() const { return params_; }
  diff::ParamStore& params() { return params_; }

 private:
  RotationMode mode_ = RotationMode::Quaternion;
  std::size_t feature_dim_ = 0;
  bool use_features_ = true;
  diff::ParamStore params_;
};

struct RegressorOutput {
  diff::Var rotation;     // unit quaternion (w >= 0) or free log-quaternion
  diff::Var translation;  // 3-vector
  diff::Var beta;
  diff::Var alpha;
  diff::Binding params;

  diff::Var pose() const { return diff::concat(rotation, translation); }
};

/// Records the regressor forward pass. In quaternion mode the rotation head is
/// normalized and flipped onto the w >= 0 hemisphere.
inline RegressorOutput regressor_forward(diff::Tape& tape, const Regressor& reg, diff::Var observation,
                                         bool trainable) {
  RegressorOutput out;
  out.params = diff::bind(tape, reg.params(), trainable);
  if (observation.size() != reg.input_dim()) {
    throw ShapeMismatch("observation has " + std::to_string(observation.size()) + " entries, regressor expects " +
                        std::to_string(reg.input_dim()));
  }
  diff::Var h = observation;
  for (std::size_t i = 0; i < reg.depth(); ++i) {
    h = diff::elu(diff::affine(h, out.params[detail::layer_name("trunk", i, "weight")],
                               out.params[detail::layer_name("trunk", i, "bias")]));
  }
  out.translation = diff::affine(h, out.params["head_t.weight"], out.params["head_t.bias"]);
  diff::Var q = diff::affine(h, out.params["head_q.weight"], out.params["head_q.bias"]);
  if (reg.mode() == RotationMode::Quaternion) {
    q = diff::normalize(q);
    if (q.value()[0] < 0.0) q = diff::scale(q, -1.0);
  }
  out.rotation = q;
  out.beta = out.params["beta"];
  out.alpha = out.params["alpha"];
  return out;
}

inline Pose pose_from_values(RotationMode mode, std::span<const double> rot, std::span<const double> t) {
  Pose p;
  if (mode == RotationMode::Quaternion) {
    p.rotation = UnitQuaternion::from_unit(Vec4(rot[0], rot[1], rot[2], rot[3]));
  } else {
    p.rotation = LogQuaternion{Vec3(rot[0], rot[1], rot[2])};
  }
  p.translation.t = Vec3(t[0], t[1], t[2]);
  return p;
}

inline Pose regress_pose(const Regressor& reg, std::span<const double> observation) {
  diff::Tape tape;
  auto obs = tape.constant({observation.begin(), observation.end()});
  auto out = regressor_forward(tape, reg, obs, false);
  return pose_from_values(reg.mode(), out.rotation.value(), out.translation.value());
}

/// Ground-truth rotation in the regressor's parameterization. Quaternions are
/// flipped onto the hemisphere of `pred`.
inline std::vector<double> target_rotation(RotationMode mode, const Pose& gt, std::span<const double> pred) {
  if (mode == RotationMode::Quaternion) {
    Vec4 q = gt.unit_rotation().coeffs();
    double dot = 0.0;
    for (int k = 0; k < 4; ++k) dot += q[k] * pred[k];
    if (dot < 0.0) q = -q;
    return {q[0], q[1], q[2], q[3]};
  }
  const Vec3 v = gt.mode() == RotationMode::LogQuaternion ? std::get<LogQuaternion>(gt.rotation).v
                                                          : quat_log(gt.unit_rotation().canonical()).v;
  return {v[0], v[1], v[2]};
}

/// |t - t_hat|_1 e^-beta + beta + |q - q_hat|_1 e^-alpha + alpha.
inline diff::Var pose_loss(diff::Tape& tape, diff::Var rotation, diff::Var translation, const Pose& gt,
                           diff::Var beta, diff::Var alpha, RotationMode mode) {
  const Vec3& tg = gt.translation.t;
  auto t_gt = tape.constant({tg[0], tg[1], tg[2]});
  auto q_gt = tape.constant(target_rotation(mode, gt, rotation.value()));
  auto dt = diff::l1_distance(translation, t_gt);
  auto dq = diff::l1_distance(rotation, q_gt);
  auto lt = diff::add(diff::mul(dt, diff::exp(diff::scale(beta, -1.0))), beta);
  auto lq = diff::add(diff::mul(dq, diff::exp(diff::scale(alpha, -1.0))), alpha);
  return diff::add(lt, lq);
}

/// Value-level pose loss for two poses in the same parameterization.
inline double pose_loss(const Pose& pred, const Pose& gt, double beta, double alpha) {
  if (pred.mode() != gt.mode()) throw ModeMismatch("pose_loss needs poses in the same parameterization");
  diff::Tape tape;
  const Eigen::VectorXd v = pred.vector();
  const std::size_t k = rotation_width(pred.mode());
  auto rot = tape.constant({v.data(), v.data() + k});
  auto t = tape.constant({v.data() + k, v.data() + k + 3});
  auto b = tape.constant({beta});
  auto a = tape.constant({alpha});
  return pose_loss(tape, rot, t, gt, b, a, pred.mode()).item();
}

/// Records the discriminator on concat(features, replicated pose).
inline diff::Var disc_forward(const Discriminator& disc, const diff::Binding& params,
                              std::optional<diff::Var> features, diff::Var pose) {
  if (pose.size() != pose_width(disc.mode())) {
    throw ShapeMismatch("pose vector of length " + std::to_string(pose.size()) + " for a '" +
                        to_string(disc.mode()) + "' discriminator");
  }
  diff::Var tiled = diff::tile(pose, disc.feature_dim());
  diff::Var h = tiled;
  if (disc.use_features()) {
    if (!features || features->size() != disc.feature_dim()) {
      throw ShapeMismatch("discriminator expects " + std::to_string(disc.feature_dim()) + " features");
    }
    h = diff::concat(*features, tiled);
  }
  for (std::size_t i = 0; i < disc.depth(); ++i) {
    h = diff::elu(diff::affine(h, params[detail::layer_name("layer", i, "weight")],
                               params[detail::layer_name("layer", i, "bias")]));
  }
  return diff::sigmoid(diff::affine(h, params["out.weight"], params["out.bias"]));
}

inline std::vector<double> as_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

/// Discriminator output for one (features, pose) pair.
inline double disc_output(const Discriminator& disc, std::span<const double> features, const Pose& pose) {
  diff::Tape tape;
  auto b = diff::bind(tape, disc.params(), false);
  auto f = tape.constant({features.begin(), features.end()});
  auto p = tape.constant(as_vector(pose.vector()));
  return disc_forward(disc, b, f, p).item();
}

/// bce(D(f, p_gt), 1) + bce(D(f, p_pred), 0). Both poses enter as constants.
inline diff::Var disc_loss(diff::Tape& tape, const Discriminator& disc, const diff::Binding& params,
                           diff::Var features, std::span<const double> pose_gt, std::span<const double> pose_pred) {
  auto real = tape.constant({pose_gt.begin(), pose_gt.end()});
  auto fake = tape.constant({pose_pred.begin(), pose_pred.end()});
  auto l_real = diff::bce(disc_forward(disc, params, features, real), 1.0);
  auto l_fake = diff::bce(disc_forward(disc, params, features, fake), 0.0);
  return diff::add(l_real, l_fake);
}

struct GenLossTerms {
  diff::Var total;
  diff::Var pose;
  std::optional<diff::Var> adversarial;
};

/// L_pose + lambda * bce(D(f, p_hat), 1). The discriminator binding is
/// expected to be frozen; with lambda == 0 the adversarial term is not
/// recorded at all.
inline GenLossTerms gen_loss(diff::Tape& tape, const RegressorOutput& out, const Discriminator& disc,
                             const diff::Binding& disc_params, diff::Var features, const Pose& gt, double lambda,
                             RotationMode mode) {
  GenLossTerms terms;
  terms.pose = pose_loss(tape, out.rotation, out.translation, gt, out.beta, out.alpha, mode);
  terms.total = terms.pose;
  if (lambda > 0.0) {
    terms.adversarial = diff::bce(disc_forward(disc, disc_params, features, out.pose()), 1.0);
    terms.total = diff::add(terms.pose, diff::scale(*terms.adversarial, lambda));
  }
  return terms;
}

}  // namespace advpose

#endif
