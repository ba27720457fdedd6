#ifndef ADVPOSE_QUAT_GEOM_HPP
#define ADVPOSE_QUAT_GEOM_HPP

// Quaternion and pose mathematics: the two rotation parameterizations, error
// metrics, and the constrained great-circle update used by pose refinement.
//
// Quaternions are stored as (w, x, y, z) with w the real part.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <variant>

#include "advpose/errors.hpp"

namespace advpose {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

enum class RotationMode { Quaternion, LogQuaternion };

inline std::string to_string(RotationMode mode) {
  return mode == RotationMode::Quaternion ? "quat" : "logq";
}

inline RotationMode parse_rotation_mode(const std::string& s) {
  if (s == "quat") return RotationMode::Quaternion;
  if (s == "logq") return RotationMode::LogQuaternion;
  throw InvalidConfig("mode", "expected 'quat' or 'logq', got '" + s + "'");
}

/// Width of the rotation block of a pose vector (4 for quaternions, 3 for logs).
inline constexpr std::size_t rotation_width(RotationMode mode) {
  return mode == RotationMode::Quaternion ? 4 : 3;
}

inline constexpr std::size_t pose_width(RotationMode mode) { return rotation_width(mode) + 3; }

/// A rotation as a point on the unit 3-sphere. Instances are unit-norm within
/// 1e-9; q and -q are the same rotation.
class UnitQuaternion {
 public:
  UnitQuaternion() : q_(1.0, 0.0, 0.0, 0.0) {}

  static UnitQuaternion identity() { return {}; }

  /// Wraps a vector the caller guarantees is already unit-norm. No sign change.
  static UnitQuaternion from_unit(const Vec4& q) { return UnitQuaternion(q); }

  double w() const { return q_[0]; }
  Vec3 u() const { return q_.tail<3>(); }
  const Vec4& coeffs() const { return q_; }

  /// Same rotation with w >= 0.
  UnitQuaternion canonical() const { return q_[0] < 0.0 ? UnitQuaternion(-q_) : *this; }

  UnitQuaternion operator-() const { return UnitQuaternion(-q_); }

  UnitQuaternion conjugate() const { return UnitQuaternion(Vec4(q_[0], -q_[1], -q_[2], -q_[3])); }

  /// Hamilton product.
  UnitQuaternion operator*(const UnitQuaternion& o) const {
    const double w1 = q_[0], w2 = o.q_[0];
    const Vec3 u1 = u(), u2 = o.u();
    Vec4 r;
    r[0] = w1 * w2 - u1.dot(u2);
    r.tail<3>() = w1 * u2 + w2 * u1 + u1.cross(u2);
    return UnitQuaternion(r / r.norm());
  }

  /// Rotates a 3-vector: q p q*.
  Vec3 rotate(const Vec3& p) const {
    const Vec3 uv = u();
    const Vec3 t = 2.0 * uv.cross(p);
    return p + q_[0] * t + uv.cross(t);
  }

 private:
  explicit UnitQuaternion(const Vec4& q) : q_(q) {}
  Vec4 q_;
};

/// Axis scaled by the half-angle of the rotation, in radians.
struct LogQuaternion {
  Vec3 v = Vec3::Zero();
};

struct Translation {
  Vec3 t = Vec3::Zero();
};

/// A vector in the tangent space of the unit 3-sphere at some base quaternion.
struct TangentVector {
  Vec4 v = Vec4::Zero();
};

/// Divides by the norm and flips to the w >= 0 hemisphere.
inline UnitQuaternion normalize(const Vec4& raw) {
  const double n = raw.norm();
  if (!(n > 1e-12)) throw NearZeroQuaternion(n);
  return UnitQuaternion::from_unit(raw / n).canonical();
}

/// Logarithm map. Uses atan2(|u|, w), which equals arccos(w) on the unit
/// sphere but keeps full precision for rotations near the identity.
inline LogQuaternion quat_log(const UnitQuaternion& q) {
  const Vec3 u = q.u();
  const double un = u.norm();
  if (un == 0.0) return {};
  const double half_angle = std::atan2(un, std::clamp(q.w(), -1.0, 1.0));
  return {u * (half_angle / un)};
}

/// Exponential map [cos|v|, v/|v| sin|v|]. Keeps the sign produced by the
/// formula, so quat_log(quat_exp(v)) == v for |v| < pi.
inline UnitQuaternion quat_exp(const LogQuaternion& log) {
  const double n = log.v.norm();
  if (n < 1e-8) {
    Vec4 q(1.0, log.v[0], log.v[1], log.v[2]);
    return UnitQuaternion::from_unit(q / q.norm());
  }
  Vec4 q;
  q[0] = std::cos(n);
  q.tail<3>() = log.v * (std::sin(n) / n);
  return UnitQuaternion::from_unit(q / q.norm());
}

/// Removes the component of grad along q: (I - q q^T) grad.
inline TangentVector tangent_project(const UnitQuaternion& q, const Vec4& grad) {
  const Vec4& b = q.coeffs();
  return {grad - grad.dot(b) * b};
}

/// The update direction written as (I - g g^T) g, which equals g (1 - |g|^2).
/// It is not tangent to the sphere in general; kept for comparison runs.
inline Vec4 tangent_project_literal(const Vec4& grad) { return grad * (1.0 - grad.squaredNorm()); }

namespace detail {

inline UnitQuaternion great_circle_update(const UnitQuaternion& q, const Vec4& v, double step) {
  const double gamma = v.norm();
  Vec4 r;
  if (gamma < 1e-10) {
    r = q.coeffs() + v * step;
  } else {
    r = q.coeffs() * std::cos(gamma * step) + (v / gamma) * std::sin(gamma * step);
  }
  const double n = r.norm();
  if (!(n > 1e-12)) throw NearZeroQuaternion(n);
  return UnitQuaternion::from_unit(r / n);
}

}  // namespace detail

/// Moves q along the great circle with initial direction v for arc length
/// |v| * step, then renormalizes.
inline UnitQuaternion geodesic_step(const UnitQuaternion& q, const TangentVector& v, double step) {
  return detail::great_circle_update(q, v.v, step);
}

/// Angular distance between two rotations in degrees; invariant to the sign
/// of either quaternion.
inline double rotation_error_deg(const UnitQuaternion& a, const UnitQuaternion& b) {
  const double d = std::min(1.0, std::abs(a.coeffs().dot(b.coeffs())));
  return 2.0 * std::acos(d) * 180.0 / std::numbers::pi;
}

inline double translation_error(const Translation& a, const Translation& b) { return (a.t - b.t).norm(); }

/// Camera pose: rotation in the active parameterization plus translation.
struct Pose {
  std::variant<UnitQuaternion, LogQuaternion> rotation = UnitQuaternion{};
  Translation translation;

  RotationMode mode() const {
    return std::holds_alternative<UnitQuaternion>(rotation) ? RotationMode::Quaternion
                                                            : RotationMode::LogQuaternion;
  }

  UnitQuaternion unit_rotation() const {
    if (const auto* q = std::get_if<UnitQuaternion>(&rotation)) return *q;
    return quat_exp(std::get<LogQuaternion>(rotation));
  }

  /// Flat pose vector [rotation..., tx, ty, tz] of length 7 or 6.
  Eigen::VectorXd vector() const {
    const std::size_t k = rotation_width(mode());
    Eigen::VectorXd out(k + 3);
    if (const auto* q = std::get_if<UnitQuaternion>(&rotation)) {
      out.head<4>() = q->coeffs();
    } else {
      out.head<3>() = std::get<LogQuaternion>(rotation).v;
    }
    out.tail<3>() = translation.t;
    return out;
  }

  /// Same pose expressed in `target` mode.
  Pose as(RotationMode target) const {
    if (target == mode()) return *this;
    Pose p;
    p.translation = translation;
    if (target == RotationMode::Quaternion) {
      p.rotation = quat_exp(std::get<LogQuaternion>(rotation));
    } else {
      p.rotation = quat_log(std::get<UnitQuaternion>(rotation));
    }
    return p;
  }

  /// Builds a pose from a flat vector; quaternion blocks are normalized.
  static Pose from_vector(RotationMode mode, std::span<const double> v) {
    if (v.size() != pose_width(mode)) {
      throw ShapeMismatch("pose vector has length " + std::to_string(v.size()) + ", expected " +
                          std::to_string(pose_width(mode)));
    }
    Pose p;
    const std::size_t k = rotation_width(mode);
    if (mode == RotationMode::Quaternion) {
      p.rotation = normalize(Vec4(v[0], v[1], v[2], v[3]));
    } else {
      p.rotation = LogQuaternion{Vec3(v[0], v[1], v[2])};
    }
    p.translation.t = Vec3(v[k], v[k + 1], v[k + 2]);
    return p;
  }
};

inline double rotation_error_deg(const Pose& a, const Pose& b) {
  return rotation_error_deg(a.unit_rotation(), b.unit_rotation());
}

inline double translation_error(const Pose& a, const Pose& b) {
  return translation_error(a.translation, b.translation);
}

}  // namespace advpose

#endif
