#ifndef ADVPOSE_SCENES_HPP
#define ADVPOSE_SCENES_HPP

// Synthetic scenes: random 3D landmark sets, smooth camera trajectories, the
// per-frame observation of every landmark, and a frozen random feature
// extractor f(x).
//
// Camera convention: a pose (q, t) maps camera coordinates to world
// coordinates, X_world = R(q) X_cam + t. A landmark is therefore observed at
// X_cam = R(q)^T (X_world - t): translate by -t, then rotate by q^-1.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "advpose/binary_io.hpp"
#include "advpose/errors.hpp"
#include "advpose/quat_geom.hpp"

namespace advpose {

struct SceneModel {
  std::vector<Vec3> landmarks;
  Vec3 extent = Vec3::Ones();
  std::uint64_t seed = 0;

  std::size_t observation_dim() const { return 3 * landmarks.size(); }
  bool operator==(const SceneModel& o) const {
    return landmarks == o.landmarks && extent == o.extent && seed == o.seed;
  }
};

inline SceneModel generate_scene(std::uint64_t seed, std::size_t n_landmarks, const Vec3& extent) {
  if (n_landmarks < 8) throw TooFewLandmarks(n_landmarks);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  SceneModel s;
  s.seed = seed;
  s.extent = extent;
  s.landmarks.reserve(n_landmarks);
  for (std::size_t i = 0; i < n_landmarks; ++i) {
    Vec3 p;
    for (int k = 0; k < 3; ++k) p[k] = unit(rng) * extent[k];
    s.landmarks.push_back(p);
  }
  return s;
}

struct TrajectoryOptions {
  /// Rotations are pulled back toward the identity beyond this angle.
  double max_tilt_deg = 30.0;
  /// Standard deviation of the per-frame translation acceleration, as a
  /// fraction of the scene extent.
  double translation_step = 0.03;
  /// Fraction of the scene extent the camera roams in, in (0, 1].
  double camera_region = 1.0;
};

/// Smooth random walk of camera poses. Consecutive rotations differ by at most
/// `smoothness_deg`; translations stay inside 1.5x the scene extent.
inline std::vector<Pose> sample_trajectory(const SceneModel& scene, std::size_t n_frames, std::uint64_t seed,
                                           double smoothness_deg, const TrajectoryOptions& opts = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_direction = [&] {
    Vec3 d(gauss(rng), gauss(rng), gauss(rng));
    return Vec3(d / d.norm());
  };
  const double deg = std::numbers::pi / 180.0;
  const double max_tilt = opts.max_tilt_deg * deg;
  const Vec3 region = opts.camera_region * scene.extent;
  const Vec3 bound = 1.5 * region;

  Vec3 t;
  for (int k = 0; k < 3; ++k) t[k] = unit(rng) * region[k];
  Vec3 vel = Vec3::Zero();
  UnitQuaternion q = quat_exp({random_direction() * (0.5 * max_tilt * u01(rng))}).canonical();

  std::vector<Pose> out;
  out.reserve(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    out.push_back(Pose{q, Translation{t}});

    for (int k = 0; k < 3; ++k) vel[k] = 0.8 * vel[k] + opts.translation_step * region[k] * gauss(rng);
    t += vel;
    for (int k = 0; k < 3; ++k) {
      if (t[k] > bound[k]) {
        t[k] = 2 * bound[k] - t[k];
        vel[k] = -vel[k];
      } else if (t[k] < -bound[k]) {
        t[k] = -2 * bound[k] - t[k];
        vel[k] = -vel[k];
      }
    }

    const double angle = smoothness_deg * deg * u01(rng);
    const Vec3 rotvec = 2.0 * quat_log(q).v;
    Vec3 axis = random_direction();
    if (max_tilt > 0.0) axis -= 1.5 * rotvec / max_tilt;
    if (axis.norm() < 1e-12) axis = random_direction();
    axis.normalize();
    q = (q * quat_exp({axis * (0.5 * angle)})).canonical();
  }
  return out;
}

/// Every landmark expressed in the camera frame, flattened in landmark order.
inline std::vector<double> observe(const SceneModel& scene, const Pose& pose) {
  const UnitQuaternion inv = pose.unit_rotation().conjugate();
  const Vec3& t = pose.translation.t;
  std::vector<double> obs;
  obs.reserve(scene.observation_dim());
  for (const Vec3& X : scene.landmarks) {
    const Vec3 c = inv.rotate(X - t);
    obs.insert(obs.end(), {c[0], c[1], c[2]});
  }
  return obs;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Frozen random feature map: reduction * tanh(projection * observation).
/// Both matrices are fixed at construction.
class ExtractorParams {
 public:
  ExtractorParams() = default;
  /// `projection_scale` is the tanh pre-activation gain; the projection
  /// entries have standard deviation projection_scale / sqrt(observation_dim).
  ExtractorParams(std::uint64_t seed, std::size_t observation_dim, std::size_t hidden_dim, std::size_t feature_dim,
                  double projection_scale = 0.6)
      : seed_(seed),
        projection_scale_(projection_scale),
        projection_(hidden_dim, observation_dim),
        reduction_(feature_dim, hidden_dim) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    // The projection is drawn first so that extractors sharing a seed share it.
    const double ps = projection_scale / std::sqrt(static_cast<double>(observation_dim));
    for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = ps * gauss(rng);
    const double rs = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    for (Eigen::Index i = 0; i < reduction_.size(); ++i) reduction_.data()[i] = rs * gauss(rng);
  }

  std::uint64_t seed() const { return seed_; }
  double projection_scale() const { return projection_scale_; }
  std::size_t observation_dim() const { return static_cast<std::size_t>(projection_.cols()); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(projection_.rows()); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(reduction_.rows()); }
  const RowMatrix& projection() const { return projection_; }
  const RowMatrix& reduction() const { return reduction_; }

 private:
  std::uint64_t seed_ = 0;
  double projection_scale_ = 0.6;
  RowMatrix projection_;
  RowMatrix reduction_;
};

/// Default feature width per parameterization mode (60 for log-quaternion,
/// 70 for quaternion poses).
inline constexpr std::size_t default_feature_dim(RotationMode mode) {
  return mode == RotationMode::Quaternion ? 70 : 60;
}

inline std::vector<double> extract_features(std::span<const double> observation, const ExtractorParams& ex) {
  if (observation.size() != ex.observation_dim()) {
    throw ShapeMismatch("observation has " + std::to_string(observation.size()) + " entries, extractor expects " +
                        std::to_string(ex.observation_dim()));
  }
  Eigen::Map<const Eigen::VectorXd> x(observation.data(), static_cast<Eigen::Index>(observation.size()));
  const Eigen::VectorXd h = (ex.projection() * x).array().tanh().matrix();
  const Eigen::VectorXd f = ex.reduction() * h;
  return {f.data(), f.data() + f.size()};
}

/// Tiles the pose vector cyclically up to length d_f: entry i is
/// pose[i mod k]. The last copy is truncated when k does not divide d_f.
inline std::vector<double> replicate_pose(std::span<const double> pose, std::size_t d_f) {
  if (pose.empty() || pose.size() > d_f) {
    throw ShapeMismatch("cannot replicate a pose of length " + std::to_string(pose.size()) + " to width " +
                        std::to_string(d_f));
  }
  std::vector<double> out(d_f);
  for (std::size_t i = 0; i < d_f; ++i) out[i] = pose[i % pose.size()];
  return out;
}

inline std::vector<double> replicate_pose(const Pose& p, std::size_t d_f) {
  const Eigen::VectorXd v = p.vector();
  return replicate_pose(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), d_f);
}

/// Inverse of replicate_pose: the first full copy.
inline std::vector<double> detile_pose(std::span<const double> tiled, std::size_t k) {
  if (k > tiled.size()) throw ShapeMismatch("tiled vector shorter than one pose");
  return {tiled.begin(), tiled.begin() + static_cast<std::ptrdiff_t>(k)};
}

struct FrameSample {
  Pose pose_gt;
  std::vector<double> observation;
  std::vector<double> features;
};

/// Everything needed to regenerate a dataset.
struct DatasetParams {
  std::uint64_t seed = 1;
  std::size_t n_landmarks = 64;
  Vec3 extent = Vec3::Ones();
  std::size_t n_frames = 640;
  double train_fraction = 0.8;
  std::size_t train_sequences = 4;
  std::size_t test_sequences = 1;
  double smoothness_deg = 3.0;
  double max_tilt_deg = 30.0;
  double translation_step = 0.03;
  double camera_region = 1.0;
  double observation_noise = 0.0;
  std::size_t hidden_dim = 128;
  double projection_scale = 0.6;
  std::size_t feature_dim = 70;

  bool operator==(const DatasetParams&) const = default;
};

struct Dataset {
  DatasetParams params;
  SceneModel scene;
  ExtractorParams extractor;
  std::vector<FrameSample> train;
  std::vector<FrameSample> test;
};

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline FrameSample make_sample(const SceneModel& scene, const ExtractorParams& ex, const Pose& pose, double noise,
                               std::mt19937_64& rng) {
  FrameSample s;
  s.pose_gt = pose;
  s.observation = observe(scene, pose);
  if (noise > 0.0) {
    std::normal_distribution<double> gauss(0.0, noise);
    for (double& v : s.observation) v += gauss(rng);
  }
  s.features = extract_features(s.observation, ex);
  return s;
}

/// Checks that no ground-truth pose appears in both splits.
inline void validate_splits(const Dataset& d) {
  for (const auto& a : d.train) {
    for (const auto& b : d.test) {
      if (a.pose_gt.vector() == b.pose_gt.vector()) throw Error("a ground-truth pose appears in both splits");
    }
  }
}

inline Dataset make_dataset(const DatasetParams& p) {
  if (p.n_frames < 2) throw InvalidConfig("scene.n_frames", "need at least 2 frames");
  if (!(p.train_fraction > 0.0 && p.train_fraction < 1.0)) {
    throw InvalidConfig("scene.train_fraction", "must lie strictly between 0 and 1");
  }
  if (p.train_sequences == 0 || p.test_sequences == 0) {
    throw InvalidConfig("scene.train_sequences", "need at least one sequence per split");
  }
  Dataset d;
  d.params = p;
  d.scene = generate_scene(derive_seed(p.seed, 1), p.n_landmarks, p.extent);
  d.extractor = ExtractorParams(derive_seed(p.seed, 2), d.scene.observation_dim(), p.hidden_dim, p.feature_dim,
                                p.projection_scale);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(p.n_frames) * p.train_fraction));
  const std::size_t n_test = p.n_frames - n_train;
  TrajectoryOptions opts{p.max_tilt_deg, p.translation_step, p.camera_region};
  std::mt19937_64 noise_rng(derive_seed(p.seed, 3));

  auto fill = [&](std::vector<FrameSample>& split, std::size_t total, std::size_t sequences, std::uint64_t stream) {
    for (std::size_t s = 0; s < sequences; ++s) {
      const std::size_t len = total / sequences + (s < total % sequences ? 1 : 0);
      if (len == 0) continue;
      for (const Pose& pose : sample_trajectory(d.scene, len, derive_seed(p.seed, stream + s), p.smoothness_deg, opts)) {
        split.push_back(make_sample(d.scene, d.extractor, pose, p.observation_noise, noise_rng));
      }
    }
  };
  fill(d.train, n_train, p.train_sequences, 1000);
  fill(d.test, n_test, p.test_sequences, 2000);
  validate_splits(d);
  return d;
}

/// Same dataset with features recomputed by an extractor of width `d_f`
/// sharing the original seed and projection.
inline Dataset with_feature_dim(const Dataset& d, std::size_t d_f) {
  Dataset out = d;
  out.params.feature_dim = d_f;
  out.extractor = ExtractorParams(d.extractor.seed(), d.extractor.observation_dim(), d.extractor.hidden_dim(), d_f,
                                 d.extractor.projection_scale());
  for (auto* split : {&out.train, &out.test}) {
    for (auto& s : *split) s.features = extract_features(s.observation, out.extractor);
  }
  return out;
}

// Dataset file layout (little-endian), see docs/FORMATS.md:
//   "APDS", u32 version, generation params, scene, extractor dims + seed,
//   u32 n_train, u32 n_test, samples, u32 crc32.
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void write_params(io::Writer& w, const DatasetParams& p) {
  w.u64(p.seed);
  w.u64(p.n_landmarks);
  for (int k = 0; k < 3; ++k) w.f64(p.extent[k]);
  w.u64(p.n_frames);
  w.f64(p.train_fraction);
  w.u64(p.train_sequences);
  w.u64(p.test_sequences);
  w.f64(p.smoothness_deg);
  w.f64(p.max_tilt_deg);
  w.f64(p.translation_step);
  w.f64(p.camera_region);
  w.f64(p.observation_noise);
  w.u64(p.hidden_dim);
  w.f64(p.projection_scale);
  w.u64(p.feature_dim);
}

inline DatasetParams read_params(io::Reader& r) {
  DatasetParams p;
  p.seed = r.u64();
  p.n_landmarks = r.u64();
  for (int k = 0; k < 3; ++k) p.extent[k] = r.f64();
  p.n_frames = r.u64();
  p.train_fraction = r.f64();
  p.train_sequences = r.u64();
  p.test_sequences = r.u64();
  p.smoothness_deg = r.f64();
  p.max_tilt_deg = r.f64();
  p.translation_step = r.f64();
  p.camera_region = r.f64();
  p.observation_noise = r.f64();
  p.hidden_dim = r.u64();
  p.projection_scale = r.f64();
  p.feature_dim = r.u64();
  return p;
}

inline void write_sample(io::Writer& w, const FrameSample& s) {
  const Vec4 q = s.pose_gt.unit_rotation().coeffs();
  for (int k = 0; k < 4; ++k) w.f64(q[k]);
  for (int k = 0; k < 3; ++k) w.f64(s.pose_gt.translation.t[k]);
  w.u32(static_cast<std::uint32_t>(s.observation.size()));
  w.f64s(s.observation);
  w.u32(static_cast<std::uint32_t>(s.features.size()));
  w.f64s(s.features);
}

inline FrameSample read_sample(io::Reader& r) {
  FrameSample s;
  Vec4 q;
  for (int k = 0; k < 4; ++k) q[k] = r.f64();
  s.pose_gt.rotation = UnitQuaternion::from_unit(q);
  for (int k = 0; k < 3; ++k) s.pose_gt.translation.t[k] = r.f64();
  s.observation = r.f64s(r.u32());
  s.features = r.f64s(r.u32());
  return s;
}

}  // namespace detail

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes("APDS", 4);
  w.u32(kDatasetVersion);
  detail::write_params(w, d.params);
  w.u64(d.scene.seed);
  for (int k = 0; k < 3; ++k) w.f64(d.scene.extent[k]);
  w.u32(static_cast<std::uint32_t>(d.scene.landmarks.size()));
  for (const Vec3& p : d.scene.landmarks) {
    for (int k = 0; k < 3; ++k) w.f64(p[k]);
  }
  w.u64(d.extractor.seed());
  w.u32(static_cast<std::uint32_t>(d.extractor.observation_dim()));
  w.u32(static_cast<std::uint32_t>(d.extractor.hidden_dim()));
  w.u32(static_cast<std::uint32_t>(d.extractor.feature_dim()));
  w.u32(static_cast<std::uint32_t>(d.train.size()));
  w.u32(static_cast<std::uint32_t>(d.test.size()));
  for (const auto& s : d.train) detail::write_sample(w, s);
  for (const auto& s : d.test) detail::write_sample(w, s);
  w.finish_to(path);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  auto r = io::Reader::open_verified(path, "dataset");
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "APDS") throw IoError("'" + path.string() + "' is not a dataset file");
  const auto version = r.u32();
  if (version != kDatasetVersion) throw FormatVersionMismatch("dataset", version, kDatasetVersion);
  Dataset d;
  d.params = detail::read_params(r);
  d.scene.seed = r.u64();
  for (int k = 0; k < 3; ++k) d.scene.extent[k] = r.f64();
  d.scene.landmarks.resize(r.u32());
  for (Vec3& p : d.scene.landmarks) {
    for (int k = 0; k < 3; ++k) p[k] = r.f64();
  }
  const std::uint64_t ex_seed = r.u64();
  const std::size_t obs_dim = r.u32();
  const std::size_t hidden = r.u32();
  const std::size_t d_f = r.u32();
  d.extractor = ExtractorParams(ex_seed, obs_dim, hidden, d_f, d.params.projection_scale);
  const std::size_t n_train = r.u32();
  const std::size_t n_test = r.u32();
  for (std::size_t i = 0; i < n_train; ++i) d.train.push_back(detail::read_sample(r));
  for (std::size_t i = 0; i < n_test; ++i) d.test.push_back(detail::read_sample(r));
  if (!r.at_end()) throw IoError("trailing bytes in dataset '" + path.string() + "'");
  return d;
}

}  // namespace advpose

#endif
