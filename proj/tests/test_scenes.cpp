#include <gtest/gtest.h>

#include "advpose/scenes.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace advpose;

TEST(Scenes, GenerateSceneIsSeededAndBounded) {
  const Vec3 extent(2.0, 1.0, 0.5);
  const SceneModel a = generate_scene(7, 40, extent), b = generate_scene(7, 40, extent);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == generate_scene(8, 40, extent));
  ASSERT_EQ(a.landmarks.size(), 40u);
  for (const Vec3& p : a.landmarks) EXPECT_TRUE((p.array().abs() <= extent.array()).all());
  EXPECT_EQ(a.observation_dim(), 120u);
  EXPECT_THROW(generate_scene(1, 7, extent), TooFewLandmarks);
}

TEST(Scenes, ObserveMatchesCameraFrameTransform) {
  std::mt19937_64 rng(1);
  const SceneModel scene = generate_scene(3, 10, Vec3::Ones());
  for (int i = 0; i < 50; ++i) {
    Pose pose;
    pose.rotation = normalize(oracle::random_unit_quaternion(rng));
    const auto t = oracle::random_vector(rng, 3);
    pose.translation.t = Vec3(t[0], t[1], t[2]);
    const oracle::Mat3 r = oracle::rotation_matrix(pose.unit_rotation().coeffs());
    const auto obs = observe(scene, pose);
    for (std::size_t j = 0; j < scene.landmarks.size(); ++j) {
      const Vec3 expected = r.transpose() * (scene.landmarks[j] - pose.translation.t);
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(obs[3 * j + k], expected[k], 1e-12);
    }
    // The same pose in log form observes identically.
    const auto obs_log = observe(scene, pose.as(RotationMode::LogQuaternion));
    for (std::size_t j = 0; j < obs.size(); ++j) EXPECT_NEAR(obs[j], obs_log[j], 1e-12);
  }
}

TEST(Scenes, TrajectoryIsSmoothAndBounded) {
  const SceneModel scene = generate_scene(3, 16, Vec3(1.0, 2.0, 1.0));
  TrajectoryOptions opts;
  opts.camera_region = 0.5;
  const auto poses = sample_trajectory(scene, 400, 9, 3.0, opts);
  ASSERT_EQ(poses.size(), 400u);
  const Vec3 bound = 1.5 * opts.camera_region * scene.extent;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    EXPECT_TRUE((poses[i].translation.t.array().abs() <= bound.array() + 1e-12).all());
    EXPECT_GE(std::get<UnitQuaternion>(poses[i].rotation).w(), 0.0);
    if (i > 0) EXPECT_LE(rotation_error_deg(poses[i - 1], poses[i]), 3.0 + 1e-9);
  }
  EXPECT_EQ(sample_trajectory(scene, 50, 9, 3.0, opts)[49].vector(), poses[49].vector());
}

TEST(Scenes, TiltStaysNearTheLimit) {
  const SceneModel scene = generate_scene(3, 16, Vec3::Ones());
  TrajectoryOptions opts;
  opts.max_tilt_deg = 20.0;
  double worst = 0.0;
  for (const Pose& p : sample_trajectory(scene, 2000, 4, 3.0, opts)) {
    worst = std::max(worst, rotation_error_deg(p.unit_rotation(), UnitQuaternion::identity()));
  }
  // Soft pull-back: a little overshoot is allowed, unbounded drift is not.
  EXPECT_LT(worst, 2.0 * opts.max_tilt_deg);
}

TEST(Scenes, FeaturesMatchNaiveComputation) {
  const ExtractorParams ex(11, 12, 9, 7);
  std::mt19937_64 rng(2);
  const auto obs = oracle::random_vector(rng, 12, -2.0, 2.0);
  const auto f = extract_features(obs, ex);
  ASSERT_EQ(f.size(), 7u);
  std::vector<double> h(9);
  for (int i = 0; i < 9; ++i) {
    double s = 0.0;
    for (int j = 0; j < 12; ++j) s += ex.projection()(i, j) * obs[j];
    h[i] = std::tanh(s);
  }
  for (int i = 0; i < 7; ++i) {
    double s = 0.0;
    for (int j = 0; j < 9; ++j) s += ex.reduction()(i, j) * h[j];
    EXPECT_NEAR(f[i], s, 1e-12);
  }
  EXPECT_THROW(extract_features(std::vector<double>(5, 0.0), ex), ShapeMismatch);
}

TEST(Scenes, ExtractorScaleSetsProjectionSpread) {
  const ExtractorParams a(4, 300, 200, 10, 0.6), b(4, 300, 200, 10, 1.2);
  // Same draws, scaled.
  EXPECT_NEAR(b.projection()(3, 5), 2.0 * a.projection()(3, 5), 1e-15);
  const double sd = std::sqrt(a.projection().array().square().mean());
  EXPECT_NEAR(sd, 0.6 / std::sqrt(300.0), 0.02 / std::sqrt(300.0));
}

TEST(Scenes, ReplicatePoseTilesCyclically) {
  const std::vector<double> pose{1, 2, 3, 4, 5, 6, 7};
  const auto t = replicate_pose(pose, 16);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(t[i], pose[i % 7]);
  EXPECT_EQ(detile_pose(t, 7), pose);
  EXPECT_THROW(replicate_pose(pose, 6), ShapeMismatch);
}

TEST(Scenes, DatasetIsDeterministicWithDisjointSplits) {
  const auto p = fixtures::tiny_scene(RotationMode::Quaternion);
  const Dataset a = make_dataset(p), b = make_dataset(p);
  ASSERT_EQ(a.train.size(), 48u);
  ASSERT_EQ(a.test.size(), 12u);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].observation, b.train[i].observation);
    EXPECT_EQ(a.train[i].features, b.train[i].features);
  }
  EXPECT_NO_THROW(validate_splits(a));
  EXPECT_EQ(a.train[0].features.size(), p.feature_dim);
  EXPECT_EQ(a.train[0].features, extract_features(a.train[0].observation, a.extractor));
}

TEST(Scenes, NoiseChangesObservationsOnly) {
  auto p = fixtures::tiny_scene(RotationMode::Quaternion);
  const Dataset clean = make_dataset(p);
  p.observation_noise = 0.01;
  const Dataset noisy = make_dataset(p);
  EXPECT_EQ(clean.train[3].pose_gt.vector(), noisy.train[3].pose_gt.vector());
  EXPECT_NE(clean.train[3].observation, noisy.train[3].observation);
  EXPECT_EQ(noisy.train[3].features, extract_features(noisy.train[3].observation, noisy.extractor));
}

TEST(Scenes, WithFeatureDimSharesProjection) {
  const Dataset d = make_dataset(fixtures::tiny_scene(RotationMode::Quaternion));
  const Dataset w = with_feature_dim(d, 30);
  EXPECT_EQ(w.extractor.projection(), d.extractor.projection());
  EXPECT_EQ(w.train[0].features.size(), 30u);
  EXPECT_EQ(w.params.feature_dim, 30u);
  EXPECT_EQ(w.train[0].observation, d.train[0].observation);
}

TEST(Scenes, InvalidParamsAreRejected) {
  auto p = fixtures::tiny_scene(RotationMode::Quaternion);
  p.train_fraction = 1.0;
  EXPECT_THROW(make_dataset(p), InvalidConfig);
  p = fixtures::tiny_scene(RotationMode::Quaternion);
  p.n_landmarks = 4;
  EXPECT_THROW(make_dataset(p), TooFewLandmarks);
}

TEST(DatasetFile, Roundtrip) {
  fixtures::TempDir dir("ds");
  auto p = fixtures::tiny_scene(RotationMode::LogQuaternion);
  p.projection_scale = 0.9;
  p.camera_region = 0.5;
  const Dataset d = make_dataset(p);
  save_dataset(d, dir / "d.apds");
  const Dataset r = load_dataset(dir / "d.apds");
  EXPECT_EQ(r.params, d.params);
  EXPECT_EQ(r.scene, d.scene);
  EXPECT_EQ(r.extractor.projection(), d.extractor.projection());
  EXPECT_EQ(r.extractor.reduction(), d.extractor.reduction());
  ASSERT_EQ(r.test.size(), d.test.size());
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    EXPECT_EQ(r.test[i].pose_gt.vector(), d.test[i].pose_gt.vector());
    EXPECT_EQ(r.test[i].observation, d.test[i].observation);
    EXPECT_EQ(r.test[i].features, d.test[i].features);
  }
}

TEST(DatasetFile, CorruptionIsDetected) {
  fixtures::TempDir dir("ds");
  save_dataset(make_dataset(fixtures::tiny_scene(RotationMode::Quaternion)), dir / "d.apds");
  auto bytes = fixtures::read_bytes(dir / "d.apds");
  bytes[bytes.size() / 2] ^= 0x01;
  fixtures::write_bytes(dir / "bad.apds", bytes);
  EXPECT_THROW(load_dataset(dir / "bad.apds"), ChecksumMismatch);
  bytes.resize(3);
  fixtures::write_bytes(dir / "short.apds", bytes);
  EXPECT_THROW(load_dataset(dir / "short.apds"), ChecksumMismatch);
  EXPECT_THROW(load_dataset(dir / "missing.apds"), IoError);
}

TEST(DatasetFile, VersionIsChecked) {
  fixtures::TempDir dir("ds");
  io::Writer w;
  w.bytes("APDS", 4);
  w.u32(kDatasetVersion + 1);
  w.finish_to(dir / "future.apds");
  EXPECT_THROW(load_dataset(dir / "future.apds"), FormatVersionMismatch);
  io::Writer x;
  x.bytes("NOPE", 4);
  x.finish_to(dir / "other.apds");
  EXPECT_THROW(load_dataset(dir / "other.apds"), IoError);
}
