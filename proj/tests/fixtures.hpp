#pragma once

// Small datasets and configs that keep the unit tests fast.

#include <filesystem>
#include <random>
#include <string>

#include "advpose/scenes.hpp"
#include "advpose/train.hpp"

namespace fixtures {

inline advpose::DatasetParams tiny_scene(advpose::RotationMode mode, std::uint64_t seed = 5) {
  advpose::DatasetParams p;
  p.seed = seed;
  p.n_landmarks = 16;
  p.n_frames = 60;
  p.hidden_dim = 32;
  p.feature_dim = advpose::default_feature_dim(mode);
  return p;
}

inline advpose::TrainConfig tiny_train(advpose::RotationMode mode, std::uint64_t seed = 3) {
  advpose::TrainConfig c;
  c.mode = mode;
  c.seed = seed;
  c.total_epochs = 6;
  c.warmup_epochs = 2;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.disc_lr = 1e-3;
  c.lambda = 0.05;
  c.regressor_hidden = {16, 16};
  c.disc_hidden = {8, 4};
  return c;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("advpose-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace fixtures
