#ifndef ADVPOSE_CHECKPOINT_HPP
#define ADVPOSE_CHECKPOINT_HPP

// Checkpoint container. Byte layout (all integers little-endian):
//
//   magic        4 bytes  "APCK"
//   version      u32      kCheckpointVersion
//   mode         u8       0 = quaternion, 1 = log-quaternion
//   metadata     u32 length + UTF-8 JSON text
//   entry count  u32
//   entries      name (u32 length + bytes), rank u32, dims u64[rank],
//                values f64[prod(dims)]
//   crc32        u32 over every preceding byte
//
// See docs/FORMATS.md.

#include <filesystem>
#include <map>
#include <string>

#include "advpose/binary_io.hpp"
#include "advpose/diffcore.hpp"
#include "advpose/quat_geom.hpp"

namespace advpose {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RotationMode mode = RotationMode::Quaternion;
  std::string metadata = "{}";
  std::map<std::string, diff::Tensor> arrays;

  bool operator==(const Checkpoint& o) const {
    return mode == o.mode && metadata == o.metadata && arrays == o.arrays;
  }
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes("APCK", 4);
  w.u32(kCheckpointVersion);
  w.u8(ck.mode == RotationMode::Quaternion ? 0 : 1);
  w.str(ck.metadata);
  w.u32(static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& [name, t] : ck.arrays) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.u64(d);
    w.f64s(t.values);
  }
  w.finish_to(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = io::Reader::open_verified(path, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "APCK") throw IoError("'" + path.string() + "' is not a checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatVersionMismatch("checkpoint", version, kCheckpointVersion);
  Checkpoint ck;
  const auto mode = r.u8();
  if (mode > 1) throw IoError("checkpoint has unknown rotation mode " + std::to_string(mode));
  ck.mode = mode == 0 ? RotationMode::Quaternion : RotationMode::LogQuaternion;
  ck.metadata = r.str();
  const auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    diff::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    auto values = r.f64s(diff::shape_size(shape));
    ck.arrays.emplace(std::move(name), diff::Tensor(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) throw IoError("trailing bytes in checkpoint '" + path.string() + "'");
  return ck;
}

/// Copies every parameter of `params` into `ck` under `prefix`.
inline void store_params(Checkpoint& ck, const std::string& prefix, const diff::ParamStore& params) {
  for (const auto& [name, t] : params) ck.arrays[prefix + name] = diff::Tensor(t.shape, t.values);
}

/// Extracts every entry under `prefix` as a trainable parameter store.
inline diff::ParamStore load_params(const Checkpoint& ck, const std::string& prefix) {
  diff::ParamStore out;
  for (const auto& [name, t] : ck.arrays) {
    if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), diff::Tensor(t.shape, t.values, true));
  }
  return out;
}

inline void store_optimizer(Checkpoint& ck, const std::string& prefix, const diff::OptimizerState& s) {
  ck.arrays[prefix + "hyper"] =
      diff::Tensor::vector({s.lr, s.beta1, s.beta2, s.eps, static_cast<double>(s.step)});
  for (const auto& [name, m] : s.m) ck.arrays[prefix + "m." + name] = diff::Tensor::vector(m);
  for (const auto& [name, v] : s.v) ck.arrays[prefix + "v." + name] = diff::Tensor::vector(v);
}

inline diff::OptimizerState load_optimizer(const Checkpoint& ck, const std::string& prefix) {
  diff::OptimizerState s;
  auto it = ck.arrays.find(prefix + "hyper");
  if (it == ck.arrays.end() || it->second.size() != 5) throw IoError("checkpoint lacks optimizer '" + prefix + "'");
  const auto& h = it->second.values;
  s.lr = h[0];
  s.beta1 = h[1];
  s.beta2 = h[2];
  s.eps = h[3];
  s.step = static_cast<std::int64_t>(h[4]);
  for (const auto& [name, t] : ck.arrays) {
    if (name.rfind(prefix + "m.", 0) == 0) s.m[name.substr(prefix.size() + 2)] = t.values;
    if (name.rfind(prefix + "v.", 0) == 0) s.v[name.substr(prefix.size() + 2)] = t.values;
  }
  return s;
}

}  // namespace advpose

#endif
