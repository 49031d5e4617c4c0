#pragma once

// Checkpoint layout (little-endian):
//   "CTCK" u32 version
//   u32-length-prefixed model spec text
//   u32 tensor count, then per tensor:
//     u32-length-prefixed name "L<layer>.<param>", u8 dtype (1 = f32, 2 = f64),
//     u8 rank (5), u64 dims[rank], raw data

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <type_traits>

#include "ctscreen/io_util.hpp"
#include "ctscreen/nn/model.hpp"

namespace ctscreen::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelSpec spec;
  Weights<T> weights;
};

template <typename T>
Bytes encode_checkpoint(const ModelSpec& spec, const Weights<T>& w) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  check_weights(spec, w);
  ByteWriter out;
  out.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("CTCK"), 4));
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put_string(spec.to_text());
  std::uint32_t count = 0;
  for (const auto& l : w.layers) count += static_cast<std::uint32_t>(l.size());
  out.put<std::uint32_t>(count);
  for (std::size_t i = 0; i < w.layers.size(); ++i)
    for (const auto& p : w.layers[i]) {
      out.put_string("L" + std::to_string(i) + "." + p.name);
      out.put<std::uint8_t>(std::is_same_v<T, float> ? 1 : 2);
      out.put<std::uint8_t>(5);
      for (auto d : p.value.shape) out.put<std::uint64_t>(d);
      out.put_array(std::span<const T>(p.value.data));
    }
  return out.take();
}

template <typename T>
Checkpoint<T> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, ErrorCode::BadCheckpoint);
  std::uint8_t magic[4];
  in.get_array(std::span<std::uint8_t>(magic, 4));
  if (std::string(reinterpret_cast<const char*>(magic), 4) != "CTCK")
    fail(ErrorCode::BadCheckpoint, "not a checkpoint file");
  if (in.get<std::uint32_t>() != kCheckpointVersion) fail(ErrorCode::BadCheckpoint, "unsupported checkpoint version");
  Checkpoint<T> ck;
  ck.spec = ModelSpec::from_text(in.get_string());
  try {
    ck.spec.validate();
  } catch (const Error& e) {
    fail(ErrorCode::BadCheckpoint, std::string("invalid model spec: ") + e.what());
  }
  ck.weights = init_weights<T>(ck.spec, 0);
  std::uint32_t expected = 0;
  for (const auto& l : ck.weights.layers) expected += static_cast<std::uint32_t>(l.size());
  if (in.get<std::uint32_t>() != expected) fail(ErrorCode::BadCheckpoint, "tensor count does not match model spec");
  for (std::size_t i = 0; i < ck.weights.layers.size(); ++i)
    for (auto& p : ck.weights.layers[i]) {
      const std::string name = in.get_string();
      const std::string want = "L" + std::to_string(i) + "." + p.name;
      if (name != want) fail(ErrorCode::BadCheckpoint, "expected tensor " + want + ", found " + name);
      const auto dtype = in.get<std::uint8_t>();
      if (in.get<std::uint8_t>() != 5) fail(ErrorCode::BadCheckpoint, name + ": unsupported rank");
      Shape5 shape{};
      for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
      if (shape != p.value.shape)
        fail(ErrorCode::BadCheckpoint, name + ": shape " + shape_str(shape) + " != " + shape_str(p.value.shape));
      if (dtype == 1) {
        std::vector<float> buf(p.value.size());
        in.get_array(std::span<float>(buf));
        p.value.data.assign(buf.begin(), buf.end());
      } else if (dtype == 2) {
        std::vector<double> buf(p.value.size());
        in.get_array(std::span<double>(buf));
        p.value.data.assign(buf.begin(), buf.end());
      } else {
        fail(ErrorCode::BadCheckpoint, name + ": unknown dtype " + std::to_string(dtype));
      }
    }
  if (in.remaining() != 0) fail(ErrorCode::BadCheckpoint, "trailing bytes after last tensor");
  return ck;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const Weights<T>& w) {
  const Bytes b = encode_checkpoint(spec, w);
  write_file_atomic(path, b);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return decode_checkpoint<T>(b);
}

}  // namespace ctscreen::nn
