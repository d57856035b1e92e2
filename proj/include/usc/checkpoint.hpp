#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "usc/errors.hpp"
#include "usc/model.hpp"

namespace usc::nn {

// RMDL v1 checkpoint: magic "RMDL", u32 version, u32 input C/H/W, u32 layer
// count, one length-prefixed spec record per layer, then every parameter
// tensor as raw little-endian float32 in layer order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ofstream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

inline std::uint32_t take_u32(const unsigned char*& p, const unsigned char* end) {
  if (end - p < 4) throw IoError("RMDL: truncated record");
  const std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                          (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
  p += 4;
  return v;
}

inline float take_f32(const unsigned char*& p, const unsigned char* end) {
  const std::uint32_t bits = take_u32(p, end);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

// Spec record payload (after the u32 length prefix): u32 kind + fields.
inline std::vector<unsigned char> encode_record(const LayerSpec& s) {
  std::vector<unsigned char> out;
  auto u32 = [&out](std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
  };
  auto f32 = [&u32](float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  };
  u32(static_cast<std::uint32_t>(s.kind));
  switch (s.kind) {
    case LayerKind::Conv2D:
      u32(s.in_ch);
      u32(s.out_ch);
      u32(s.kernel);
      u32(s.stride);
      u32(s.pad);
      break;
    case LayerKind::BatchNorm:
      u32(s.channels);
      f32(static_cast<float>(s.bn_eps));
      f32(static_cast<float>(s.bn_momentum));
      break;
    case LayerKind::MaxPool:
      u32(s.pool);
      u32(s.pool_stride);
      break;
    case LayerKind::Dropout:
      f32(static_cast<float>(s.rate));
      break;
    case LayerKind::Dense:
      u32(s.in);
      u32(s.out);
      break;
    case LayerKind::ReLU:
    case LayerKind::Softmax:
      break;
  }
  return out;
}

inline LayerSpec decode_record(const std::vector<unsigned char>& buf) {
  const unsigned char* p = buf.data();
  const unsigned char* end = buf.data() + buf.size();
  LayerSpec s;
  const std::uint32_t kind = take_u32(p, end);
  if (kind > static_cast<std::uint32_t>(LayerKind::Softmax))
    throw FormatError("RMDL: unknown layer kind " + std::to_string(kind));
  s.kind = static_cast<LayerKind>(kind);
  switch (s.kind) {
    case LayerKind::Conv2D:
      s.in_ch = static_cast<int>(take_u32(p, end));
      s.out_ch = static_cast<int>(take_u32(p, end));
      s.kernel = static_cast<int>(take_u32(p, end));
      s.stride = static_cast<int>(take_u32(p, end));
      s.pad = static_cast<int>(take_u32(p, end));
      break;
    case LayerKind::BatchNorm:
      s.channels = static_cast<int>(take_u32(p, end));
      s.bn_eps = take_f32(p, end);
      s.bn_momentum = take_f32(p, end);
      break;
    case LayerKind::MaxPool:
      s.pool = static_cast<int>(take_u32(p, end));
      s.pool_stride = static_cast<int>(take_u32(p, end));
      break;
    case LayerKind::Dropout:
      s.rate = take_f32(p, end);
      break;
    case LayerKind::Dense:
      s.in = static_cast<int>(take_u32(p, end));
      s.out = static_cast<int>(take_u32(p, end));
      break;
    case LayerKind::ReLU:
    case LayerKind::Softmax:
      break;
  }
  return s;
}

}  // namespace detail

template <typename T>
void save_model(Model<T>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write("RMDL", 4);
  detail::put_u32(out, kCheckpointVersion);
  for (const auto dim : model.input_shape)
    detail::put_u32(out, static_cast<std::uint32_t>(dim));
  detail::put_u32(out, static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& spec : model.specs()) {
    const auto record = detail::encode_record(spec);
    detail::put_u32(out, static_cast<std::uint32_t>(record.size()));
    out.write(reinterpret_cast<const char*>(record.data()),
              static_cast<std::streamsize>(record.size()));
  }
  for (auto* param : model.params())
    for (const T v : param->data) detail::put_f32(out, static_cast<float>(v));
  if (!out) throw IoError("short write: " + path);
}

template <typename T>
Model<T> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);

  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "RMDL", 4) != 0)
    throw FormatError("bad checkpoint magic: " + path);

  auto read_u32 = [&in, &path]() {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
      throw IoError("truncated checkpoint: " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  };

  const std::uint32_t version = read_u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  std::array<std::size_t, 3> input{};
  for (auto& dim : input) dim = read_u32();
  const std::uint32_t n_layers = read_u32();

  std::vector<LayerSpec> specs;
  specs.reserve(n_layers);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const std::uint32_t len = read_u32();
    std::vector<unsigned char> record(len);
    if (!in.read(reinterpret_cast<char*>(record.data()), len))
      throw IoError("truncated checkpoint record: " + path);
    specs.push_back(detail::decode_record(record));
  }

  Model<T> model = Model<T>::from_specs(input, specs);
  for (auto* param : model.params()) {
    std::vector<unsigned char> raw(param->numel() * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
      throw IoError("truncated checkpoint parameters: " + path);
    for (std::size_t i = 0; i < param->numel(); ++i) {
      std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                           (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                           (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                           (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
      float f;
      std::memcpy(&f, &bits, 4);
      param->data[i] = static_cast<T>(f);
    }
  }
  return model;
}

}  // namespace usc::nn
