#include "usc/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "usc/errors.hpp"

namespace usc::io {

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xff),
      static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff),
  };
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("FMAT: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ofstream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

}  // namespace

void write_fmat(const std::string& path, std::size_t rows, std::size_t cols,
                const float* data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write FMAT: " + path);
  out.write("FMAT", 4);
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  for (std::size_t i = 0; i < rows * cols; ++i) put_f32(out, data[i]);
  if (!out) throw IoError("short write: " + path);
}

void write_fmat(const std::string& path, const dsp::Matrix& m) {
  std::vector<float> f(m.v.size());
  for (std::size_t i = 0; i < m.v.size(); ++i) f[i] = static_cast<float>(m.v[i]);
  write_fmat(path, m.rows, m.cols, f.data());
}

FloatMatrix read_fmat(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open FMAT: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FMAT", 4) != 0)
    throw FormatError("bad FMAT magic: " + path);
  FloatMatrix m;
  m.rows = get_u32(in);
  m.cols = get_u32(in);
  m.v.resize(m.rows * m.cols);
  std::vector<unsigned char> raw(m.v.size() * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw IoError("FMAT: truncated payload: " + path);
  for (std::size_t i = 0; i < m.v.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                               (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
    std::memcpy(&m.v[i], &bits, 4);
  }
  return m;
}

std::uint8_t to_byte(float value) {
  const float scaled = std::clamp(value, 0.0f, 1.0f) * 255.0f;
  return static_cast<std::uint8_t>(std::lround(scaled));
}

void write_pgm(const std::string& path, const dsp::FeatureImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write PGM: " + path);
  out << "P5\n" << image.side << " " << image.side << "\n255\n";
  for (int r = image.side - 1; r >= 0; --r)
    for (int c = 0; c < image.side; ++c) {
      const std::uint8_t b = to_byte(image.at(r, c, 0));
      out.write(reinterpret_cast<const char*>(&b), 1);
    }
  if (!out) throw IoError("short write: " + path);
}

void write_ppm(const std::string& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write PPM: " + path);
  out << "P6\n" << image.side << " " << image.side << "\n255\n";
  for (int r = image.side - 1; r >= 0; --r)
    out.write(reinterpret_cast<const char*>(image.rgb.data() +
                                            static_cast<std::size_t>(r) * image.side * 3),
              static_cast<std::streamsize>(image.side) * 3);
  if (!out) throw IoError("short write: " + path);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string quoted = "\"";
  for (const char c : field) {
    if (c == '"') quoted += "\"\"";
    else quoted += c;
  }
  quoted += '"';
  return quoted;
}

}  // namespace usc::io
