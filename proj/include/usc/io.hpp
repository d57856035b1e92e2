#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "usc/dsp.hpp"

namespace usc::io {

// FMAT: portable float matrix. Magic "FMAT", u32 LE rows, u32 LE cols, then
// rows*cols little-endian float32 in row-major order.
void write_fmat(const std::string& path, std::size_t rows, std::size_t cols,
                const float* data);
void write_fmat(const std::string& path, const dsp::Matrix& m);

struct FloatMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> v;
};
FloatMatrix read_fmat(const std::string& path);

struct RgbImage {
  int side = 0;
  std::vector<std::uint8_t> rgb;  // side*side*3, row 0 = lowest frequency
};

// Binary PGM (P5, maxval 255) of the image's first channel. Rows are
// flipped on write so frequency ascends bottom-to-top on screen.
void write_pgm(const std::string& path, const dsp::FeatureImage& image);

// Binary PPM (P6, maxval 255), same vertical flip as write_pgm.
void write_ppm(const std::string& path, const RgbImage& image);

// Round a [0,1] sample to its 8-bit pixel value.
std::uint8_t to_byte(float value);

// One CSV cell with quoting when needed; join with commas.
std::string csv_escape(const std::string& field);

}  // namespace usc::io
