#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "usc/errors.hpp"
#include "usc/io.hpp"
#include "usc/rng.hpp"

using namespace usc;
using namespace usc::io;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "usc_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("FMAT round-trips random matrices") {
  Xoshiro256ss rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t rows = 1 + rng.next_below(40);
    const std::size_t cols = 1 + rng.next_below(40);
    std::vector<float> data(rows * cols);
    for (auto& v : data) v = static_cast<float>(rng.uniform(-100.0, 100.0));

    const auto path = temp_path("roundtrip.fmat");
    write_fmat(path.string(), rows, cols, data.data());
    const auto back = read_fmat(path.string());
    CHECK(back.rows == rows);
    CHECK(back.cols == cols);
    CHECK(back.v == data);

    CHECK(fs::file_size(path) == 12 + rows * cols * 4);
  }
}

TEST_CASE("FMAT rejects bad magic and truncation") {
  const auto path = temp_path("bad.fmat");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE\x01\x00\x00\x00\x01\x00\x00\x00";
  }
  CHECK_THROWS_AS(read_fmat(path.string()), FormatError);

  const auto trunc = temp_path("trunc.fmat");
  std::vector<float> data(16, 1.0f);
  write_fmat(trunc.string(), 4, 4, data.data());
  fs::resize_file(trunc, 12 + 10);
  CHECK_THROWS_AS(read_fmat(trunc.string()), IoError);
}

TEST_CASE("PGM renders flipped so low frequencies sit at the bottom") {
  dsp::FeatureImage img;
  img.side = 2;
  img.pixels.assign(12, 0.0f);
  // memory row 0 (lowest frequency) bright, row 1 dark
  for (int c = 0; c < 2; ++c)
    for (int ch = 0; ch < 3; ++ch) img.pixels[(0 * 2 + c) * 3 + ch] = 1.0f;

  const auto path = temp_path("img.pgm");
  write_pgm(path.string(), img);

  std::ifstream in(path, std::ios::binary);
  std::string magic, dims, maxval;
  std::getline(in, magic);
  std::getline(in, dims);
  std::getline(in, maxval);
  CHECK(magic == "P5");
  CHECK(dims == "2 2");
  CHECK(maxval == "255");
  unsigned char px[4];
  in.read(reinterpret_cast<char*>(px), 4);
  // file row 0 = memory row 1 (dark), file row 1 = memory row 0 (bright)
  CHECK(px[0] == 0);
  CHECK(px[1] == 0);
  CHECK(px[2] == 255);
  CHECK(px[3] == 255);
}

TEST_CASE("PPM header and flip") {
  RgbImage img;
  img.side = 2;
  img.rgb.assign(12, 0);
  img.rgb[0] = 200;  // memory row 0, pixel 0, red channel

  const auto path = temp_path("img.ppm");
  write_ppm(path.string(), img);

  std::ifstream in(path, std::ios::binary);
  std::string magic, dims, maxval;
  std::getline(in, magic);
  std::getline(in, dims);
  std::getline(in, maxval);
  CHECK(magic == "P6");
  CHECK(dims == "2 2");
  unsigned char px[12];
  in.read(reinterpret_cast<char*>(px), 12);
  CHECK(px[6] == 200);  // memory row 0 lands in file row 1
  CHECK(px[0] == 0);
}

TEST_CASE("to_byte rounds and clamps") {
  CHECK(to_byte(0.0f) == 0);
  CHECK(to_byte(1.0f) == 255);
  CHECK(to_byte(0.5f) == 128);  // 127.5 rounds away from zero
  CHECK(to_byte(-2.0f) == 0);
  CHECK(to_byte(7.0f) == 255);
}

TEST_CASE("csv_escape quotes only when needed") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("with,comma") == "\"with,comma\"");
  CHECK(csv_escape("with\"quote") == "\"with\"\"quote\"");
  CHECK(csv_escape("multi\nline") == "\"multi\nline\"");
}
