#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "support/wav_writer.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(USC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return status >= 256 ? status >> 8 : status;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

struct Fixture {
  fs::path root;
  fs::path data;
  fs::path metadata;
  fs::path config;

  Fixture() {
    root = fs::temp_directory_path() / "usc_cli_fixture";
    fs::remove_all(root);
    data = root / "audio";
    fs::create_directories(data / "fold1");

    // 12 tone clips across the 10 classes, 0.5 s at 8 kHz
    std::ostringstream csv;
    csv << "slice_file_name,fold,classID,class\n";
    for (int i = 0; i < 12; ++i) {
      const int class_id = i % 10;
      const double freq = 250.0 + 300.0 * class_id;
      std::vector<double> samples(4000);
      for (std::size_t t = 0; t < samples.size(); ++t)
        samples[t] = 0.6 * std::sin(2.0 * std::numbers::pi * freq * t / 8000.0);
      const std::string name = "clip" + std::to_string(i) + ".wav";
      usc::testsupport::write_wav_pcm16((data / "fold1" / name).string(), samples, 8000);
      csv << name << ",1," << class_id << ",class_name_unused\n";
    }
    metadata = root / "meta.csv";
    std::ofstream(metadata) << csv.str();

    config = root / "config.json";
    std::ofstream(config) << R"({
      "dataset_dir": ")" << data.string() << R"(",
      "metadata": ")" << metadata.string() << R"(",
      "features": "mel",
      "sample_rate": 8000,
      "clip_seconds": 0.5,
      "image_size": 32,
      "n_mels": 32,
      "fft_size": 256,
      "hop": 128,
      "conv_channels": [4],
      "dense_units": [8],
      "epochs": 3,
      "patience": 2,
      "batch_size": 4,
      "seed": 11,
      "workers": 2
    })";
  }
};

std::string manifest_field(const std::string& line, int field) {
  std::stringstream ss(line);
  std::string cell;
  for (int i = 0; i <= field; ++i) std::getline(ss, cell, ',');
  return cell;
}

}  // namespace

TEST_CASE("cli end-to-end pipeline") {
  Fixture fx;
  const std::string out_a = (fx.root / "out_a").string();
  const std::string out_b = (fx.root / "out_b").string();
  const std::string base = "--config " + fx.config.string();

  SUBCASE("unknown subcommand and missing inputs fail cleanly") {
    CHECK(run_cli("frobnicate") != 0);
    CHECK(run_cli("train --out " + (fx.root / "nothing").string()) != 0);
    CHECK(run_cli("features --metadata /nonexistent.csv --data /tmp --out " + out_a) != 0);
  }

  // features
  REQUIRE(run_cli("features " + base + " --out " + out_a) == 0);
  const fs::path feat_dir = fs::path(out_a) / "features";
  REQUIRE(fs::exists(feat_dir / "manifest.csv"));

  std::ifstream manifest(feat_dir / "manifest.csv");
  std::string header, line;
  std::getline(manifest, header);
  CHECK(header == "clip_id,class,split,file,status,kind");
  int rows = 0, ok_rows = 0;
  std::string test_clip, test_class;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    ++rows;
    if (manifest_field(line, 4) == "ok") ++ok_rows;
    CHECK(manifest_field(line, 5) == "mel");
    if (manifest_field(line, 2) == "test" && test_clip.empty()) {
      test_clip = manifest_field(line, 0);
      test_class = manifest_field(line, 1);
    }
  }
  CHECK(rows == 12);
  CHECK(ok_rows == 12);
  REQUIRE(!test_clip.empty());
  CHECK(fs::exists(feat_dir / (test_clip + ".fmat")));
  CHECK(fs::exists(feat_dir / (test_clip + ".pgm")));

  // determinism: a second run produces byte-identical feature files
  REQUIRE(run_cli("features " + base + " --out " + out_b) == 0);
  CHECK(slurp(feat_dir / (test_clip + ".fmat")) ==
        slurp(fs::path(out_b) / "features" / (test_clip + ".fmat")));
  CHECK(slurp(feat_dir / "manifest.csv") ==
        slurp(fs::path(out_b) / "features" / "manifest.csv"));

  // train
  REQUIRE(run_cli("train " + base + " --out " + out_a) == 0);
  const fs::path ckpt = fs::path(out_a) / "model" / "model.rmdl";
  REQUIRE(fs::exists(ckpt));
  {
    std::ifstream report(fs::path(out_a) / "model" / "train_report.csv");
    std::string rep_header;
    std::getline(report, rep_header);
    CHECK(rep_header == "epoch,train_loss,train_acc,val_loss,val_acc");
    int epochs = 0;
    while (std::getline(report, line))
      if (!line.empty()) ++epochs;
    CHECK(epochs >= 1);
    CHECK(epochs <= 3);
  }

  // train determinism: rerun into out_b gives an identical checkpoint
  REQUIRE(run_cli("train " + base + " --out " + out_b) == 0);
  CHECK(slurp(ckpt) == slurp(fs::path(out_b) / "model" / "model.rmdl"));
  CHECK(slurp(fs::path(out_a) / "model" / "train_report.csv") ==
        slurp(fs::path(out_b) / "model" / "train_report.csv"));

  // eval
  REQUIRE(run_cli("eval " + base + " --out " + out_a + " --split test") == 0);
  CHECK(fs::exists(fs::path(out_a) / "eval" / "test_confusion.csv"));
  CHECK(fs::exists(fs::path(out_a) / "eval" / "test_metrics.csv"));

  // explain: per-sample map
  REQUIRE(run_cli("explain " + base + " --out " + out_a + " --sample " + test_clip) == 0);
  const fs::path explain_dir = fs::path(out_a) / "explain";
  CHECK(fs::exists(explain_dir / (test_clip + "_flat.fmat")));
  CHECK(fs::exists(explain_dir / (test_clip + "_flat.json")));
  CHECK(fs::exists(explain_dir / (test_clip + "_flat.ppm")));

  // alpha 0 overlay equals the plain spectrogram render
  REQUIRE(run_cli("explain " + base + " --out " + out_a + " --sample " + test_clip +
                  " --alpha 0") == 0);
  {
    const auto ppm = slurp(explain_dir / (test_clip + "_flat.ppm"));
    const auto pgm = slurp(feat_dir / (test_clip + ".pgm"));
    // skip "P6\n32 32\n255\n" vs "P5\n32 32\n255\n" headers (same length)
    const std::size_t header_len = 13;
    REQUIRE(ppm.size() == header_len + 3 * (pgm.size() - header_len));
    for (std::size_t i = 0; i < pgm.size() - header_len; ++i)
      for (int ch = 0; ch < 3; ++ch)
        CHECK(ppm[header_len + 3 * i + ch] == pgm[header_len + i]);
  }

  // cqt features record their kind in the manifest
  {
    const std::string out_cqt = (fx.root / "out_cqt").string();
    REQUIRE(run_cli("features " + base + " --out " + out_cqt + " --features cqt") == 0);
    std::ifstream cqt_manifest(fs::path(out_cqt) / "features" / "manifest.csv");
    std::string cqt_header, cqt_line;
    std::getline(cqt_manifest, cqt_header);
    int cqt_rows = 0;
    while (std::getline(cqt_manifest, cqt_line))
      if (!cqt_line.empty()) {
        CHECK(manifest_field(cqt_line, 5) == "cqt");
        CHECK(manifest_field(cqt_line, 4) == "ok");
        ++cqt_rows;
      }
    CHECK(cqt_rows == 12);
  }

  // frozen optimizer (lr 0): nothing improves after epoch 1, so training
  // stops at patience + 1 epochs
  {
    const std::string out_frozen = (fx.root / "out_frozen").string();
    fs::create_directories(out_frozen);
    fs::copy(fs::path(out_a) / "features", fs::path(out_frozen) / "features",
             fs::copy_options::recursive);
    REQUIRE(run_cli("train " + base + " --out " + out_frozen +
                    " --lr 0 --epochs 15 --patience 10") == 0);
    std::ifstream report(fs::path(out_frozen) / "model" / "train_report.csv");
    std::string rep_line;
    std::getline(report, rep_line);  // header
    int epochs = 0;
    while (std::getline(report, rep_line))
      if (!rep_line.empty()) ++epochs;
    CHECK(epochs == 11);
  }

  // explain: class-average map with the wsquare rule; earlier per-sample
  // outputs survive (explain merges instead of replacing)
  REQUIRE(run_cli("explain " + base + " --out " + out_a + " --class " + test_class +
                  " --rule wsquare") == 0);
  CHECK(fs::exists(explain_dir / ("class_" + test_class + "_wsquare.fmat")));
  CHECK(fs::exists(explain_dir / (test_clip + "_flat.fmat")));
  {
    std::ifstream sidecar(explain_dir / ("class_" + test_class + "_wsquare.json"));
    std::stringstream ss;
    ss << sidecar.rdbuf();
    CHECK(ss.str().find("\"rule\": \"wsquare\"") != std::string::npos);
    CHECK(ss.str().find("class-average") != std::string::npos);
  }

  // error paths: unknown sample, unknown class, empty class selection
  CHECK(run_cli("explain " + base + " --out " + out_a + " --sample nonexistent") == 1);
  CHECK(run_cli("explain " + base + " --out " + out_a + " --class not_a_class") == 1);
  CHECK(run_cli("explain " + base + " --out " + out_a) == 1);  // neither flag
}
