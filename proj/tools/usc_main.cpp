// usc: urban sound classification and relevance-map toolkit.
//
// Subcommands: features (WAV -> feature images), train (feature images ->
// checkpoint), eval (checkpoint -> metrics), explain (checkpoint ->
// relevance maps and overlays).

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "usc/audio.hpp"
#include "usc/checkpoint.hpp"
#include "usc/dataset.hpp"
#include "usc/dsp.hpp"
#include "usc/errors.hpp"
#include "usc/eval.hpp"
#include "usc/io.hpp"
#include "usc/lrp.hpp"
#include "usc/model.hpp"
#include "usc/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunConfig {
  std::string dataset_dir;
  std::string metadata;
  std::string features = "mel";  // mel | cqt
  std::string rule = "flat";     // flat | wsquare
  std::string out_dir = "out";
  std::uint64_t seed = 42;

  int sample_rate = 44100;
  double clip_seconds = 4.0;
  int image_size = 220;

  int n_mels = 128;
  int fft_size = 2048;
  int hop = 512;
  double f_min = 0.0;
  double f_max = -1.0;  // -1: Nyquist

  double cqt_fmin = 32.70;
  int cqt_bins = 84;
  int cqt_bins_per_octave = 12;

  int classes = 10;
  int epochs = 80;
  int patience = 10;
  int batch_size = 32;
  double lr = 1e-3;
  std::vector<int> conv_channels = {32, 32, 64, 64, 128};
  std::vector<int> dense_units = {512, 512};
  double dropout = 0.4;

  double alpha = 0.6;
  std::string target_class;
  std::string sample;
  std::string split = "test";
  int workers = 2;
};

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usc::IoError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw usc::ConfigError("config parse error in " + path + ": " + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "dataset_dir") cfg.dataset_dir = value.get<std::string>();
    else if (key == "metadata") cfg.metadata = value.get<std::string>();
    else if (key == "features") cfg.features = value.get<std::string>();
    else if (key == "rule") cfg.rule = value.get<std::string>();
    else if (key == "out_dir") cfg.out_dir = value.get<std::string>();
    else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
    else if (key == "sample_rate") cfg.sample_rate = value.get<int>();
    else if (key == "clip_seconds") cfg.clip_seconds = value.get<double>();
    else if (key == "image_size") cfg.image_size = value.get<int>();
    else if (key == "n_mels") cfg.n_mels = value.get<int>();
    else if (key == "fft_size") cfg.fft_size = value.get<int>();
    else if (key == "hop") cfg.hop = value.get<int>();
    else if (key == "f_min") cfg.f_min = value.get<double>();
    else if (key == "f_max") cfg.f_max = value.get<double>();
    else if (key == "cqt_fmin") cfg.cqt_fmin = value.get<double>();
    else if (key == "cqt_bins") cfg.cqt_bins = value.get<int>();
    else if (key == "cqt_bins_per_octave") cfg.cqt_bins_per_octave = value.get<int>();
    else if (key == "classes") cfg.classes = value.get<int>();
    else if (key == "epochs") cfg.epochs = value.get<int>();
    else if (key == "patience") cfg.patience = value.get<int>();
    else if (key == "batch_size") cfg.batch_size = value.get<int>();
    else if (key == "lr") cfg.lr = value.get<double>();
    else if (key == "conv_channels") cfg.conv_channels = value.get<std::vector<int>>();
    else if (key == "dense_units") cfg.dense_units = value.get<std::vector<int>>();
    else if (key == "dropout") cfg.dropout = value.get<double>();
    else if (key == "alpha") cfg.alpha = value.get<double>();
    else if (key == "class") cfg.target_class = value.get<std::string>();
    else if (key == "sample") cfg.sample = value.get<std::string>();
    else if (key == "split") cfg.split = value.get<std::string>();
    else if (key == "workers") cfg.workers = value.get<int>();
    else throw usc::ConfigError("unknown config key '" + key + "' in " + path);
  }
}

// Outputs are assembled under a temporary directory and moved into place
// only when the command succeeds, so failed runs never clobber results.
class Staging {
 public:
  Staging(const fs::path& out_dir, const std::string& tag)
      : final_(out_dir / tag), tmp_(out_dir / (".tmp-" + tag)) {
    fs::create_directories(out_dir);
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }

  const fs::path& dir() const { return tmp_; }

  // Replace the destination directory wholesale.
  void commit() {
    fs::remove_all(final_);
    fs::rename(tmp_, final_);
    committed_ = true;
  }

  // Move staged files into the destination, keeping unrelated files from
  // earlier runs (same-named files are replaced).
  void commit_merge() {
    fs::create_directories(final_);
    for (const auto& entry : fs::directory_iterator(tmp_)) {
      const fs::path dst = final_ / entry.path().filename();
      fs::remove_all(dst);
      fs::rename(entry.path(), dst);
    }
    fs::remove_all(tmp_);
    committed_ = true;
  }

  ~Staging() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

 private:
  fs::path final_, tmp_;
  bool committed_ = false;
};

struct ManifestRow {
  std::string clip_id;
  std::string class_name;
  std::string split;
  std::string file;
  std::string status;
  std::string kind;
};

void write_manifest(const fs::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path);
  if (!out) throw usc::IoError("cannot write manifest: " + path.string());
  out << "clip_id,class,split,file,status,kind\n";
  for (const auto& r : rows)
    out << usc::io::csv_escape(r.clip_id) << ',' << r.class_name << ',' << r.split << ','
        << usc::io::csv_escape(r.file) << ',' << usc::io::csv_escape(r.status) << ','
        << r.kind << '\n';
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw usc::IoError("cannot open manifest: " + path.string() +
                              " (run the features command first)");
  std::vector<ManifestRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          field += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(field);
        field.clear();
      } else {
        field += c;
      }
    }
    fields.push_back(field);
    if (fields.size() != 6)
      throw usc::SchemaError("manifest row with " + std::to_string(fields.size()) +
                             " fields: " + path.string());
    rows.push_back({fields[0], fields[1], fields[2], fields[3], fields[4], fields[5]});
  }
  return rows;
}

std::string clip_id_of(const std::string& file_name) {
  return fs::path(file_name).stem().string();
}

usc::dsp::FeatureImage image_from_plane(const usc::io::FloatMatrix& m) {
  if (m.rows != m.cols) throw usc::FormatError("feature FMAT is not square");
  usc::dsp::FeatureImage img;
  img.side = static_cast<int>(m.rows);
  img.pixels.resize(m.v.size() * 3);
  for (std::size_t i = 0; i < m.v.size(); ++i)
    for (int ch = 0; ch < 3; ++ch) img.pixels[i * 3 + ch] = m.v[i];
  return img;
}

// ---------------------------------------------------------------------------
// features

int cmd_features(const RunConfig& cfg) {
  if (cfg.metadata.empty()) throw usc::ConfigError("features: metadata path required");
  if (cfg.dataset_dir.empty()) throw usc::ConfigError("features: dataset_dir required");
  if (cfg.features != "mel" && cfg.features != "cqt")
    throw usc::ConfigError("features: feature kind must be 'mel' or 'cqt'");

  const auto index = usc::dataset::load_metadata(cfg.metadata);
  if (index.entries.empty()) throw usc::InputError("features: metadata lists no clips");
  const auto split = usc::dataset::split_dataset(index, cfg.seed);

  std::vector<std::string> split_of(index.entries.size());
  for (const auto i : split.train) split_of[i] = "train";
  for (const auto i : split.validation) split_of[i] = "validation";
  for (const auto i : split.test) split_of[i] = "test";

  Staging staging(cfg.out_dir, "features");
  std::vector<ManifestRow> rows(index.entries.size());

  std::atomic<std::size_t> cursor{0};
  std::atomic<std::size_t> failures{0};
  const int workers = std::max(1, cfg.workers);

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= index.entries.size()) return;
      const auto& entry = index.entries[i];
      ManifestRow row;
      row.clip_id = clip_id_of(entry.file_path);
      row.class_name = usc::dataset::class_name(entry.label);
      row.split = split_of[i];
      row.file = row.clip_id + ".fmat";
      row.kind = cfg.features;
      try {
        fs::path wav = fs::path(cfg.dataset_dir) / ("fold" + entry.tag) / entry.file_path;
        if (!fs::exists(wav)) wav = fs::path(cfg.dataset_dir) / entry.file_path;
        auto clip = usc::dataset::load_wav(wav.string());
        clip = usc::dataset::resample(clip, cfg.sample_rate);
        clip = usc::dataset::fix_length(clip, cfg.clip_seconds);

        usc::dsp::Spectrogram spec;
        if (cfg.features == "mel") {
          usc::dsp::MelParams p;
          p.n_mels = cfg.n_mels;
          p.fft_size = cfg.fft_size;
          p.hop = cfg.hop;
          p.f_min = cfg.f_min;
          p.f_max = cfg.f_max > 0.0 ? cfg.f_max : cfg.sample_rate / 2.0;
          spec = usc::dsp::mel_spectrogram(clip, p);
        } else {
          usc::dsp::CqtParams p;
          p.f_min = cfg.cqt_fmin;
          p.bins = cfg.cqt_bins;
          p.bins_per_octave = cfg.cqt_bins_per_octave;
          p.hop = cfg.hop;
          spec = usc::dsp::cqt_spectrogram(clip, p);
        }
        const auto img = usc::dsp::to_feature_image(spec, cfg.image_size);
        const auto plane = img.plane();
        usc::io::write_fmat((staging.dir() / row.file).string(),
                            static_cast<std::size_t>(img.side),
                            static_cast<std::size_t>(img.side), plane.data());
        usc::io::write_pgm((staging.dir() / (row.clip_id + ".pgm")).string(), img);
        row.status = "ok";
      } catch (const std::exception& e) {
        row.status = std::string("error:") + e.what();
        ++failures;
      }
      rows[i] = std::move(row);
    }
  };

  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  write_manifest(staging.dir() / "manifest.csv", rows);
  staging.commit();
  std::cout << "features: " << (rows.size() - failures) << "/" << rows.size()
            << " clips -> " << (fs::path(cfg.out_dir) / "features").string() << "\n";
  if (failures > 0)
    std::cout << "features: " << failures << " clips skipped (see manifest status)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct LoadedData {
  usc::nn::ImageStore store;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  std::vector<ManifestRow> rows;  // rows backing store entries, same order
};

LoadedData load_features(const RunConfig& cfg) {
  const fs::path feat_dir = fs::path(cfg.out_dir) / "features";
  const auto rows = read_manifest(feat_dir / "manifest.csv");

  LoadedData data;
  for (const auto& row : rows) {
    if (row.status != "ok") continue;
    const auto label = usc::dataset::class_from_name(row.class_name);
    if (!label) throw usc::LabelError("manifest class '" + row.class_name + "' unknown");
    const auto m = usc::io::read_fmat((feat_dir / row.file).string());
    if (data.store.side == 0) data.store.side = static_cast<int>(m.rows);
    if (static_cast<int>(m.rows) != data.store.side || m.rows != m.cols)
      throw usc::FormatError("feature image size mismatch: " + row.file);
    const std::size_t at = data.store.planes.size();
    data.store.planes.push_back(m.v);
    data.store.labels.push_back(static_cast<int>(*label));
    data.rows.push_back(row);
    if (row.split == "train") data.train_idx.push_back(at);
    else if (row.split == "validation") data.val_idx.push_back(at);
    else data.test_idx.push_back(at);
  }
  if (data.store.planes.empty())
    throw usc::InputError("no usable feature images under " + feat_dir.string());
  return data;
}

int cmd_train(const RunConfig& cfg) {
  const auto data = load_features(cfg);
  std::cout << "train: " << data.train_idx.size() << " train / " << data.val_idx.size()
            << " validation / " << data.test_idx.size() << " test clips\n";

  std::array<std::int64_t, usc::dataset::kNumClasses> counts{};
  for (const auto i : data.train_idx) ++counts[data.store.labels[i]];
  const auto weight_map = usc::dataset::class_weights(counts);

  usc::nn::TrainConfig tc;
  tc.max_epochs = cfg.epochs;
  tc.patience = cfg.patience;
  tc.batch_size = cfg.batch_size;
  tc.optimizer.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.class_weights.assign(cfg.classes, 1.0);
  for (const auto& [label, w] : weight_map) tc.class_weights[static_cast<int>(label)] = w;

  usc::nn::ArchConfig arch;
  arch.image_side = data.store.side;
  arch.conv_channels = cfg.conv_channels;
  arch.dense_units = cfg.dense_units;
  arch.dropout = cfg.dropout;
  arch.classes = cfg.classes;
  auto model = usc::nn::build_cnn<float>(arch, cfg.seed);

  const auto report = usc::nn::train(model, data.store, data.train_idx, data.val_idx, tc,
                                     &std::cout);

  Staging staging(cfg.out_dir, "model");
  usc::nn::save_model(model, (staging.dir() / "model.rmdl").string());
  usc::nn::write_report_csv((staging.dir() / "train_report.csv").string(), report);
  staging.commit();

  std::cout << "train: stopped at epoch " << report.stopped_epoch << ", best epoch "
            << report.best_epoch << ", checkpoint "
            << (fs::path(cfg.out_dir) / "model" / "model.rmdl").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

const std::vector<std::size_t>& pick_split(const LoadedData& data, const std::string& name) {
  if (name == "train") return data.train_idx;
  if (name == "validation") return data.val_idx;
  if (name == "test") return data.test_idx;
  throw usc::ConfigError("unknown split '" + name + "'");
}

int cmd_eval(const RunConfig& cfg) {
  auto data = load_features(cfg);
  auto model =
      usc::nn::load_model<float>((fs::path(cfg.out_dir) / "model" / "model.rmdl").string());

  const auto& idx = pick_split(data, cfg.split);
  const auto result = usc::eval::evaluate(model, data.store, idx, cfg.classes);

  Staging staging(cfg.out_dir, "eval");
  usc::eval::write_confusion_csv((staging.dir() / (cfg.split + "_confusion.csv")).string(),
                                 result.confusion);
  std::vector<std::string> names;
  for (int c = 0; c < usc::dataset::kNumClasses; ++c)
    names.push_back(usc::dataset::class_name(static_cast<usc::dataset::ClassLabel>(c)));
  names.resize(cfg.classes, "");
  usc::eval::write_metrics_csv((staging.dir() / (cfg.split + "_metrics.csv")).string(),
                               result, names);
  staging.commit_merge();

  std::printf("eval: %s accuracy %.4f over %lld samples\n", cfg.split.c_str(),
              result.accuracy, static_cast<long long>(result.confusion.total()));
  for (int c = 0; c < cfg.classes; ++c)
    if (result.support[c] > 0)
      std::printf("  %-18s precision %.3f recall %.3f support %lld\n", names[c].c_str(),
                  result.precision[c], result.recall[c],
                  static_cast<long long>(result.support[c]));
  return 0;
}

// ---------------------------------------------------------------------------
// explain

void write_map_artifacts(const fs::path& dir, const std::string& stem,
                         const usc::lrp::RelevanceMap& map,
                         const usc::dsp::FeatureImage& background, double alpha) {
  std::vector<float> values(map.values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = static_cast<float>(map.values[i]);
  usc::io::write_fmat((dir / (stem + ".fmat")).string(),
                      static_cast<std::size_t>(map.side),
                      static_cast<std::size_t>(map.side), values.data());

  json sidecar;
  sidecar["class"] = usc::dataset::class_name(
      static_cast<usc::dataset::ClassLabel>(map.target_class));
  sidecar["rule"] = map.mixed_rules ? "mixed" : usc::lrp::rule_name(map.rule);
  sidecar["source"] = map.source;
  std::ofstream side(dir / (stem + ".json"));
  side << sidecar.dump(2) << "\n";

  usc::io::write_ppm((dir / (stem + ".ppm")).string(),
                     usc::lrp::overlay(map, background, alpha));
}

int cmd_explain(const RunConfig& cfg) {
  if (cfg.sample.empty() == cfg.target_class.empty())
    throw usc::ConfigError("explain: pass exactly one of --sample or --class");
  const auto rule = usc::lrp::rule_from_name(cfg.rule);
  if (!rule) throw usc::ConfigError("explain: rule must be 'flat' or 'wsquare'");

  auto data = load_features(cfg);
  auto model_f32 =
      usc::nn::load_model<float>((fs::path(cfg.out_dir) / "model" / "model.rmdl").string());
  auto model = usc::nn::model_cast<double>(model_f32);
  const auto net = usc::lrp::fold_batchnorm(model);

  Staging staging(cfg.out_dir, "explain");

  if (!cfg.sample.empty()) {
    std::optional<std::size_t> found;
    for (std::size_t i = 0; i < data.rows.size(); ++i)
      if (data.rows[i].clip_id == cfg.sample) found = i;
    if (!found) throw usc::ParamError("explain: unknown sample id '" + cfg.sample + "'");

    const auto img = image_from_plane({static_cast<std::size_t>(data.store.side),
                                       static_cast<std::size_t>(data.store.side),
                                       data.store.planes[*found]});
    const int target = data.store.labels[*found];
    const auto map = usc::lrp::analyze(net, img, target, *rule, cfg.sample);
    write_map_artifacts(staging.dir(), cfg.sample + "_" + cfg.rule, map, img, cfg.alpha);
  } else {
    const auto label = usc::dataset::class_from_name(cfg.target_class);
    if (!label) throw usc::ParamError("explain: unknown class '" + cfg.target_class + "'");
    const int target = static_cast<int>(*label);

    std::vector<usc::lrp::RelevanceMap> maps;
    usc::dsp::FeatureImage mean_img;
    for (const auto i : pick_split(data, cfg.split)) {
      if (data.store.labels[i] != target) continue;
      const auto img = image_from_plane({static_cast<std::size_t>(data.store.side),
                                         static_cast<std::size_t>(data.store.side),
                                         data.store.planes[i]});
      maps.push_back(usc::lrp::analyze(net, img, target, *rule, data.rows[i].clip_id));
      if (mean_img.pixels.empty()) {
        mean_img = img;
      } else {
        for (std::size_t p = 0; p < mean_img.pixels.size(); ++p)
          mean_img.pixels[p] += img.pixels[p];
      }
    }
    if (maps.empty())
      throw usc::ParamError("explain: no '" + cfg.target_class + "' samples in split '" +
                            cfg.split + "'");
    for (auto& p : mean_img.pixels) p /= static_cast<float>(maps.size());

    const auto avg = usc::lrp::average_maps(maps, target);
    write_map_artifacts(staging.dir(), "class_" + cfg.target_class + "_" + cfg.rule, avg,
                        mean_img, cfg.alpha);
    std::cout << "explain: averaged " << maps.size() << " maps for class "
              << cfg.target_class << "\n";
  }

  staging.commit_merge();
  std::cout << "explain: wrote " << (fs::path(cfg.out_dir) / "explain").string() << "\n";
  return 0;
}

void add_common_flags(CLI::App* cmd, RunConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON config file");
  cmd->add_option("--out", cfg.out_dir, "output directory");
  cmd->add_option("--seed", cfg.seed, "RNG seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"urban sound classifier with layer-wise relevance maps"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;

  auto* features = app.add_subcommand("features", "extract feature images from WAV clips");
  add_common_flags(features, cfg, config_path);
  features->add_option("--data", cfg.dataset_dir, "dataset root (fold<N>/ layout)");
  features->add_option("--metadata", cfg.metadata, "metadata CSV");
  features->add_option("--features", cfg.features, "feature kind: mel | cqt");
  features->add_option("--workers", cfg.workers, "worker threads");
  features->add_option("--image-size", cfg.image_size, "feature image side");

  auto* train = app.add_subcommand("train", "train the classifier on extracted features");
  add_common_flags(train, cfg, config_path);
  train->add_option("--epochs", cfg.epochs, "epoch cap");
  train->add_option("--patience", cfg.patience, "early-stopping patience");
  train->add_option("--batch-size", cfg.batch_size, "mini-batch size");
  train->add_option("--lr", cfg.lr, "learning rate");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common_flags(eval, cfg, config_path);
  eval->add_option("--split", cfg.split, "train | validation | test");

  auto* explain = app.add_subcommand("explain", "produce relevance maps and overlays");
  add_common_flags(explain, cfg, config_path);
  explain->add_option("--rule", cfg.rule, "LRP rule: flat | wsquare");
  explain->add_option("--class", cfg.target_class, "class-average map for this class");
  explain->add_option("--sample", cfg.sample, "per-sample map for this clip id");
  explain->add_option("--alpha", cfg.alpha, "overlay blend factor in [0, 1]");
  explain->add_option("--split", cfg.split, "split for class averages");

  // Parse once to learn the config path, apply the file, then reparse so
  // explicit flags override file values.
  try {
    app.parse(argc, argv);
    if (!config_path.empty()) {
      RunConfig file_cfg;
      apply_config_file(file_cfg, config_path);
      cfg = file_cfg;
      app.clear();
      app.parse(argc, argv);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const usc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (features->parsed()) return cmd_features(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (explain->parsed()) return cmd_explain(cfg);
  } catch (const usc::TrainAborted& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 2;
  } catch (const usc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
