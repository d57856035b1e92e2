#include "usc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "usc/errors.hpp"
#include "usc/rng.hpp"

namespace usc::dataset {

namespace {

constexpr const char* kClassNames[kNumClasses] = {
    "air_conditioner", "car_horn", "children_playing", "dog_bark", "drilling",
    "engine_idling",   "gun_shot", "jackhammer",       "siren",    "street_music",
};

// Minimal CSV field splitter; handles double-quoted fields with embedded
// commas, which is all the UrbanSound8K metadata needs.
std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
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
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

const char* class_name(ClassLabel label) {
  return kClassNames[static_cast<int>(label)];
}

std::optional<ClassLabel> class_from_id(int id) {
  if (id < 0 || id >= kNumClasses) return std::nullopt;
  return static_cast<ClassLabel>(id);
}

std::optional<ClassLabel> class_from_name(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (name == kClassNames[i]) return static_cast<ClassLabel>(i);
  return std::nullopt;
}

DatasetIndex load_metadata(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open metadata CSV: " + csv_path);

  std::string header_line;
  if (!std::getline(in, header_line))
    throw SchemaError("metadata CSV is empty: " + csv_path);
  const auto header = split_csv_row(strip_cr(header_line));

  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw SchemaError("metadata CSV missing column '" + name + "': " + csv_path);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t col_file = column("slice_file_name");
  const std::size_t col_fold = column("fold");
  const std::size_t col_class_id = column("classID");
  column("class");  // required by the schema even though the id is authoritative

  DatasetIndex index;
  std::string line;
  std::size_t row = 1;  // header was row 1
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_csv_row(line);
    if (fields.size() < header.size())
      throw SchemaError("metadata CSV row " + std::to_string(row) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(header.size()));
    int id = -1;
    try {
      id = std::stoi(fields[col_class_id]);
    } catch (const std::exception&) {
      throw LabelError("row " + std::to_string(row) + ": classID '" +
                       fields[col_class_id] + "' is not an integer");
    }
    const auto label = class_from_id(id);
    if (!label)
      throw LabelError("row " + std::to_string(row) + ": classID " +
                       std::to_string(id) + " outside [0, 9]");
    index.entries.push_back({fields[col_file], *label, fields[col_fold]});
    ++index.counts_per_class[id];
  }
  return index;
}

SplitAssignment split_dataset(const DatasetIndex& index, std::uint64_t seed) {
  const std::size_t n = index.entries.size();
  if (n < 10) throw InputError("split_dataset: need at least 10 entries");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Xoshiro256ss rng(seed);
  fisher_yates(order, rng);

  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));

  SplitAssignment split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  return split;
}

std::map<ClassLabel, double> class_weights(const DatasetIndex& index) {
  return class_weights(index.counts_per_class);
}

std::map<ClassLabel, double> class_weights(
    const std::array<std::int64_t, kNumClasses>& counts) {
  std::int64_t total = 0;
  int present = 0;
  for (const auto c : counts) {
    if (c < 0) throw ConfigError("class_weights: negative class count");
    total += c;
    if (c > 0) ++present;
  }
  if (present == 0) throw ConfigError("class_weights: no classes present");

  std::map<ClassLabel, double> weights;
  for (int i = 0; i < kNumClasses; ++i)
    if (counts[i] > 0)
      weights[static_cast<ClassLabel>(i)] =
          static_cast<double>(total) / (static_cast<double>(present) * counts[i]);
  return weights;
}

double class_weight(const std::map<ClassLabel, double>& weights, ClassLabel label) {
  const auto it = weights.find(label);
  if (it == weights.end())
    throw ConfigError(std::string("class_weight: class '") + class_name(label) +
                      "' absent from the training split");
  return it->second;
}

}  // namespace usc::dataset
