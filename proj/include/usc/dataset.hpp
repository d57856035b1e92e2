#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "usc/audio.hpp"

namespace usc::dataset {

inline constexpr int kNumClasses = 10;

// Fixed id <-> name bijection for the ten urban sound classes.
enum class ClassLabel : int {
  air_conditioner = 0,
  car_horn = 1,
  children_playing = 2,
  dog_bark = 3,
  drilling = 4,
  engine_idling = 5,
  gun_shot = 6,
  jackhammer = 7,
  siren = 8,
  street_music = 9,
};

const char* class_name(ClassLabel label);
std::optional<ClassLabel> class_from_id(int id);
std::optional<ClassLabel> class_from_name(const std::string& name);

struct DatasetEntry {
  std::string file_path;  // as given in the metadata (resolved by callers)
  ClassLabel label = ClassLabel::air_conditioner;
  std::string tag;  // fold or split tag from the metadata
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
  std::array<std::int64_t, kNumClasses> counts_per_class{};
};

struct SplitAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Parses an UrbanSound8K-style metadata CSV (header row with at least
// slice_file_name, fold, classID, class). Throws SchemaError on a missing
// column and LabelError (with the row number) on a classID outside [0, 9].
DatasetIndex load_metadata(const std::string& csv_path);

// Random 70/20/10 split, deterministic for a given seed. Indices are
// shuffled with Fisher-Yates over xoshiro256**; train and validation sizes
// round to the nearest entry and the remainder goes to test.
SplitAssignment split_dataset(const DatasetIndex& index, std::uint64_t seed);

// Balanced class weights w_c = N_total / (n_present * N_c) over the classes
// present in `counts`. Looking up an absent class via class_weight() is a
// configuration error.
std::map<ClassLabel, double> class_weights(const DatasetIndex& index);
std::map<ClassLabel, double> class_weights(
    const std::array<std::int64_t, kNumClasses>& counts);
double class_weight(const std::map<ClassLabel, double>& weights, ClassLabel label);

}  // namespace usc::dataset
