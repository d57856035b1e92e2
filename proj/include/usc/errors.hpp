#pragma once

#include <stdexcept>
#include <string>

namespace usc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct LabelError : Error { using Error::Error; };
struct ParamError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct InputError : Error { using Error::Error; };
struct StructureError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct PropagationError : Error { using Error::Error; };

struct TrainAborted : Error {
  int epoch = 0;
  int batch = 0;
  TrainAborted(const std::string& msg, int epoch_, int batch_)
      : Error(msg), epoch(epoch_), batch(batch_) {}
};

}  // namespace usc
