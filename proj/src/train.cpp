#include "usc/train.hpp"

#include <cstdio>

namespace usc::nn {

void write_report_csv(const std::string& path, const TrainReport& report) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write report CSV: " + path);
  std::fprintf(f, "epoch,train_loss,train_acc,val_loss,val_acc\n");
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    const auto& e = report.epochs[i];
    std::fprintf(f, "%zu,%.9g,%.9g,%.9g,%.9g\n", i + 1, e.train_loss, e.train_acc,
                 e.val_loss, e.val_acc);
  }
  std::fclose(f);
}

}  // namespace usc::nn
