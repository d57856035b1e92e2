#include "usc/eval.hpp"

#include <cstdio>

namespace usc::eval {

EvalResult finalize_metrics(const ConfusionMatrix& confusion) {
  const int n = confusion.classes;
  EvalResult result(n);
  result.confusion = confusion;
  result.precision.assign(n, 0.0);
  result.recall.assign(n, 0.0);
  result.support.assign(n, 0);
  result.precision_degenerate.assign(n, false);

  std::int64_t trace = 0;
  for (int c = 0; c < n; ++c) trace += confusion.at(c, c);
  const std::int64_t total = confusion.total();
  result.accuracy = total > 0 ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;

  for (int c = 0; c < n; ++c) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < n; ++k) {
      row += confusion.at(c, k);
      col += confusion.at(k, c);
    }
    result.support[c] = row;
    if (col > 0)
      result.precision[c] = static_cast<double>(confusion.at(c, c)) / static_cast<double>(col);
    else
      result.precision_degenerate[c] = true;  // reported as 0 by convention
    if (row > 0)
      result.recall[c] = static_cast<double>(confusion.at(c, c)) / static_cast<double>(row);
  }
  return result;
}

std::vector<double> normalize_confusion(const ConfusionMatrix& confusion) {
  const int n = confusion.classes;
  std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
  for (int r = 0; r < n; ++r) {
    std::int64_t row = 0;
    for (int c = 0; c < n; ++c) row += confusion.at(r, c);
    if (row == 0) continue;
    for (int c = 0; c < n; ++c)
      out[static_cast<std::size_t>(r) * n + c] =
          static_cast<double>(confusion.at(r, c)) / static_cast<double>(row);
  }
  return out;
}

void write_confusion_csv(const std::string& path, const ConfusionMatrix& confusion) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write confusion CSV: " + path);
  const auto normalized = normalize_confusion(confusion);
  const int n = confusion.classes;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c)
      std::fprintf(f, "%lld%s", static_cast<long long>(confusion.at(r, c)),
                   c + 1 < n ? "," : "\n");
  }
  std::fprintf(f, "\n");
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c)
      std::fprintf(f, "%.9g%s", normalized[static_cast<std::size_t>(r) * n + c],
                   c + 1 < n ? "," : "\n");
  }
  std::fclose(f);
}

void write_metrics_csv(const std::string& path, const EvalResult& result,
                       const std::vector<std::string>& class_names) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write metrics CSV: " + path);
  std::fprintf(f, "class,precision,recall,support\n");
  for (int c = 0; c < result.confusion.classes; ++c) {
    const std::string name = c < static_cast<int>(class_names.size())
                                 ? class_names[c]
                                 : "class_" + std::to_string(c);
    std::fprintf(f, "%s,%.9g,%.9g,%lld\n", name.c_str(), result.precision[c],
                 result.recall[c], static_cast<long long>(result.support[c]));
  }
  std::fclose(f);
}

}  // namespace usc::eval
