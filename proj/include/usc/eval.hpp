#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "usc/errors.hpp"
#include "usc/model.hpp"
#include "usc/train.hpp"

namespace usc::eval {

// Rows index the true class, columns the predicted class.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;  // classes * classes, row-major

  explicit ConfusionMatrix(int n = 10) : classes(n), counts(static_cast<std::size_t>(n) * n, 0) {}

  std::int64_t& at(int true_class, int predicted) {
    return counts[static_cast<std::size_t>(true_class) * classes + predicted];
  }
  std::int64_t at(int true_class, int predicted) const {
    return counts[static_cast<std::size_t>(true_class) * classes + predicted];
  }
  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto c : counts) t += c;
    return t;
  }
};

struct EvalResult {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  std::vector<double> precision;          // 0 when the predicted column is empty
  std::vector<double> recall;             // 0 when the class has no samples
  std::vector<std::int64_t> support;      // true-class sample counts
  std::vector<bool> precision_degenerate; // flags the zero-column convention

  explicit EvalResult(int classes = 10) : confusion(classes) {}
};

// Derives accuracy (trace/total) and per-class precision/recall from a
// filled confusion matrix.
EvalResult finalize_metrics(const ConfusionMatrix& confusion);

// Each nonzero row divided by its sum; zero rows stay zero.
std::vector<double> normalize_confusion(const ConfusionMatrix& confusion);

void write_confusion_csv(const std::string& path, const ConfusionMatrix& confusion);
void write_metrics_csv(const std::string& path, const EvalResult& result,
                       const std::vector<std::string>& class_names);

// Inference over the given split indices.
template <typename T>
EvalResult evaluate(nn::Model<T>& model, const nn::ImageStore& data,
                    const std::vector<std::size_t>& idx, int classes) {
  if (idx.empty()) throw ParamError("evaluate: empty split");
  ConfusionMatrix cm(classes);
  constexpr std::size_t kBatch = 32;
  std::vector<const std::vector<float>*> planes;
  for (std::size_t begin = 0; begin < idx.size(); begin += kBatch) {
    const std::size_t end = std::min(begin + kBatch, idx.size());
    planes.clear();
    for (std::size_t i = begin; i < end; ++i) planes.push_back(&data.planes[idx[i]]);
    const nn::Tensor<T> x = nn::make_batch<T>(planes, data.side, 3);
    const nn::Tensor<T> p = model.forward(x, false);
    for (std::size_t s = 0; s < p.shape[0]; ++s) {
      const int truth = data.labels[idx[begin + s]];
      const int pred = nn::argmax_class(p.ptr() + s * p.shape[1], p.shape[1]);
      if (truth < 0 || truth >= classes) throw ParamError("evaluate: label out of range");
      ++cm.at(truth, pred);
    }
  }
  return finalize_metrics(cm);
}

}  // namespace usc::eval
