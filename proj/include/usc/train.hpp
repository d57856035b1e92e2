#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "usc/errors.hpp"
#include "usc/model.hpp"
#include "usc/optimizer.hpp"
#include "usc/rng.hpp"

namespace usc::nn {

struct TrainConfig {
  int max_epochs = 80;
  int patience = 10;
  int batch_size = 32;
  NadamConfig optimizer;  // lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-7
  std::uint64_t seed = 0;
  std::vector<double> class_weights;  // indexed by label id; empty = all ones

  void check() const {
    if (max_epochs < 1 || patience < 1 || batch_size < 1)
      throw ParamError("TrainConfig: epochs, patience and batch size must be positive");
    if (patience >= max_epochs)
      throw ParamError("TrainConfig: patience must be below max_epochs");
  }
};

struct EpochStats {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;  // epochs[i] is epoch i+1
  int best_epoch = 0;
  int stopped_epoch = 0;
};

// Tracks the best validation loss; stops after `patience` consecutive
// epochs without strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  // Returns true when this epoch set a new best.
  bool observe(int epoch, double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int stale_ = 0;
};

// Feature images stored as single-channel planes (the three channels are
// identical by construction) plus integer labels.
struct ImageStore {
  int side = 0;
  std::vector<std::vector<float>> planes;
  std::vector<int> labels;

  std::size_t size() const { return planes.size(); }
};

namespace detail {

template <typename T>
struct BatchMetrics {
  double loss_sum = 0.0;  // weighted, per-sample
  std::size_t correct = 0;
};

// Forward the batch, accumulate weighted cross-entropy and accuracy, and
// (when training) seed the fused softmax/cross-entropy gradient.
template <typename T>
BatchMetrics<T> run_batch(Model<T>& model, const ImageStore& data,
                          const std::vector<std::size_t>& idx, std::size_t begin,
                          std::size_t end, const std::vector<double>& weights, bool train,
                          Tensor<T>* dlogits_out, const Tensor<T>** probs_out,
                          Tensor<T>& probs_storage) {
  constexpr T kLogGuard = static_cast<T>(1e-12);
  std::vector<const std::vector<float>*> planes;
  planes.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) planes.push_back(&data.planes[idx[i]]);
  const Tensor<T> x = make_batch<T>(planes, data.side, 3);

  probs_storage = model.forward(x, train);
  const Tensor<T>& p = probs_storage;
  const std::size_t n = p.shape[0], classes = p.shape[1];

  BatchMetrics<T> metrics;
  if (dlogits_out) *dlogits_out = Tensor<T>({n, classes});
  for (std::size_t s = 0; s < n; ++s) {
    const int label = data.labels[idx[begin + s]];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw ParamError("train: label out of range");
    const double w = weights.empty() ? 1.0 : weights[label];
    const T* row = p.ptr() + s * classes;
    metrics.loss_sum += -w * std::log(std::max<double>(row[label], kLogGuard));
    if (argmax_class(row, classes) == label) ++metrics.correct;
    if (dlogits_out) {
      T* g = dlogits_out->ptr() + s * classes;
      const T wn = static_cast<T>(w / static_cast<double>(n));
      for (std::size_t c = 0; c < classes; ++c) {
        g[c] = wn * row[c];
        if (static_cast<std::size_t>(label) == c) g[c] -= wn;
      }
    }
  }
  if (probs_out) *probs_out = &probs_storage;
  return metrics;
}

}  // namespace detail

// Weighted mini-batch training with Nesterov-Adam and early stopping; the
// best validation snapshot is restored before returning. Deterministic for
// a given seed.
template <typename T>
TrainReport train(Model<T>& model, const ImageStore& data,
                  const std::vector<std::size_t>& train_idx,
                  const std::vector<std::size_t>& val_idx, const TrainConfig& cfg,
                  std::ostream* log = nullptr) {
  cfg.check();
  if (train_idx.empty() || val_idx.empty())
    throw InputError("train: train and validation splits must be non-empty");

  model.reseed_dropout(cfg.seed);
  Xoshiro256ss shuffle_rng(cfg.seed);
  Nadam<T> opt(cfg.optimizer);
  EarlyStopper stopper(cfg.patience);

  TrainReport report;
  std::vector<Tensor<T>> best_params = model.snapshot();
  std::vector<std::size_t> order = train_idx;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    fisher_yates(order, shuffle_rng);

    double train_loss = 0.0;
    std::size_t train_correct = 0;
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    int batch_no = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(begin + batch, order.size());
      ++batch_no;
      Tensor<T> dlogits;
      Tensor<T> probs;
      const auto metrics = detail::run_batch<T>(model, data, order, begin, end,
                                                cfg.class_weights, true, &dlogits, nullptr,
                                                probs);
      if (!std::isfinite(metrics.loss_sum))
        throw TrainAborted("train: non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_no),
                           epoch, batch_no);
      train_loss += metrics.loss_sum;
      train_correct += metrics.correct;

      model.zero_grads();
      model.backward_from_logits(dlogits);
      opt.step(model.trainables());
    }

    double val_loss = 0.0;
    std::size_t val_correct = 0;
    for (std::size_t begin = 0; begin < val_idx.size(); begin += batch) {
      const std::size_t end = std::min(begin + batch, val_idx.size());
      Tensor<T> probs;
      const auto metrics = detail::run_batch<T>(model, data, val_idx, begin, end, {}, false,
                                                nullptr, nullptr, probs);
      val_loss += metrics.loss_sum;
      val_correct += metrics.correct;
    }

    EpochStats stats;
    stats.train_loss = train_loss / static_cast<double>(order.size());
    stats.train_acc = static_cast<double>(train_correct) / static_cast<double>(order.size());
    stats.val_loss = val_loss / static_cast<double>(val_idx.size());
    stats.val_acc = static_cast<double>(val_correct) / static_cast<double>(val_idx.size());
    report.epochs.push_back(stats);
    report.stopped_epoch = epoch;

    if (stopper.observe(epoch, stats.val_loss)) best_params = model.snapshot();
    if (log)
      *log << "epoch " << epoch << " train_loss " << stats.train_loss << " train_acc "
           << stats.train_acc << " val_loss " << stats.val_loss << " val_acc "
           << stats.val_acc << "\n";
    if (stopper.should_stop()) break;
  }

  report.best_epoch = stopper.best_epoch();
  model.restore(best_params);
  return report;
}

// epoch,train_loss,train_acc,val_loss,val_acc
void write_report_csv(const std::string& path, const TrainReport& report);

}  // namespace usc::nn
