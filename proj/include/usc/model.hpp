#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "usc/dsp.hpp"
#include "usc/errors.hpp"
#include "usc/layers.hpp"
#include "usc/rng.hpp"

namespace usc::nn {

struct ArchConfig {
  int image_side = 220;
  int in_channels = 3;
  std::vector<int> conv_channels = {32, 32, 64, 64, 128};
  std::vector<int> dense_units = {512, 512};
  double dropout = 0.4;
  int classes = 10;
  double bn_eps = 1e-5;
  double bn_momentum = 0.99;
};

template <typename T>
class Model {
 public:
  Model() = default;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  std::array<std::size_t, 3> input_shape{};  // C, H, W
  std::vector<std::unique_ptr<Layer<T>>> layers;

  // Checks that consecutive layer shapes compose; returns the output shape.
  Shape validate() const {
    Shape shape = {input_shape[0], input_shape[1], input_shape[2]};
    for (const auto& layer : layers) shape = layer->output_shape(shape);
    return shape;
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> a = x;
    for (auto& layer : layers) a = layer->forward(a, train);
    return a;
  }

  // Backward pass seeded at the logits; skips the trailing softmax (its
  // gradient is fused with the cross-entropy loss by the caller).
  Tensor<T> backward_from_logits(const Tensor<T>& dlogits) {
    Tensor<T> g = dlogits;
    std::size_t start = layers.size();
    if (start > 0 && layers.back()->kind() == LayerKind::Softmax) --start;
    for (std::size_t i = start; i-- > 0;) g = layers[i]->backward(g);
    return g;
  }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> out;
    for (auto& layer : layers)
      for (auto* p : layer->params()) out.push_back(p);
    return out;
  }

  std::vector<Trainable<T>> trainables() {
    std::vector<Trainable<T>> out;
    for (auto& layer : layers)
      for (auto tr : layer->trainables()) out.push_back(tr);
    return out;
  }

  void zero_grads() {
    for (auto& layer : layers) layer->zero_grads();
  }

  // Deterministic per-layer dropout streams derived from one seed.
  void reseed_dropout(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& layer : layers) {
      const std::uint64_t s = sm.next();
      if (layer->kind() == LayerKind::Dropout)
        static_cast<Dropout<T>*>(layer.get())->reseed(s);
    }
  }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    out.reserve(layers.size());
    for (const auto& layer : layers) out.push_back(layer->spec());
    return out;
  }

  Model clone() const {
    Model copy = from_specs(input_shape, specs());
    auto* self = const_cast<Model*>(this);
    auto src = self->params();
    auto dst = copy.params();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = *src[i];
    return copy;
  }

  std::vector<Tensor<T>> snapshot() {
    std::vector<Tensor<T>> out;
    for (auto* p : params()) out.push_back(*p);
    return out;
  }

  void restore(const std::vector<Tensor<T>>& snap) {
    auto ps = params();
    if (snap.size() != ps.size()) throw StructureError("restore: snapshot size mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] = snap[i];
  }

  static Model from_specs(const std::array<std::size_t, 3>& input,
                          const std::vector<LayerSpec>& specs) {
    Model m;
    m.input_shape = input;
    for (const auto& s : specs) m.layers.push_back(make_layer<T>(s));
    m.validate();
    return m;
  }
};

template <typename To, typename From>
Model<To> model_cast(const Model<From>& src) {
  Model<To> out = Model<To>::from_specs(src.input_shape, src.specs());
  auto* self = const_cast<Model<From>*>(&src);
  auto sp = self->params();
  auto dp = out.params();
  for (std::size_t i = 0; i < sp.size(); ++i) {
    for (std::size_t j = 0; j < sp[i]->numel(); ++j)
      dp[i]->data[j] = static_cast<To>(sp[i]->data[j]);
  }
  return out;
}

// He-uniform initialization of conv and dense weights from xoshiro256**;
// biases zero, batch-norm scale 1 / shift 0 / running stats (0, 1).
template <typename T>
void init_he_uniform(Model<T>& model, std::uint64_t seed) {
  Xoshiro256ss rng(seed);
  for (auto& layer : model.layers) {
    if (layer->kind() == LayerKind::Conv2D) {
      auto* conv = static_cast<Conv2D<T>*>(layer.get());
      const double fan_in =
          static_cast<double>(conv->in_channels()) * conv->kernel() * conv->kernel();
      const double limit = std::sqrt(6.0 / fan_in);
      for (auto& w : conv->weights().data) w = static_cast<T>(rng.uniform(-limit, limit));
      conv->bias().fill(T(0));
    } else if (layer->kind() == LayerKind::Dense) {
      auto* dense = static_cast<Dense<T>*>(layer.get());
      const double limit = std::sqrt(6.0 / dense->fan_in());
      for (auto& w : dense->weights().data) w = static_cast<T>(rng.uniform(-limit, limit));
      dense->bias().fill(T(0));
    }
  }
}

// Conv blocks (3x3 stride-1 same-padding -> batch norm -> ReLU -> 2x2/2 max
// pool) followed by a dense head with dropout and a softmax output.
template <typename T>
Model<T> build_cnn(const ArchConfig& cfg, std::uint64_t seed) {
  if (cfg.conv_channels.empty() || cfg.classes < 2)
    throw ParamError("build_cnn: need at least one conv block and two classes");

  Model<T> m;
  m.input_shape = {static_cast<std::size_t>(cfg.in_channels),
                   static_cast<std::size_t>(cfg.image_side),
                   static_cast<std::size_t>(cfg.image_side)};

  int ch = cfg.in_channels;
  Shape shape = {m.input_shape[0], m.input_shape[1], m.input_shape[2]};
  for (const int out_ch : cfg.conv_channels) {
    m.layers.push_back(std::make_unique<Conv2D<T>>(ch, out_ch, 3, 1, 1));
    m.layers.push_back(std::make_unique<BatchNorm<T>>(out_ch, cfg.bn_eps, cfg.bn_momentum));
    m.layers.push_back(std::make_unique<ReLU<T>>());
    m.layers.push_back(std::make_unique<MaxPool<T>>(2, 2));
    ch = out_ch;
  }
  for (const auto& layer : m.layers) shape = layer->output_shape(shape);

  int features = static_cast<int>(shape_numel(shape));
  for (const int units : cfg.dense_units) {
    m.layers.push_back(std::make_unique<Dense<T>>(features, units));
    m.layers.push_back(std::make_unique<ReLU<T>>());
    if (cfg.dropout > 0.0) m.layers.push_back(std::make_unique<Dropout<T>>(cfg.dropout));
    features = units;
  }
  m.layers.push_back(std::make_unique<Dense<T>>(features, cfg.classes));
  m.layers.push_back(std::make_unique<Softmax<T>>());

  m.validate();
  init_he_uniform(m, seed);
  m.reseed_dropout(seed);
  return m;
}

// The canonical ten-class network: 220x220x3 input, conv channels
// (32, 32, 64, 64, 128), two 512-unit dense layers with dropout 0.4.
template <typename T>
Model<T> build_model(std::uint64_t seed) {
  return build_cnn<T>(ArchConfig{}, seed);
}

// Assembles [N, C, side, side] batches from single-channel planes by
// replicating each plane across the input channels.
template <typename T>
Tensor<T> make_batch(const std::vector<const std::vector<float>*>& planes, int side,
                     int channels) {
  const std::size_t n = planes.size();
  Tensor<T> x({n, static_cast<std::size_t>(channels), static_cast<std::size_t>(side),
               static_cast<std::size_t>(side)});
  const std::size_t plane_size = static_cast<std::size_t>(side) * side;
  for (std::size_t s = 0; s < n; ++s) {
    if (planes[s]->size() != plane_size) throw ShapeError("make_batch: plane size mismatch");
    for (int c = 0; c < channels; ++c) {
      T* dst = x.ptr() + (s * channels + c) * plane_size;
      for (std::size_t i = 0; i < plane_size; ++i) dst[i] = static_cast<T>((*planes[s])[i]);
    }
  }
  return x;
}

template <typename T>
Tensor<T> image_to_tensor(const dsp::FeatureImage& img) {
  Tensor<T> x({1, 3, static_cast<std::size_t>(img.side), static_cast<std::size_t>(img.side)});
  const std::size_t plane = static_cast<std::size_t>(img.side) * img.side;
  for (int r = 0; r < img.side; ++r)
    for (int c = 0; c < img.side; ++c)
      for (int ch = 0; ch < 3; ++ch)
        x[static_cast<std::size_t>(ch) * plane + static_cast<std::size_t>(r) * img.side + c] =
            static_cast<T>(img.at(r, c, ch));
  return x;
}

// Inference-mode class probabilities for one image.
template <typename T>
std::vector<T> predict(Model<T>& model, const dsp::FeatureImage& img) {
  const Tensor<T> out = model.forward(image_to_tensor<T>(img), false);
  return out.data;
}

// Inference-mode logits (the pre-softmax layer's output).
template <typename T>
std::vector<T> predict_logits(Model<T>& model, const dsp::FeatureImage& img) {
  Tensor<T> a = image_to_tensor<T>(img);
  for (auto& layer : model.layers) {
    if (layer->kind() == LayerKind::Softmax) break;
    a = layer->forward(a, false);
  }
  return a.data;
}

// Argmax with ties broken toward the lowest class id.
template <typename T>
int argmax_class(const T* probs, std::size_t n) {
  int best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  return best;
}

// Weighted cross-entropy backward pass for a single image: runs a
// train-mode forward, fills every parameter gradient, returns the loss.
template <typename T>
T backward(Model<T>& model, const dsp::FeatureImage& img, int label, T weight) {
  constexpr T kLogGuard = static_cast<T>(1e-12);
  const Tensor<T> x = image_to_tensor<T>(img);
  model.zero_grads();
  const Tensor<T> p = model.forward(x, true);
  const std::size_t classes = p.shape[1];
  if (label < 0 || static_cast<std::size_t>(label) >= classes)
    throw ParamError("backward: label out of range");

  const T loss = -weight * std::log(std::max(p[label], kLogGuard));
  Tensor<T> dlogits({1, classes});
  for (std::size_t c = 0; c < classes; ++c) {
    dlogits[c] = weight * p[c];
    if (static_cast<std::size_t>(label) == c) dlogits[c] -= weight;
  }
  model.backward_from_logits(dlogits);
  return loss;
}

}  // namespace usc::nn
