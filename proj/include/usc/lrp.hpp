#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "usc/dsp.hpp"
#include "usc/errors.hpp"
#include "usc/io.hpp"
#include "usc/model.hpp"

namespace usc::lrp {

enum class Rule { Flat, WSquare };

inline const char* rule_name(Rule rule) {
  return rule == Rule::Flat ? "flat" : "wsquare";
}

inline std::optional<Rule> rule_from_name(const std::string& name) {
  if (name == "flat") return Rule::Flat;
  if (name == "wsquare" || name == "w2") return Rule::WSquare;
  return std::nullopt;
}

// Uniform rule with optional per-layer overrides (keyed by the analyzable
// network's layer index).
struct RuleSpec {
  Rule uniform = Rule::Flat;
  std::map<std::size_t, Rule> overrides;

  RuleSpec() = default;
  RuleSpec(Rule r) : uniform(r) {}  // NOLINT: implicit by design

  Rule for_layer(std::size_t layer) const {
    const auto it = overrides.find(layer);
    return it == overrides.end() ? uniform : it->second;
  }
  bool mixed() const { return !overrides.empty(); }
};

// Linearized inference-time layers: convolutions with batch norm folded in,
// ReLU, max pools and dense layers. Dropout (inference identity) and the
// softmax are omitted, so the network's output is the logit vector.
template <typename T>
struct ConvL {
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
  nn::Tensor<T> weights;  // [out, in, k, k]
  nn::Tensor<T> bias;     // [out]
};

template <typename T>
struct DenseL {
  nn::Tensor<T> weights;  // [out, in]
  nn::Tensor<T> bias;
};

struct ReluL {};

struct PoolL {
  int size = 2, stride = 2;
};

template <typename T>
using AnalyzableLayer = std::variant<ConvL<T>, ReluL, PoolL, DenseL<T>>;

template <typename T>
struct AnalyzableNetwork {
  std::array<std::size_t, 3> input_shape{};  // C, H, W
  std::vector<AnalyzableLayer<T>> layers;
};

// Per-sample activation cache: acts[i] is the input of layer i and
// acts.back() holds the logits.
template <typename T>
struct Trace {
  std::vector<nn::Tensor<T>> acts;
  const nn::Tensor<T>& logits() const { return acts.back(); }
};

template <typename T>
struct RelevanceMapT {
  int side = 0;
  std::vector<T> values;  // normalized: max |v| = 1 unless identically zero
  std::vector<T> raw;     // pre-normalization relevance
  int target_class = 0;
  Rule rule = Rule::Flat;
  bool mixed_rules = false;
  std::string source;
  T raw_total = T(0);
};

using RelevanceMap = RelevanceMapT<double>;

// ---------------------------------------------------------------------------
// Folding and forward evaluation

// Replaces each Conv+BatchNorm pair with a single convolution
// (w' = w*g/sqrt(var+eps), b' = (b-mean)*g/sqrt(var+eps) + beta), drops
// dropout and softmax. A batch norm without a preceding convolution is a
// structure error.
template <typename T>
AnalyzableNetwork<T> fold_batchnorm(const nn::Model<T>& model) {
  AnalyzableNetwork<T> net;
  net.input_shape = model.input_shape;

  std::optional<ConvL<T>> pending;
  auto flush = [&net, &pending]() {
    if (pending) {
      net.layers.push_back(std::move(*pending));
      pending.reset();
    }
  };

  for (const auto& layer_ptr : model.layers) {
    auto* layer = const_cast<nn::Layer<T>*>(layer_ptr.get());
    switch (layer->kind()) {
      case nn::LayerKind::Conv2D: {
        flush();
        auto* conv = static_cast<nn::Conv2D<T>*>(layer);
        ConvL<T> c;
        c.in_ch = conv->in_channels();
        c.out_ch = conv->out_channels();
        c.kernel = conv->kernel();
        c.stride = conv->stride();
        c.pad = conv->padding();
        c.weights = conv->weights();
        c.bias = conv->bias();
        pending = std::move(c);
        break;
      }
      case nn::LayerKind::BatchNorm: {
        if (!pending)
          throw StructureError("fold_batchnorm: batch norm without a preceding conv");
        auto* bn = static_cast<nn::BatchNorm<T>*>(layer);
        const auto& gamma = bn->gamma();
        const auto& beta = bn->beta();
        const auto& mean = bn->running_mean();
        const auto& var = bn->running_var();
        const std::size_t per_ch = pending->weights.numel() / pending->out_ch;
        for (int c = 0; c < pending->out_ch; ++c) {
          const T scale = gamma[c] / std::sqrt(var[c] + static_cast<T>(bn->eps()));
          T* w = pending->weights.ptr() + static_cast<std::size_t>(c) * per_ch;
          for (std::size_t i = 0; i < per_ch; ++i) w[i] *= scale;
          pending->bias[c] = (pending->bias[c] - mean[c]) * scale + beta[c];
        }
        break;
      }
      case nn::LayerKind::ReLU:
        flush();
        net.layers.push_back(ReluL{});
        break;
      case nn::LayerKind::MaxPool: {
        flush();
        auto* pool = static_cast<nn::MaxPool<T>*>(layer);
        net.layers.push_back(PoolL{pool->size(), pool->stride()});
        break;
      }
      case nn::LayerKind::Dense: {
        flush();
        auto* dense = static_cast<nn::Dense<T>*>(layer);
        DenseL<T> d;
        d.weights = dense->weights();
        d.bias = dense->bias();
        net.layers.push_back(std::move(d));
        break;
      }
      case nn::LayerKind::Dropout:   // identity at inference
      case nn::LayerKind::Softmax:   // omitted: the analyzer consumes logits
        flush();
        break;
    }
  }
  flush();
  return net;
}

namespace detail {

template <typename T>
nn::Tensor<T> conv_forward(const ConvL<T>& conv, const nn::Tensor<T>& x) {
  const std::size_t h = x.shape[1], w = x.shape[2];
  const std::size_t oh = (h + 2 * conv.pad - conv.kernel) / conv.stride + 1;
  const std::size_t ow = (w + 2 * conv.pad - conv.kernel) / conv.stride + 1;
  nn::Tensor<T> y({static_cast<std::size_t>(conv.out_ch), oh, ow});
  for (int co = 0; co < conv.out_ch; ++co)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc = conv.bias[co];
        for (int ci = 0; ci < conv.in_ch; ++ci)
          for (int ky = 0; ky < conv.kernel; ++ky) {
            const long long iy = static_cast<long long>(oy) * conv.stride - conv.pad + ky;
            if (iy < 0 || iy >= static_cast<long long>(h)) continue;
            for (int kx = 0; kx < conv.kernel; ++kx) {
              const long long ix = static_cast<long long>(ox) * conv.stride - conv.pad + kx;
              if (ix < 0 || ix >= static_cast<long long>(w)) continue;
              acc += conv.weights[((static_cast<std::size_t>(co) * conv.in_ch + ci) *
                                       conv.kernel +
                                   ky) *
                                      conv.kernel +
                                  kx] *
                     x[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
            }
          }
        y[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] = acc;
      }
  return y;
}

template <typename T>
nn::Tensor<T> pool_forward(const PoolL& pool, const nn::Tensor<T>& x) {
  const std::size_t ch = x.shape[0], h = x.shape[1], w = x.shape[2];
  const std::size_t oh = (h - pool.size) / pool.stride + 1;
  const std::size_t ow = (w - pool.size) / pool.stride + 1;
  nn::Tensor<T> y({ch, oh, ow});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = x[(c * h + oy * pool.stride) * w + ox * pool.stride];
        for (int ky = 0; ky < pool.size; ++ky)
          for (int kx = 0; kx < pool.size; ++kx)
            best = std::max(best,
                            x[(c * h + oy * pool.stride + ky) * w + ox * pool.stride + kx]);
        y[(c * oh + oy) * ow + ox] = best;
      }
  return y;
}

template <typename T>
nn::Tensor<T> dense_forward(const DenseL<T>& dense, const nn::Tensor<T>& x) {
  const std::size_t out = dense.weights.shape[0], in = dense.weights.shape[1];
  if (x.numel() != in) throw ShapeError("analyze: dense input size mismatch");
  nn::Tensor<T> y({out});
  for (std::size_t o = 0; o < out; ++o) {
    T acc = dense.bias[o];
    const T* wrow = dense.weights.ptr() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * x[i];
    y[o] = acc;
  }
  return y;
}

}  // namespace detail

// Single-sample [C, H, W] input tensor for the analyzable network, built by
// replicating the image's (identical) channels.
template <typename T>
nn::Tensor<T> to_input_tensor(const AnalyzableNetwork<T>& net,
                              const dsp::FeatureImage& img) {
  if (static_cast<std::size_t>(img.side) != net.input_shape[1] ||
      static_cast<std::size_t>(img.side) != net.input_shape[2])
    throw ShapeError("lrp: image size does not match the network input");
  nn::Tensor<T> input({net.input_shape[0], net.input_shape[1], net.input_shape[2]});
  const std::size_t plane = net.input_shape[1] * net.input_shape[2];
  for (std::size_t c = 0; c < net.input_shape[0]; ++c)
    for (int r = 0; r < img.side; ++r)
      for (int col = 0; col < img.side; ++col)
        input[c * plane + static_cast<std::size_t>(r) * img.side + col] =
            static_cast<T>(img.at(r, col, static_cast<int>(std::min<std::size_t>(c, 2))));
  return input;
}

// Runs the folded network on one sample ([C, H, W], no batch dimension) and
// caches every intermediate activation.
template <typename T>
Trace<T> forward_trace(const AnalyzableNetwork<T>& net, const nn::Tensor<T>& input) {
  if (input.shape.size() != 3)
    throw ShapeError("forward_trace: expected a single [C, H, W] sample");
  Trace<T> trace;
  trace.acts.push_back(input);
  for (const auto& layer : net.layers) {
    const nn::Tensor<T>& x = trace.acts.back();
    if (const auto* conv = std::get_if<ConvL<T>>(&layer)) {
      trace.acts.push_back(detail::conv_forward(*conv, x));
    } else if (std::holds_alternative<ReluL>(layer)) {
      nn::Tensor<T> y(x.shape);
      for (std::size_t i = 0; i < x.numel(); ++i) y[i] = std::max(x[i], T(0));
      trace.acts.push_back(std::move(y));
    } else if (const auto* pool = std::get_if<PoolL>(&layer)) {
      trace.acts.push_back(detail::pool_forward(*pool, x));
    } else {
      trace.acts.push_back(detail::dense_forward(std::get<DenseL<T>>(layer), x));
    }
  }
  return trace;
}

// Logits of the folded network (softmax omitted).
template <typename T>
nn::Tensor<T> forward_logits(const AnalyzableNetwork<T>& net, const nn::Tensor<T>& input) {
  return forward_trace(net, input).acts.back();
}

// ---------------------------------------------------------------------------
// Relevance redistribution rules

// R_i = sum_j w_ij^2 / (sum_i' w_i'j^2) * R_j. An all-zero weight column
// carrying nonzero relevance would silently destroy relevance, so it raises
// a propagation error instead.
template <typename T>
std::vector<T> relevance_dense_wsquare(const nn::Tensor<T>& weights,
                                       const std::vector<T>& upper) {
  const std::size_t out = weights.shape[0], in = weights.shape[1];
  if (upper.size() != out) throw ShapeError("relevance_dense_wsquare: size mismatch");
  std::vector<T> lower(in, T(0));
  for (std::size_t j = 0; j < out; ++j) {
    if (upper[j] == T(0)) continue;
    const T* wrow = weights.ptr() + j * in;
    T denom = T(0);
    for (std::size_t i = 0; i < in; ++i) denom += wrow[i] * wrow[i];
    if (denom == T(0))
      throw PropagationError("w^2 rule: all-zero weight column with nonzero relevance");
    const T scale = upper[j] / denom;
    for (std::size_t i = 0; i < in; ++i) lower[i] += wrow[i] * wrow[i] * scale;
  }
  return lower;
}

// Flat rule: every incoming weight counts as one, projecting relevance
// uniformly onto the fan-in.
template <typename T>
std::vector<T> relevance_dense_flat(std::size_t fan_in, const std::vector<T>& upper) {
  if (fan_in == 0) throw ParamError("relevance_dense_flat: fan_in must be positive");
  T total = T(0);
  for (const T r : upper) total += r;
  return std::vector<T>(fan_in, total / static_cast<T>(fan_in));
}

// Convolution treated as its unrolled linear map: each output position
// redistributes over its valid (in-bounds) taps; overlapping contributions
// sum. Padding positions correspond to no input neuron and are excluded,
// which keeps the redistribution conservative.
template <typename T>
nn::Tensor<T> relevance_conv(const ConvL<T>& conv, const nn::Tensor<T>& input_act,
                             const nn::Tensor<T>& upper, Rule rule) {
  const std::size_t h = input_act.shape[1], w = input_act.shape[2];
  const std::size_t oh = upper.shape[1], ow = upper.shape[2];
  nn::Tensor<T> lower(input_act.shape);

  for (int co = 0; co < conv.out_ch; ++co)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T r = upper[(static_cast<std::size_t>(co) * oh + oy) * ow + ox];
        if (r == T(0)) continue;

        const long long base_y = static_cast<long long>(oy) * conv.stride - conv.pad;
        const long long base_x = static_cast<long long>(ox) * conv.stride - conv.pad;
        const int ky_lo = static_cast<int>(std::max(0LL, -base_y));
        const int ky_hi = static_cast<int>(
            std::min<long long>(conv.kernel, static_cast<long long>(h) - base_y));
        const int kx_lo = static_cast<int>(std::max(0LL, -base_x));
        const int kx_hi = static_cast<int>(
            std::min<long long>(conv.kernel, static_cast<long long>(w) - base_x));
        if (ky_lo >= ky_hi || kx_lo >= kx_hi)
          throw PropagationError("relevance_conv: output with no valid input taps");

        if (rule == Rule::WSquare) {
          T denom = T(0);
          for (int ci = 0; ci < conv.in_ch; ++ci)
            for (int ky = ky_lo; ky < ky_hi; ++ky)
              for (int kx = kx_lo; kx < kx_hi; ++kx) {
                const T wv = conv.weights[((static_cast<std::size_t>(co) * conv.in_ch + ci) *
                                               conv.kernel +
                                           ky) *
                                              conv.kernel +
                                          kx];
                denom += wv * wv;
              }
          if (denom == T(0))
            throw PropagationError("w^2 rule: all-zero kernel with nonzero relevance");
          const T scale = r / denom;
          for (int ci = 0; ci < conv.in_ch; ++ci)
            for (int ky = ky_lo; ky < ky_hi; ++ky)
              for (int kx = kx_lo; kx < kx_hi; ++kx) {
                const T wv = conv.weights[((static_cast<std::size_t>(co) * conv.in_ch + ci) *
                                               conv.kernel +
                                           ky) *
                                              conv.kernel +
                                          kx];
                lower[(static_cast<std::size_t>(ci) * h + (base_y + ky)) * w +
                      (base_x + kx)] += wv * wv * scale;
              }
        } else {
          const std::size_t n_valid = static_cast<std::size_t>(conv.in_ch) *
                                      (ky_hi - ky_lo) * (kx_hi - kx_lo);
          const T share = r / static_cast<T>(n_valid);
          for (int ci = 0; ci < conv.in_ch; ++ci)
            for (int ky = ky_lo; ky < ky_hi; ++ky)
              for (int kx = kx_lo; kx < kx_hi; ++kx)
                lower[(static_cast<std::size_t>(ci) * h + (base_y + ky)) * w +
                      (base_x + kx)] += share;
        }
      }
  return lower;
}

// Winner-take-all: each pooled output's relevance goes entirely to the
// window argmax; ties go to the lexicographically smallest index.
template <typename T>
nn::Tensor<T> relevance_maxpool(const PoolL& pool, const nn::Tensor<T>& input_act,
                                const nn::Tensor<T>& upper) {
  const std::size_t ch = input_act.shape[0], h = input_act.shape[1], w = input_act.shape[2];
  const std::size_t oh = upper.shape[1], ow = upper.shape[2];
  nn::Tensor<T> lower(input_act.shape);
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T r = upper[(c * oh + oy) * ow + ox];
        if (r == T(0)) continue;
        std::size_t best = (c * h + oy * pool.stride) * w + ox * pool.stride;
        T best_v = input_act[best];
        for (int ky = 0; ky < pool.size; ++ky)
          for (int kx = 0; kx < pool.size; ++kx) {
            const std::size_t idx =
                (c * h + oy * pool.stride + ky) * w + ox * pool.stride + kx;
            if (input_act[idx] > best_v) {
              best_v = input_act[idx];
              best = idx;
            }
          }
        lower[best] += r;
      }
  return lower;
}

// ---------------------------------------------------------------------------
// End-to-end analysis

// Backward relevance propagation from an explicit seed value placed on the
// target logit. Returns input-shaped relevance ([C, H, W]).
template <typename T>
nn::Tensor<T> propagate(const AnalyzableNetwork<T>& net, const Trace<T>& trace, int target,
                        T seed_value, const RuleSpec& rules) {
  const std::size_t classes = trace.logits().numel();
  if (target < 0 || static_cast<std::size_t>(target) >= classes)
    throw ParamError("propagate: target class out of range");

  nn::Tensor<T> relevance({classes});
  relevance[target] = seed_value;

  for (std::size_t i = net.layers.size(); i-- > 0;) {
    const auto& layer = net.layers[i];
    const nn::Tensor<T>& input_act = trace.acts[i];
    const Rule rule = rules.for_layer(i);

    if (const auto* conv = std::get_if<ConvL<T>>(&layer)) {
      relevance = relevance_conv(*conv, input_act, relevance, rule);
    } else if (std::holds_alternative<ReluL>(layer)) {
      // pass-through
    } else if (const auto* pool = std::get_if<PoolL>(&layer)) {
      relevance = relevance_maxpool(*pool, input_act, relevance);
    } else {
      const auto& dense = std::get<DenseL<T>>(layer);
      std::vector<T> lower =
          rule == Rule::WSquare
              ? relevance_dense_wsquare(dense.weights, relevance.data)
              : relevance_dense_flat(dense.weights.shape[1], relevance.data);
      relevance = nn::Tensor<T>(input_act.shape, std::move(lower));
    }
  }
  return relevance;
}

// Full pipeline for one image: forward with softmax omitted, seed the target
// logit with its own value, propagate, sum input channels, normalize by the
// maximum absolute value (skipped for an identically zero map).
template <typename T>
RelevanceMapT<T> analyze(const AnalyzableNetwork<T>& net, const dsp::FeatureImage& img,
                         int target, const RuleSpec& rules, std::string source = {}) {
  const nn::Tensor<T> input = to_input_tensor(net, img);
  const std::size_t plane = net.input_shape[1] * net.input_shape[2];
  const Trace<T> trace = forward_trace(net, input);
  const std::size_t classes = trace.logits().numel();
  if (target < 0 || static_cast<std::size_t>(target) >= classes)
    throw ParamError("analyze: target class out of range");
  const T seed = trace.logits()[target];

  RelevanceMapT<T> map;
  map.side = img.side;
  map.target_class = target;
  map.rule = rules.uniform;
  map.mixed_rules = rules.mixed();
  map.source = std::move(source);
  map.raw.assign(plane, T(0));
  map.values.assign(plane, T(0));
  if (seed == T(0)) return map;  // zero seed: identically zero map

  const nn::Tensor<T> rel = propagate(net, trace, target, seed, rules);
  for (std::size_t c = 0; c < net.input_shape[0]; ++c)
    for (std::size_t i = 0; i < plane; ++i) map.raw[i] += rel[c * plane + i];

  T norm = T(0);
  for (const T v : map.raw) {
    map.raw_total += v;
    norm = std::max(norm, std::abs(v));
  }
  if (norm > T(0))
    for (std::size_t i = 0; i < plane; ++i) map.values[i] = map.raw[i] / norm;
  return map;
}

// Pixel-wise mean of the pre-normalization maps, then normalized. All maps
// must share the target class, rule and size.
template <typename T>
RelevanceMapT<T> average_maps(const std::vector<RelevanceMapT<T>>& maps, int target_class) {
  if (maps.empty()) throw ParamError("average_maps: empty map list");
  const auto& first = maps.front();
  for (const auto& m : maps) {
    if (m.target_class != target_class)
      throw ParamError("average_maps: mixed target classes");
    if (m.rule != first.rule || m.mixed_rules != first.mixed_rules)
      throw ParamError("average_maps: mixed rules");
    if (m.side != first.side) throw ParamError("average_maps: mixed map sizes");
  }

  RelevanceMapT<T> avg;
  avg.side = first.side;
  avg.target_class = target_class;
  avg.rule = first.rule;
  avg.mixed_rules = first.mixed_rules;
  avg.source = "class-average";
  const std::size_t n = first.raw.size();
  avg.raw.assign(n, T(0));
  avg.values.assign(n, T(0));
  for (const auto& m : maps)
    for (std::size_t i = 0; i < n; ++i) avg.raw[i] += m.raw[i];
  T norm = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    avg.raw[i] /= static_cast<T>(maps.size());
    avg.raw_total += avg.raw[i];
    norm = std::max(norm, std::abs(avg.raw[i]));
  }
  if (norm > T(0))
    for (std::size_t i = 0; i < n; ++i) avg.values[i] = avg.raw[i] / norm;
  return avg;
}

// Signed diverging palette (blue -> white -> red, linear in the normalized
// value) alpha-blended over the grayscale spectrogram image.
template <typename T>
io::RgbImage overlay(const RelevanceMapT<T>& map, const dsp::FeatureImage& image,
                     double alpha = 0.6) {
  if (alpha < 0.0 || alpha > 1.0) throw ParamError("overlay: alpha must be in [0, 1]");
  if (map.side != image.side) throw ShapeError("overlay: map and image sizes differ");

  io::RgbImage out;
  out.side = map.side;
  out.rgb.resize(static_cast<std::size_t>(map.side) * map.side * 3);
  for (int r = 0; r < map.side; ++r)
    for (int c = 0; c < map.side; ++c) {
      const double v =
          static_cast<double>(map.values[static_cast<std::size_t>(r) * map.side + c]);
      double pr, pg, pb;
      if (v >= 0.0) {
        pr = 255.0;
        pg = pb = 255.0 * (1.0 - v);
      } else {
        pb = 255.0;
        pr = pg = 255.0 * (1.0 + v);
      }
      const double gray = 255.0 * static_cast<double>(image.at(r, c, 0));
      const std::size_t base = (static_cast<std::size_t>(r) * map.side + c) * 3;
      const auto blend = [alpha, gray](double pal) {
        const double mixed = alpha * pal + (1.0 - alpha) * gray;
        return static_cast<std::uint8_t>(std::lround(std::clamp(mixed, 0.0, 255.0)));
      };
      out.rgb[base] = blend(pr);
      out.rgb[base + 1] = blend(pg);
      out.rgb[base + 2] = blend(pb);
    }
  return out;
}

}  // namespace usc::lrp
