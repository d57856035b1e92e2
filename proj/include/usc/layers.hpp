#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "usc/errors.hpp"
#include "usc/rng.hpp"
#include "usc/tensor.hpp"

namespace usc::nn {

enum class LayerKind : std::uint32_t {
  Conv2D = 0,
  BatchNorm = 1,
  ReLU = 2,
  MaxPool = 3,
  Dropout = 4,
  Dense = 5,
  Softmax = 6,
};

inline const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "max_pool";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "unknown";
}

// Serializable layer description; one struct covers every kind, unused
// fields stay at their defaults.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;  // Conv2D
  int channels = 0;                                            // BatchNorm
  double bn_eps = 1e-5, bn_momentum = 0.99;                    // BatchNorm
  int pool = 2, pool_stride = 2;                               // MaxPool
  double rate = 0.0;                                           // Dropout
  int in = 0, out = 0;                                         // Dense
};

namespace detail {

// C[M x N] += or = A[M x K] . B[K x N]
template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
            bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      if (av == T(0)) continue;
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M x K] += A[M x N] . B[K x N]^T
template <typename T>
void matmul_abt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const T* brow = b + j * n;
      T acc = T(0);
      for (std::size_t t = 0; t < n; ++t) acc += arow[t] * brow[t];
      c[i * k + j] += acc;
    }
  }
}

// C[K x N] += A[M x K]^T . B[M x N]
template <typename T>
void matmul_atb(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      if (av == T(0)) continue;
      T* crow = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
struct Trainable {
  Tensor<T>* param;
  Tensor<T>* grad;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual LayerSpec spec() const = 0;

  // Per-sample shape transform, used for construction-time validation.
  virtual Shape output_shape(const Shape& in) const = 0;

  // Input tensors carry the batch as dimension 0.
  virtual Tensor<T> forward(const Tensor<T>& x, bool train) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;  // accumulates param grads

  // Serialization order; includes non-trainable state (BN running stats).
  virtual std::vector<Tensor<T>*> params() { return {}; }
  // Optimizer view: trainable parameters paired with their gradients.
  virtual std::vector<Trainable<T>> trainables() { return {}; }

  void zero_grads() {
    for (auto [param, grad] : trainables()) grad->fill(T(0));
  }
};

template <typename T>
class Conv2D final : public Layer<T> {
 public:
  Conv2D(int in_ch, int out_ch, int kernel, int stride, int pad)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad),
        weights_({static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch),
                  static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)}),
        bias_({static_cast<std::size_t>(out_ch)}),
        dweights_(weights_.shape), dbias_(bias_.shape) {
    if (in_ch < 1 || out_ch < 1 || kernel < 1 || stride < 1 || pad < 0)
      throw ParamError("Conv2D: channels, kernel and stride must be positive");
  }

  LayerKind kind() const override { return LayerKind::Conv2D; }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Conv2D;
    s.in_ch = in_ch_;
    s.out_ch = out_ch_;
    s.kernel = kernel_;
    s.stride = stride_;
    s.pad = pad_;
    return s;
  }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3 || in[0] != static_cast<std::size_t>(in_ch_))
      throw ShapeError("Conv2D: expected input channels " + std::to_string(in_ch_));
    const long long h = static_cast<long long>(in[1]) + 2 * pad_ - kernel_;
    const long long w = static_cast<long long>(in[2]) + 2 * pad_ - kernel_;
    if (h < 0 || w < 0) throw ShapeError("Conv2D: kernel larger than padded input");
    return {static_cast<std::size_t>(out_ch_), static_cast<std::size_t>(h / stride_ + 1),
            static_cast<std::size_t>(w / stride_ + 1)};
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    const auto [n, h, w, oh, ow] = dims(x);
    x_ = x;
    Tensor<T> y({n, static_cast<std::size_t>(out_ch_), oh, ow});
    const std::size_t patch = static_cast<std::size_t>(in_ch_) * kernel_ * kernel_;
    std::vector<T> cols(patch * oh * ow);
    for (std::size_t s = 0; s < n; ++s) {
      im2col(x.ptr() + s * sample_size(h, w), h, w, oh, ow, cols.data());
      T* out = y.ptr() + s * static_cast<std::size_t>(out_ch_) * oh * ow;
      detail::matmul(weights_.ptr(), cols.data(), out, out_ch_, patch, oh * ow, false);
      for (int c = 0; c < out_ch_; ++c) {
        const T b = bias_[c];
        T* row = out + static_cast<std::size_t>(c) * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) row[i] += b;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const auto [n, h, w, oh, ow] = dims(x_);
    Tensor<T> dx(x_.shape);
    const std::size_t patch = static_cast<std::size_t>(in_ch_) * kernel_ * kernel_;
    std::vector<T> cols(patch * oh * ow);
    std::vector<T> dcols(patch * oh * ow);
    for (std::size_t s = 0; s < n; ++s) {
      const T* dyn = dy.ptr() + s * static_cast<std::size_t>(out_ch_) * oh * ow;
      im2col(x_.ptr() + s * sample_size(h, w), h, w, oh, ow, cols.data());
      detail::matmul_abt(dyn, cols.data(), dweights_.ptr(), out_ch_, oh * ow, patch);
      for (int c = 0; c < out_ch_; ++c) {
        T acc = T(0);
        const T* row = dyn + static_cast<std::size_t>(c) * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) acc += row[i];
        dbias_[c] += acc;
      }
      std::fill(dcols.begin(), dcols.end(), T(0));
      detail::matmul_atb(weights_.ptr(), dyn, dcols.data(), out_ch_, patch, oh * ow);
      col2im(dcols.data(), h, w, oh, ow, dx.ptr() + s * sample_size(h, w));
    }
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&weights_, &bias_}; }
  std::vector<Trainable<T>> trainables() override {
    return {{&weights_, &dweights_}, {&bias_, &dbias_}};
  }

  Tensor<T>& weights() { return weights_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weights() const { return weights_; }
  const Tensor<T>& bias() const { return bias_; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }

 private:
  struct Dims {
    std::size_t n, h, w, oh, ow;
  };

  Dims dims(const Tensor<T>& x) const {
    if (x.shape.size() != 4 || x.shape[1] != static_cast<std::size_t>(in_ch_))
      throw ShapeError("Conv2D: expected [N, " + std::to_string(in_ch_) + ", H, W] input");
    const Shape out = output_shape({x.shape[1], x.shape[2], x.shape[3]});
    return {x.shape[0], x.shape[2], x.shape[3], out[1], out[2]};
  }

  std::size_t sample_size(std::size_t h, std::size_t w) const {
    return static_cast<std::size_t>(in_ch_) * h * w;
  }

  void im2col(const T* x, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
              T* cols) const {
    std::size_t row = 0;
    for (int c = 0; c < in_ch_; ++c) {
      const T* plane = x + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < kernel_; ++ky)
        for (int kx = 0; kx < kernel_; ++kx, ++row) {
          T* dst = cols + row * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long long iy = static_cast<long long>(oy) * stride_ - pad_ + ky;
            if (iy < 0 || iy >= static_cast<long long>(h)) {
              std::fill(dst + oy * ow, dst + (oy + 1) * ow, T(0));
              continue;
            }
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long long ix = static_cast<long long>(ox) * stride_ - pad_ + kx;
              dst[oy * ow + ox] =
                  (ix >= 0 && ix < static_cast<long long>(w)) ? plane[iy * w + ix] : T(0);
            }
          }
        }
    }
  }

  void col2im(const T* cols, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
              T* dx) const {
    std::size_t row = 0;
    for (int c = 0; c < in_ch_; ++c) {
      T* plane = dx + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < kernel_; ++ky)
        for (int kx = 0; kx < kernel_; ++kx, ++row) {
          const T* src = cols + row * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long long iy = static_cast<long long>(oy) * stride_ - pad_ + ky;
            if (iy < 0 || iy >= static_cast<long long>(h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long long ix = static_cast<long long>(ox) * stride_ - pad_ + kx;
              if (ix >= 0 && ix < static_cast<long long>(w))
                plane[iy * w + ix] += src[oy * ow + ox];
            }
          }
        }
    }
  }

  int in_ch_, out_ch_, kernel_, stride_, pad_;
  Tensor<T> weights_, bias_, dweights_, dbias_;
  Tensor<T> x_;
};

template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(int channels, double eps = 1e-5, double momentum = 0.99)
      : channels_(channels), eps_(eps), momentum_(momentum),
        gamma_({static_cast<std::size_t>(channels)}),
        beta_({static_cast<std::size_t>(channels)}),
        running_mean_({static_cast<std::size_t>(channels)}),
        running_var_({static_cast<std::size_t>(channels)}),
        dgamma_(gamma_.shape), dbeta_(beta_.shape) {
    if (channels < 1) throw ParamError("BatchNorm: channels must be positive");
    gamma_.fill(T(1));
    running_var_.fill(T(1));
  }

  LayerKind kind() const override { return LayerKind::BatchNorm; }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm;
    s.channels = channels_;
    s.bn_eps = eps_;
    s.bn_momentum = momentum_;
    return s;
  }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3 || in[0] != static_cast<std::size_t>(channels_))
      throw ShapeError("BatchNorm: expected [C, H, W] with C = " + std::to_string(channels_));
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    check(x);
    const std::size_t n = x.shape[0], spatial = x.shape[2] * x.shape[3];
    const std::size_t m = n * spatial;
    trained_forward_ = train;

    Tensor<T> y(x.shape);
    if (train) {
      xhat_ = Tensor<T>(x.shape);
      inv_std_.assign(channels_, T(0));
      for (int c = 0; c < channels_; ++c) {
        T mean = T(0);
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = plane(x, s, c, spatial);
          for (std::size_t i = 0; i < spatial; ++i) mean += p[i];
        }
        mean /= static_cast<T>(m);
        T var = T(0);
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = plane(x, s, c, spatial);
          for (std::size_t i = 0; i < spatial; ++i) {
            const T d = p[i] - mean;
            var += d * d;
          }
        }
        var /= static_cast<T>(m);
        const T inv = T(1) / std::sqrt(var + static_cast<T>(eps_));
        inv_std_[c] = inv;
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = plane(x, s, c, spatial);
          T* ph = plane(xhat_, s, c, spatial);
          T* py = plane(y, s, c, spatial);
          for (std::size_t i = 0; i < spatial; ++i) {
            ph[i] = (p[i] - mean) * inv;
            py[i] = gamma_[c] * ph[i] + beta_[c];
          }
        }
        running_mean_[c] = static_cast<T>(momentum_) * running_mean_[c] +
                           static_cast<T>(1.0 - momentum_) * mean;
        running_var_[c] = static_cast<T>(momentum_) * running_var_[c] +
                          static_cast<T>(1.0 - momentum_) * var;
      }
    } else {
      for (int c = 0; c < channels_; ++c) {
        const T inv = T(1) / std::sqrt(running_var_[c] + static_cast<T>(eps_));
        const T scale = gamma_[c] * inv;
        const T shift = beta_[c] - running_mean_[c] * scale;
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = plane(x, s, c, spatial);
          T* py = plane(y, s, c, spatial);
          for (std::size_t i = 0; i < spatial; ++i) py[i] = scale * p[i] + shift;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t n = dy.shape[0], spatial = dy.shape[2] * dy.shape[3];
    const std::size_t m = n * spatial;
    Tensor<T> dx(dy.shape);

    if (!trained_forward_) {
      // Running statistics act as fixed affine parameters.
      for (int c = 0; c < channels_; ++c) {
        const T scale = gamma_[c] / std::sqrt(running_var_[c] + static_cast<T>(eps_));
        for (std::size_t s = 0; s < n; ++s) {
          const T* pdy = plane(dy, s, c, spatial);
          T* pdx = plane(dx, s, c, spatial);
          for (std::size_t i = 0; i < spatial; ++i) pdx[i] = pdy[i] * scale;
        }
      }
      return dx;
    }

    for (int c = 0; c < channels_; ++c) {
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (std::size_t s = 0; s < n; ++s) {
        const T* pdy = plane(dy, s, c, spatial);
        const T* ph = plane(xhat_, s, c, spatial);
        for (std::size_t i = 0; i < spatial; ++i) {
          sum_dy += pdy[i];
          sum_dy_xhat += pdy[i] * ph[i];
        }
      }
      dgamma_[c] += sum_dy_xhat;
      dbeta_[c] += sum_dy;

      const T scale = gamma_[c] * inv_std_[c] / static_cast<T>(m);
      for (std::size_t s = 0; s < n; ++s) {
        const T* pdy = plane(dy, s, c, spatial);
        const T* ph = plane(xhat_, s, c, spatial);
        T* pdx = plane(dx, s, c, spatial);
        for (std::size_t i = 0; i < spatial; ++i)
          pdx[i] = scale * (static_cast<T>(m) * pdy[i] - sum_dy - ph[i] * sum_dy_xhat);
      }
    }
    return dx;
  }

  std::vector<Tensor<T>*> params() override {
    return {&gamma_, &beta_, &running_mean_, &running_var_};
  }
  std::vector<Trainable<T>> trainables() override {
    return {{&gamma_, &dgamma_}, {&beta_, &dbeta_}};
  }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }
  double eps() const { return eps_; }
  int channels() const { return channels_; }

 private:
  void check(const Tensor<T>& x) const {
    if (x.shape.size() != 4 || x.shape[1] != static_cast<std::size_t>(channels_))
      throw ShapeError("BatchNorm: expected [N, C, H, W] input");
  }

  static T* plane(Tensor<T>& t, std::size_t s, int c, std::size_t spatial) {
    return t.ptr() + (s * t.shape[1] + c) * spatial;
  }
  static const T* plane(const Tensor<T>& t, std::size_t s, int c, std::size_t spatial) {
    return t.ptr() + (s * t.shape[1] + c) * spatial;
  }

  int channels_;
  double eps_, momentum_;
  Tensor<T> gamma_, beta_, running_mean_, running_var_, dgamma_, dbeta_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool trained_forward_ = false;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::ReLU; }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::ReLU;
    return s;
  }

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    mask_.assign(x.numel(), false);
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (x[i] > T(0)) {
        y[i] = x[i];
        mask_[i] = true;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.numel(); ++i)
      if (mask_[i]) dx[i] = dy[i];
    return dx;
  }

 private:
  std::vector<bool> mask_;
};

template <typename T>
class MaxPool final : public Layer<T> {
 public:
  explicit MaxPool(int size = 2, int stride = 2) : size_(size), stride_(stride) {
    if (size < 1 || stride < 1) throw ParamError("MaxPool: size and stride must be positive");
  }

  LayerKind kind() const override { return LayerKind::MaxPool; }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.pool = size_;
    s.pool_stride = stride_;
    return s;
  }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3) throw ShapeError("MaxPool: expected [C, H, W] input");
    if (in[1] < static_cast<std::size_t>(size_) || in[2] < static_cast<std::size_t>(size_))
      throw ShapeError("MaxPool: window larger than input");
    return {in[0], (in[1] - size_) / stride_ + 1, (in[2] - size_) / stride_ + 1};
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.shape.size() != 4) throw ShapeError("MaxPool: expected [N, C, H, W] input");
    const std::size_t n = x.shape[0], ch = x.shape[1], h = x.shape[2], w = x.shape[3];
    const Shape per = output_shape({ch, h, w});
    const std::size_t oh = per[1], ow = per[2];

    in_shape_ = x.shape;
    argmax_.assign(n * ch * oh * ow, 0);
    Tensor<T> y({n, ch, oh, ow});
    std::size_t o = 0;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < ch; ++c) {
        const T* plane = x.ptr() + (s * ch + c) * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
            std::size_t best = (oy * stride_) * w + ox * stride_;
            T best_v = plane[best];
            for (int ky = 0; ky < size_; ++ky)
              for (int kx = 0; kx < size_; ++kx) {
                const std::size_t idx = (oy * stride_ + ky) * w + (ox * stride_ + kx);
                if (plane[idx] > best_v) {  // ties keep the first (lowest) index
                  best_v = plane[idx];
                  best = idx;
                }
              }
            y[o] = best_v;
            argmax_[o] = (s * ch + c) * h * w + best;
          }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx(in_shape_);
    for (std::size_t o = 0; o < dy.numel(); ++o) dx[argmax_[o]] += dy[o];
    return dx;
  }

  const std::vector<std::size_t>& argmax() const { return argmax_; }
  int size() const { return size_; }
  int stride() const { return stride_; }

 private:
  int size_, stride_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(double rate, std::uint64_t seed = 0) : rate_(rate), rng_(seed) {
    if (rate < 0.0 || rate >= 1.0) throw ParamError("Dropout: rate must be in [0, 1)");
  }

  LayerKind kind() const override { return LayerKind::Dropout; }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate_;
    return s;
  }

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    if (!train || rate_ == 0.0) {
      identity_ = true;
      return x;
    }
    identity_ = false;
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    if (!(frozen_ && mask_.size() == x.numel())) {
      mask_.assign(x.numel(), T(0));
      for (auto& m : mask_)
        if (rng_.next_double() >= rate_) m = scale;
    }
    Tensor<T> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * mask_[i];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (identity_) return dy;
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
  }

  void reseed(std::uint64_t seed) { rng_ = Xoshiro256ss(seed); }
  // Test hook: reuse the last mask on subsequent forwards of the same shape.
  void freeze_mask(bool frozen) { frozen_ = frozen; }
  double rate() const { return rate_; }

 private:
  double rate_;
  Xoshiro256ss rng_;
  std::vector<T> mask_;
  bool identity_ = true;
  bool frozen_ = false;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(int in, int out)
      : in_(in), out_(out),
        weights_({static_cast<std::size_t>(out), static_cast<std::size_t>(in)}),
        bias_({static_cast<std::size_t>(out)}),
        dweights_(weights_.shape), dbias_(bias_.shape) {
    if (in < 1 || out < 1) throw ParamError("Dense: units must be positive");
  }

  LayerKind kind() const override { return LayerKind::Dense; }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in = in_;
    s.out = out_;
    return s;
  }

  Shape output_shape(const Shape& in) const override {
    if (shape_numel(in) != static_cast<std::size_t>(in_))
      throw ShapeError("Dense: expected " + std::to_string(in_) + " inputs, got " +
                       std::to_string(shape_numel(in)));
    return {static_cast<std::size_t>(out_)};
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    const std::size_t n = x.shape.empty() ? 0 : x.shape[0];
    if (x.numel() != n * in_) throw ShapeError("Dense: input size mismatch");
    x_ = x;
    Tensor<T> y({n, static_cast<std::size_t>(out_)});
    for (std::size_t s = 0; s < n; ++s) {
      const T* xin = x.ptr() + s * in_;
      T* out = y.ptr() + s * out_;
      for (int o = 0; o < out_; ++o) {
        const T* wrow = weights_.ptr() + static_cast<std::size_t>(o) * in_;
        T acc = bias_[o];
        for (int i = 0; i < in_; ++i) acc += wrow[i] * xin[i];
        out[o] = acc;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t n = dy.shape[0];
    Tensor<T> dx(x_.shape);
    for (std::size_t s = 0; s < n; ++s) {
      const T* xin = x_.ptr() + s * in_;
      const T* g = dy.ptr() + s * out_;
      T* dxin = dx.ptr() + s * in_;
      for (int o = 0; o < out_; ++o) {
        const T go = g[o];
        dbias_[o] += go;
        if (go == T(0)) continue;
        const T* wrow = weights_.ptr() + static_cast<std::size_t>(o) * in_;
        T* dwrow = dweights_.ptr() + static_cast<std::size_t>(o) * in_;
        for (int i = 0; i < in_; ++i) {
          dwrow[i] += go * xin[i];
          dxin[i] += go * wrow[i];
        }
      }
    }
    return dx;
  }

  std::vector<Tensor<T>*> params() override { return {&weights_, &bias_}; }
  std::vector<Trainable<T>> trainables() override {
    return {{&weights_, &dweights_}, {&bias_, &dbias_}};
  }

  Tensor<T>& weights() { return weights_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weights() const { return weights_; }
  const Tensor<T>& bias() const { return bias_; }
  int fan_in() const { return in_; }
  int fan_out() const { return out_; }

 private:
  int in_, out_;
  Tensor<T> weights_, bias_, dweights_, dbias_;
  Tensor<T> x_;
};

template <typename T>
class Softmax final : public Layer<T> {
 public:
  LayerKind kind() const override { return LayerKind::Softmax; }

  LayerSpec spec() const override {
    LayerSpec s;
    s.kind = LayerKind::Softmax;
    return s;
  }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 1) throw ShapeError("Softmax: expected flat input");
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, bool) override {
    if (x.shape.size() != 2) throw ShapeError("Softmax: expected [N, F] input");
    const std::size_t n = x.shape[0], f = x.shape[1];
    Tensor<T> y(x.shape);
    for (std::size_t s = 0; s < n; ++s) {
      const T* row = x.ptr() + s * f;
      T* out = y.ptr() + s * f;
      T peak = row[0];
      for (std::size_t i = 1; i < f; ++i) peak = std::max(peak, row[i]);
      T sum = T(0);
      for (std::size_t i = 0; i < f; ++i) {
        out[i] = std::exp(row[i] - peak);
        sum += out[i];
      }
      for (std::size_t i = 0; i < f; ++i) out[i] /= sum;
    }
    p_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t n = dy.shape[0], f = dy.shape[1];
    Tensor<T> dx(dy.shape);
    for (std::size_t s = 0; s < n; ++s) {
      const T* g = dy.ptr() + s * f;
      const T* p = p_.ptr() + s * f;
      T dot = T(0);
      for (std::size_t i = 0; i < f; ++i) dot += g[i] * p[i];
      T* out = dx.ptr() + s * f;
      for (std::size_t i = 0; i < f; ++i) out[i] = p[i] * (g[i] - dot);
    }
    return dx;
  }

 private:
  Tensor<T> p_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::Conv2D:
      return std::make_unique<Conv2D<T>>(s.in_ch, s.out_ch, s.kernel, s.stride, s.pad);
    case LayerKind::BatchNorm:
      return std::make_unique<BatchNorm<T>>(s.channels, s.bn_eps, s.bn_momentum);
    case LayerKind::ReLU:
      return std::make_unique<ReLU<T>>();
    case LayerKind::MaxPool:
      return std::make_unique<MaxPool<T>>(s.pool, s.pool_stride);
    case LayerKind::Dropout:
      return std::make_unique<Dropout<T>>(s.rate);
    case LayerKind::Dense:
      return std::make_unique<Dense<T>>(s.in, s.out);
    case LayerKind::Softmax:
      return std::make_unique<Softmax<T>>();
  }
  throw StructureError("make_layer: unknown layer kind");
}

}  // namespace usc::nn
