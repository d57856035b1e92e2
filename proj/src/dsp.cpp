#include "usc/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "usc/errors.hpp"

namespace usc::dsp {

namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 FFT, in place.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Reflect index into [0, n) without repeating the edge sample.
std::size_t reflect_index(long long i, long long n) {
  if (n == 1) return 0;
  const long long period = 2 * (n - 1);
  long long m = i % period;
  if (m < 0) m += period;
  if (m >= n) m = period - m;
  return static_cast<std::size_t>(m);
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

}  // namespace

std::vector<float> FeatureImage::plane() const {
  std::vector<float> out(static_cast<std::size_t>(side) * side);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pixels[i * 3];
  return out;
}

Matrix stft_power(const dataset::AudioClip& clip, int fft_size, int hop) {
  if (!is_power_of_two(fft_size)) throw ParamError("stft_power: fft_size must be a power of two");
  if (hop <= 0 || hop > fft_size) throw ParamError("stft_power: need 0 < hop <= fft_size");
  const auto len = static_cast<long long>(clip.samples.size());
  if (len < fft_size) throw InputError("stft_power: clip shorter than fft_size");

  const int pad = fft_size / 2;
  const std::size_t bins = static_cast<std::size_t>(fft_size) / 2 + 1;
  const std::size_t frames = 1 + static_cast<std::size_t>(len / hop);
  const auto window = hann_window(fft_size);

  Matrix out(bins, frames);
  std::vector<std::complex<double>> buf(fft_size);
  for (std::size_t t = 0; t < frames; ++t) {
    const long long start = static_cast<long long>(t) * hop - pad;
    for (int i = 0; i < fft_size; ++i) {
      const double s = clip.samples[reflect_index(start + i, len)];
      buf[i] = s * window[i];
    }
    fft_radix2(buf);
    for (std::size_t k = 0; k < bins; ++k) out(k, t) = std::norm(buf[k]);
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Matrix mel_filterbank(int n_mels, int fft_size, int sample_rate, double f_min,
                      double f_max) {
  if (n_mels < 2) throw ParamError("mel_filterbank: need n_mels >= 2");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
    throw ParamError("mel_filterbank: need 0 <= f_min < f_max <= sample_rate/2");

  const std::size_t bins = static_cast<std::size_t>(fft_size) / 2 + 1;
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);

  // n_mels + 2 grid points; the n_mels interior points are the peaks.
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  Matrix fb(static_cast<std::size_t>(n_mels), bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft_size;
      const double rising = (f - lo) / (center - lo);
      const double falling = (hi - f) / (hi - center);
      fb(m, k) = std::max(0.0, std::min(rising, falling));
    }
  }
  return fb;
}

Spectrogram mel_spectrogram(const dataset::AudioClip& clip, const MelParams& p) {
  const Matrix power = stft_power(clip, p.fft_size, p.hop);
  const Matrix fb =
      mel_filterbank(p.n_mels, p.fft_size, clip.sample_rate, p.f_min, p.f_max);

  Matrix mel(fb.rows, power.cols);
  for (std::size_t m = 0; m < fb.rows; ++m)
    for (std::size_t k = 0; k < power.rows; ++k) {
      const double w = fb(m, k);
      if (w == 0.0) continue;
      for (std::size_t t = 0; t < power.cols; ++t) mel(m, t) += w * power(k, t);
    }

  Spectrogram spec;
  spec.values = amplitude_to_db(mel, p.top_db);
  spec.kind = SpectrogramKind::Mel;
  spec.frame_hop = p.hop;
  spec.top_db = p.top_db;
  spec.bin_frequencies.resize(p.n_mels);
  const double mel_lo = hz_to_mel(p.f_min), mel_hi = hz_to_mel(p.f_max);
  for (int m = 0; m < p.n_mels; ++m)
    spec.bin_frequencies[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (p.n_mels + 1));
  return spec;
}

std::vector<int> cqt_window_lengths(const CqtParams& p, int sample_rate) {
  const double q = 1.0 / (std::pow(2.0, 1.0 / p.bins_per_octave) - 1.0);
  std::vector<int> lengths(p.bins);
  for (int k = 0; k < p.bins; ++k) {
    const double fk = p.f_min * std::pow(2.0, static_cast<double>(k) / p.bins_per_octave);
    lengths[k] = static_cast<int>(std::ceil(q * sample_rate / fk));
  }
  return lengths;
}

Spectrogram cqt_spectrogram(const dataset::AudioClip& clip, const CqtParams& p) {
  const int sr = clip.sample_rate;
  const double f_top =
      p.f_min * std::pow(2.0, static_cast<double>(p.bins - 1) / p.bins_per_octave);
  if (f_top >= sr / 2.0)
    throw ParamError("cqt_spectrogram: top center frequency reaches Nyquist");

  const auto len = static_cast<long long>(clip.samples.size());
  const std::size_t frames = 1 + static_cast<std::size_t>(len / p.hop);
  const auto lengths = cqt_window_lengths(p, sr);

  Matrix mag(static_cast<std::size_t>(p.bins), frames);
  std::vector<double> freqs(p.bins);

  for (int k = 0; k < p.bins; ++k) {
    const double fk = p.f_min * std::pow(2.0, static_cast<double>(k) / p.bins_per_octave);
    freqs[k] = fk;
    const int nk = lengths[k];
    const auto window = hann_window(nk);

    // Precompute the windowed complex kernel once per bin; samples outside
    // the clip contribute zero.
    std::vector<double> ker_re(nk), ker_im(nk);
    double wsum = 0.0;
    for (int i = 0; i < nk; ++i) {
      const double ang = -2.0 * std::numbers::pi * fk * i / sr;
      ker_re[i] = window[i] * std::cos(ang);
      ker_im[i] = window[i] * std::sin(ang);
      wsum += window[i];
    }
    const double scale = 2.0 / wsum;  // unit response to a full-scale sine

    for (std::size_t t = 0; t < frames; ++t) {
      const long long start = static_cast<long long>(t) * p.hop - nk / 2;
      const long long lo = std::max(0LL, -start);
      const long long hi = std::min(static_cast<long long>(nk), len - start);
      double re = 0.0, im = 0.0;
      for (long long i = lo; i < hi; ++i) {
        const double s = clip.samples[start + i];
        re += s * ker_re[i];
        im += s * ker_im[i];
      }
      mag(k, t) = std::hypot(re, im) * scale;
    }
  }

  Spectrogram spec;
  spec.values = amplitude_to_db(mag, p.top_db);
  spec.kind = SpectrogramKind::ConstantQ;
  spec.frame_hop = p.hop;
  spec.top_db = p.top_db;
  spec.bin_frequencies = std::move(freqs);
  return spec;
}

Matrix amplitude_to_db(const Matrix& power, double top_db) {
  if (top_db <= 0.0) throw ParamError("amplitude_to_db: top_db must be positive");
  constexpr double kEps = 1e-10;
  double peak = 0.0;
  for (const double p : power.v) {
    if (p < 0.0) throw ParamError("amplitude_to_db: negative entry");
    peak = std::max(peak, p);
  }
  const double ref_db = 10.0 * std::log10(std::max(peak, kEps));

  Matrix out(power.rows, power.cols);
  for (std::size_t i = 0; i < power.v.size(); ++i) {
    const double db = 10.0 * std::log10(std::max(power.v[i], kEps)) - ref_db;
    out.v[i] = std::max(db, -top_db);
  }
  return out;
}

FeatureImage to_feature_image(const Spectrogram& spec, int side) {
  const Matrix& m = spec.values;
  if (m.rows == 0 || m.cols == 0) throw InputError("to_feature_image: empty spectrogram");
  if (side < 1) throw ParamError("to_feature_image: side must be positive");

  FeatureImage img;
  img.side = side;
  img.pixels.resize(static_cast<std::size_t>(side) * side * 3);

  const auto src_pos = [](int dst, int out_n, std::size_t in_n) {
    if (out_n == 1 || in_n == 1) return 0.0;
    return static_cast<double>(dst) * (static_cast<double>(in_n) - 1.0) / (out_n - 1);
  };

  for (int r = 0; r < side; ++r) {
    const double fy = src_pos(r, side, m.rows);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, m.rows - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int c = 0; c < side; ++c) {
      const double fx = src_pos(c, side, m.cols);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, m.cols - 1);
      const double wx = fx - static_cast<double>(x0);

      const double db = (1.0 - wy) * ((1.0 - wx) * m(y0, x0) + wx * m(y0, x1)) +
                        wy * ((1.0 - wx) * m(y1, x0) + wx * m(y1, x1));
      const double value = std::clamp((db + spec.top_db) / spec.top_db, 0.0, 1.0);
      const auto px = static_cast<float>(value);
      const std::size_t base = (static_cast<std::size_t>(r) * side + c) * 3;
      img.pixels[base] = px;
      img.pixels[base + 1] = px;
      img.pixels[base + 2] = px;
    }
  }
  return img;
}

}  // namespace usc::dsp
