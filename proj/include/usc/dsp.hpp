#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "usc/audio.hpp"

namespace usc::dsp {

// Dense row-major matrix of doubles; rows index frequency bins (low to
// high), columns index time frames.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

enum class SpectrogramKind { Mel, ConstantQ };

struct Spectrogram {
  Matrix values;  // dB, in [max - top_db, max]
  SpectrogramKind kind = SpectrogramKind::Mel;
  std::vector<double> bin_frequencies;  // Hz, strictly increasing
  int frame_hop = 0;                    // samples
  double top_db = 80.0;
};

// Square 3-channel image with pixels in [0, 1]. Channels are identical
// (grayscale replication). Row 0 holds the lowest frequency; renderers flip
// so frequency ascends bottom-to-top on screen.
struct FeatureImage {
  int side = 0;
  std::vector<float> pixels;  // side*side*3, HWC

  float at(int r, int c, int ch) const {
    return pixels[(static_cast<std::size_t>(r) * side + c) * 3 + ch];
  }
  // Single-channel copy (channel 0), side*side row-major.
  std::vector<float> plane() const;
};

// Power spectrogram |X|^2 of Hann-windowed frames, centered via reflect
// padding of fft_size/2. Output is (fft_size/2 + 1) x (1 + floor(len/hop)).
Matrix stft_power(const dataset::AudioClip& clip, int fft_size, int hop);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular mel filterbank, n_mels x (fft_size/2 + 1). Peaks sit at n_mels
// points equally spaced on the mel scale between f_min and f_max.
Matrix mel_filterbank(int n_mels, int fft_size, int sample_rate, double f_min,
                      double f_max);

struct MelParams {
  int n_mels = 128;
  int fft_size = 2048;
  int hop = 512;
  double f_min = 0.0;
  double f_max = 22050.0;
  double top_db = 80.0;
};

Spectrogram mel_spectrogram(const dataset::AudioClip& clip, const MelParams& p = {});

struct CqtParams {
  double f_min = 32.70;      // C1
  int bins = 84;             // 7 octaves
  int bins_per_octave = 12;
  int hop = 512;
  double top_db = 80.0;
};

// Naive constant-Q transform: per-bin Hann-windowed inner products at
// geometrically spaced center frequencies f_k = f_min * 2^(k/B), window
// length N_k = ceil(Q * sample_rate / f_k) with Q = 1 / (2^(1/B) - 1).
Spectrogram cqt_spectrogram(const dataset::AudioClip& clip, const CqtParams& p = {});

// Per-bin window lengths N_k for the given parameters and sample rate.
std::vector<int> cqt_window_lengths(const CqtParams& p, int sample_rate);

// 10*log10(max(p, 1e-10)) relative to the matrix maximum, clamped below at
// -top_db. Output entries lie in [-top_db, 0] with max exactly 0.
Matrix amplitude_to_db(const Matrix& power, double top_db = 80.0);

// Rescales dB values from [-top_db, 0] to [0, 1] and bilinearly resizes to
// side x side, replicated into 3 identical channels.
FeatureImage to_feature_image(const Spectrogram& spec, int side = 220);

}  // namespace usc::dsp
