#include "usc/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "usc/errors.hpp"

namespace usc::dataset {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

float read_f32(const unsigned char* p) {
  const std::uint32_t bits = read_u32(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

// Modified Bessel function of the first kind, order zero (power series).
double bessel_i0(double x) {
  const double half = x / 2.0;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 64; ++k) {
    term *= (half / k) * (half / k);
    sum += term;
    if (term < sum * 1e-18) break;
  }
  return sum;
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

constexpr int kTapsPerPhase = 64;
constexpr double kKaiserBeta = 8.6;
constexpr std::uint64_t kMaxPhaseTable = 8192;

// One phase of the interpolation filter: 64 windowed-sinc taps centered on a
// fractional input position `frac` in [0, 1), normalized to unity DC gain.
std::vector<double> make_phase(double frac, double cutoff) {
  std::vector<double> taps(kTapsPerPhase);
  const double half_span = kTapsPerPhase / 2.0;
  const double i0_beta = bessel_i0(kKaiserBeta);
  double sum = 0.0;
  for (int k = 0; k < kTapsPerPhase; ++k) {
    // Tap k sits at input offset (k - 31) relative to floor(position).
    const double t = (k - (kTapsPerPhase / 2 - 1)) - frac;
    const double x = t / half_span;
    const double window =
        std::abs(x) <= 1.0 ? bessel_i0(kKaiserBeta * std::sqrt(1.0 - x * x)) / i0_beta : 0.0;
    taps[k] = 2.0 * cutoff * sinc(2.0 * cutoff * t) * window;
    sum += taps[k];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

}  // namespace

AudioClip load_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file: " + path);

  unsigned char hdr[12];
  if (!in.read(reinterpret_cast<char*>(hdr), 12))
    throw FormatError("not a RIFF/WAVE file (short header): " + path);
  if (std::memcmp(hdr, "RIFF", 4) != 0 || std::memcmp(hdr + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<unsigned char> data;
  bool have_data = false;

  unsigned char chunk_hdr[8];
  while (in.read(reinterpret_cast<char*>(chunk_hdr), 8)) {
    const std::uint32_t chunk_size = read_u32(chunk_hdr + 4);
    if (std::memcmp(chunk_hdr, "fmt ", 4) == 0) {
      std::vector<unsigned char> fmt(chunk_size);
      if (!in.read(reinterpret_cast<char*>(fmt.data()), chunk_size) || chunk_size < 16)
        throw FormatError("truncated fmt chunk: " + path);
      format = read_u16(fmt.data());
      channels = read_u16(fmt.data() + 2);
      rate = read_u32(fmt.data() + 4);
      bits = read_u16(fmt.data() + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk_hdr, "data", 4) == 0) {
      data.resize(chunk_size);
      in.read(reinterpret_cast<char*>(data.data()), chunk_size);
      if (static_cast<std::uint32_t>(in.gcount()) != chunk_size)
        throw IoError("truncated data chunk: " + path);
      have_data = true;
    } else {
      in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
      continue;
    }
    if (chunk_size & 1) in.seekg(1, std::ios::cur);  // chunks are word-aligned
  }

  if (!have_fmt || !have_data) throw FormatError("missing fmt/data chunk: " + path);
  if (channels < 1 || channels > 2)
    throw FormatError("unsupported channel count " + std::to_string(channels) + ": " + path);
  if (rate == 0) throw FormatError("zero sample rate: " + path);

  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    throw FormatError("unsupported codec (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bit): " + path);

  const std::size_t bytes_per_sample = pcm16 ? 2 : 4;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t frames = data.size() / frame_bytes;

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (unsigned c = 0; c < channels; ++c) {
      const unsigned char* p = data.data() + f * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        const auto v = static_cast<std::int16_t>(read_u16(p));
        acc += static_cast<double>(v) / 32768.0;
      } else {
        acc += static_cast<double>(read_f32(p));
      }
    }
    clip.samples[f] = acc / channels;
  }
  return clip;
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw ParamError("resample: target_rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  const std::uint64_t src = static_cast<std::uint64_t>(clip.sample_rate);
  const std::uint64_t dst = static_cast<std::uint64_t>(target_rate);
  const std::uint64_t g = std::gcd(src, dst);
  const std::uint64_t up = dst / g;    // phases
  const std::uint64_t down = src / g;  // input step per phase step

  const double ratio = static_cast<double>(dst) / static_cast<double>(src);
  const double cutoff = 0.5 * std::min(1.0, ratio);

  const std::uint64_t n_in = clip.samples.size();
  const std::uint64_t n_out =
      (n_in * dst + src / 2) / src;  // round(len * target / source)

  // Precompute the phase table when the rational factor is small; otherwise
  // evaluate the kernel per output sample (arbitrary ratios stay correct,
  // just slower).
  std::vector<std::vector<double>> phases;
  if (up <= kMaxPhaseTable) {
    phases.reserve(up);
    for (std::uint64_t p = 0; p < up; ++p)
      phases.push_back(make_phase(static_cast<double>(p) / static_cast<double>(up), cutoff));
  }

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);

  const auto& x = clip.samples;
  std::vector<double> scratch;
  for (std::uint64_t n = 0; n < n_out; ++n) {
    const std::uint64_t num = n * down;  // position = num / up input samples
    const std::int64_t base = static_cast<std::int64_t>(num / up);
    const std::uint64_t phase = num % up;
    if (phases.empty())
      scratch = make_phase(static_cast<double>(phase) / static_cast<double>(up), cutoff);
    const std::vector<double>& taps = phases.empty() ? scratch : phases[phase];
    double acc = 0.0;
    for (int k = 0; k < kTapsPerPhase; ++k) {
      const std::int64_t idx = base + (k - (kTapsPerPhase / 2 - 1));
      if (idx >= 0 && idx < static_cast<std::int64_t>(n_in)) acc += taps[k] * x[idx];
    }
    out.samples[n] = acc;
  }
  return out;
}

AudioClip fix_length(const AudioClip& clip, double seconds) {
  if (seconds <= 0.0) throw ParamError("fix_length: duration must be positive");
  const auto target = static_cast<std::size_t>(std::llround(seconds * clip.sample_rate));
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples = clip.samples;
  out.samples.resize(target, 0.0);  // truncates or zero-pads at the end
  return out;
}

}  // namespace usc::dataset
