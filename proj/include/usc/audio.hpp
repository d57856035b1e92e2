#pragma once

#include <string>
#include <vector>

namespace usc::dataset {

// Mono waveform. Samples are dimensionless amplitudes in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;

  double duration_seconds() const {
    return sample_rate > 0
               ? static_cast<double>(samples.size()) / sample_rate
               : 0.0;
  }
};

// Decodes a RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit, 1 or 2
// channels). Stereo is collapsed to mono by per-sample mean; 16-bit PCM is
// scaled to [-1, 1] by dividing by 32768.
AudioClip load_wav(const std::string& path);

// Windowed-sinc polyphase resampler (Kaiser window, beta = 8.6, 64 taps per
// phase). Output length is round(len * target_rate / source_rate). Identical
// rates return the input unchanged.
AudioClip resample(const AudioClip& clip, int target_rate);

// Truncates or zero-pads at the end so the clip lasts exactly `seconds`.
AudioClip fix_length(const AudioClip& clip, double seconds);

}  // namespace usc::dataset
