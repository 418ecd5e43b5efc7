#pragma once
// WAV ingestion and the MFCC feature frontend.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vvv/errors.hpp"

namespace vvv::audio {

// Mono waveform, samples in [-1, 1], rate >= 8000 Hz.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;
};

void validate(const AudioClip& clip);

struct MfccConfig {
  int frame_length_ms = 25;
  int frame_shift_ms = 10;
  int num_mel_filters = 26;
  int num_coefficients = 13;
  double pre_emphasis = 0.97;
  bool include_log_energy = true;

  void validate() const;
  // Coefficients per frame: num_coefficients plus the optional energy slot.
  std::size_t feature_dim() const {
    return static_cast<std::size_t>(num_coefficients) + (include_log_energy ? 1 : 0);
  }
};

// Row-per-frame features; every row has dim entries.
struct FeatureMatrix {
  std::vector<std::vector<double>> frames;
  std::size_t dim = 0;
};

void validate(const FeatureMatrix& features);

// Parses a RIFF/WAVE container holding mono 16-bit PCM.
// Failure classes are distinct: malformed container, unsupported encoding,
// truncated data (see WavError::Kind).
AudioClip read_wav(std::span<const std::uint8_t> bytes);
AudioClip read_wav_file(const std::filesystem::path& path);

std::vector<std::uint8_t> write_wav(const AudioClip& clip);
void write_wav_file(const AudioClip& clip, const std::filesystem::path& path);

// Pre-emphasis -> 25/10 ms Hamming frames (trailing partial dropped) ->
// power spectrum (radix-2 FFT, zero-padded to the next power of two) ->
// triangular mel filterbank -> log (floored at 1e-10) -> DCT-II, optionally
// followed by the log frame energy.
FeatureMatrix compute_mfcc(const AudioClip& clip, const MfccConfig& cfg);

// Pre-log mel filter energies per frame, exposed for spectral tests.
std::vector<std::vector<double>> compute_mel_energies(const AudioClip& clip,
                                                      const MfccConfig& cfg);

// Stacks several takes of the same phrase into one training matrix.
FeatureMatrix concat(std::span<const FeatureMatrix> parts);

constexpr double kLogFloor = 1e-10;

}  // namespace vvv::audio
