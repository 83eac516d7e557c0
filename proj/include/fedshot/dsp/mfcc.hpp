#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedshot/dsp/audio.hpp"

namespace fedshot {

struct MfccConfig {
  int n_mfcc = 40;
  double window_ms = 128.0;
  double hop_ms = 64.0;
  int n_mels = 40;
  int fft_size = 0;  // 0 picks the next power of two >= window length
  double preemphasis = 0.97;
  double log_floor = 1e-10;
  bool normalize = false;  // per-clip mean/variance normalization of each coefficient

  int win_samples(int sample_rate) const;
  int hop_samples(int sample_rate) const;
  int effective_fft_size(int sample_rate) const;
  void validate(int sample_rate) const;
  uint64_t fingerprint() const;
};

struct MfccMatrix {
  int frame_count = 0;
  int n_coeffs = 0;
  std::vector<float> values;  // frame-major: frame_count x n_coeffs
  uint64_t config_fingerprint = 0;

  float at(int frame, int coeff) const {
    return values[static_cast<size_t>(frame) * n_coeffs + coeff];
  }
};

int expected_frame_count(int64_t n_samples, int win_samples, int hop_samples);

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters spanning 0 .. rate/2; row-major n_mels x (fft/2 + 1).
std::vector<double> mel_filterbank(int n_mels, int fft_size, int sample_rate);
// Peak frequency of filter k (0-based).
double mel_filter_center_hz(int k, int n_mels, int sample_rate);

// Pipeline stages, exposed separately so intermediate products can be
// inspected and cached: pre-emphasis -> framing -> Hann window -> rFFT ->
// power -> mel -> log -> DCT-II.
std::vector<std::vector<double>> power_spectra(const AudioClip& clip, const MfccConfig& cfg);
std::vector<std::vector<double>> log_mel_spectrogram(const AudioClip& clip,
                                                     const MfccConfig& cfg);
MfccMatrix extract_mfcc(const AudioClip& clip, const MfccConfig& cfg);

// Flat little-endian f32 block with a 16-byte header, for the feature cache.
std::vector<uint8_t> serialize_mfcc(const MfccMatrix& m);
MfccMatrix deserialize_mfcc(const std::vector<uint8_t>& bytes);
void save_mfcc(const std::string& path, const MfccMatrix& m);
MfccMatrix load_mfcc(const std::string& path);

}  // namespace fedshot
