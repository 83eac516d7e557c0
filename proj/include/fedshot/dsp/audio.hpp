#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedshot/errors.hpp"

namespace fedshot {

struct AudioClip {
  std::vector<float> samples;  // amplitudes in [-1, 1]
  int sample_rate = 0;
  std::string label;      // optional class identifier
  std::string source_id;  // opaque origin tag
};

// Non-empty, finite, positive rate; throws NonFiniteInput / DataError.
void validate_clip(const AudioClip& clip);

// clip + ratio * noise segment, clamped to [-1, 1]. The noise offset is drawn
// from the seed, so augmentation replays exactly.
AudioClip mix_noise(const AudioClip& clip, const AudioClip& noise, float ratio, uint64_t seed);

// PCM WAV: 16-bit signed or 32-bit float; stereo is averaged to mono.
AudioClip read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip, int bits_per_sample = 16);

}  // namespace fedshot
