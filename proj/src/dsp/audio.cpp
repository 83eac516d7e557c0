#include "fedshot/dsp/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fedshot/bytes.hpp"
#include "fedshot/rng.hpp"

namespace fedshot {

void validate_clip(const AudioClip& clip) {
  if (clip.samples.empty()) throw DataError("audio clip has no samples");
  if (clip.sample_rate <= 0)
    throw DataError("audio clip has non-positive sample rate " +
                    std::to_string(clip.sample_rate));
  for (float s : clip.samples)
    if (!std::isfinite(s)) throw NonFiniteInput("audio clip contains NaN or Inf samples");
}

AudioClip mix_noise(const AudioClip& clip, const AudioClip& noise, float ratio, uint64_t seed) {
  validate_clip(clip);
  validate_clip(noise);
  if (ratio <= 0.f || ratio > 1.f)
    throw ConfigError("mix ratio must be in (0,1], got " + std::to_string(ratio));
  if (clip.sample_rate != noise.sample_rate)
    throw RateMismatch("clip rate " + std::to_string(clip.sample_rate) + " vs noise rate " +
                       std::to_string(noise.sample_rate));
  if (noise.samples.size() < clip.samples.size())
    throw NoiseTooShort("noise has " + std::to_string(noise.samples.size()) +
                        " samples, clip needs " + std::to_string(clip.samples.size()));

  Rng rng(seed);
  const size_t slack = noise.samples.size() - clip.samples.size();
  const size_t offset = static_cast<size_t>(rng.uniform_int(slack + 1));

  AudioClip out = clip;
  for (size_t i = 0; i < out.samples.size(); ++i) {
    const float v = clip.samples[i] + ratio * noise.samples[offset + i];
    out.samples[i] = std::clamp(v, -1.f, 1.f);
  }
  return out;
}

namespace {

struct WavFmt {
  uint16_t format = 0;
  uint16_t channels = 0;
  uint32_t sample_rate = 0;
  uint16_t bits = 0;
};

}  // namespace

AudioClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open WAV file: " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  ByteReader r(raw);
  if (r.str(4) != "RIFF") throw DataError("not a RIFF file: " + path);
  r.u32();  // container size
  if (r.str(4) != "WAVE") throw DataError("not a WAVE file: " + path);

  WavFmt fmt;
  bool have_fmt = false;
  AudioClip clip;
  clip.source_id = path;

  while (r.remaining() >= 8) {
    const std::string id = r.str(4);
    const uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) throw DataError("malformed fmt chunk in " + path);
      fmt.format = r.u16();
      fmt.channels = r.u16();
      fmt.sample_rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      fmt.bits = r.u16();
      for (uint32_t i = 16; i < size; ++i) r.u8();
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("data chunk before fmt in " + path);
      if (fmt.channels == 0) throw DataError("zero channels in " + path);
      const uint32_t bytes_per = fmt.bits / 8u;
      if (bytes_per == 0 || size % (bytes_per * fmt.channels) != 0)
        throw DataError("data chunk size not frame-aligned in " + path);
      const uint32_t frames = size / (bytes_per * fmt.channels);
      clip.samples.reserve(frames);
      const float inv_ch = 1.f / static_cast<float>(fmt.channels);
      for (uint32_t i = 0; i < frames; ++i) {
        float acc = 0.f;
        for (uint16_t c = 0; c < fmt.channels; ++c) {
          if (fmt.format == 1 && fmt.bits == 16) {
            acc += static_cast<int16_t>(r.u16()) / 32768.f;
          } else if (fmt.format == 3 && fmt.bits == 32) {
            acc += r.f32();
          } else {
            throw DataError("unsupported WAV encoding (format " + std::to_string(fmt.format) +
                            ", " + std::to_string(fmt.bits) + " bits) in " + path);
          }
        }
        clip.samples.push_back(acc * inv_ch);
      }
      clip.sample_rate = static_cast<int>(fmt.sample_rate);
      return clip;
    } else {
      // skip unknown chunk (word-aligned)
      const uint32_t skip = size + (size & 1u);
      for (uint32_t i = 0; i < skip && r.remaining() > 0; ++i) r.u8();
    }
  }
  throw DataError("no data chunk in " + path);
}

void write_wav(const std::string& path, const AudioClip& clip, int bits_per_sample) {
  validate_clip(clip);
  if (bits_per_sample != 16 && bits_per_sample != 32)
    throw ConfigError("write_wav supports 16 (PCM) or 32 (float) bits");
  const bool is_float = bits_per_sample == 32;
  const uint32_t bytes_per = static_cast<uint32_t>(bits_per_sample / 8);
  const uint32_t data_size = static_cast<uint32_t>(clip.samples.size()) * bytes_per;

  ByteWriter w;
  w.str("RIFF");
  w.u32(36 + data_size);
  w.str("WAVE");
  w.str("fmt ");
  w.u32(16);
  w.u16(is_float ? 3 : 1);
  w.u16(1);  // mono
  w.u32(static_cast<uint32_t>(clip.sample_rate));
  w.u32(static_cast<uint32_t>(clip.sample_rate) * bytes_per);
  w.u16(static_cast<uint16_t>(bytes_per));
  w.u16(static_cast<uint16_t>(bits_per_sample));
  w.str("data");
  w.u32(data_size);
  for (float s : clip.samples) {
    if (is_float) {
      w.f32(s);
    } else {
      const float c = std::clamp(s, -1.f, 1.f);
      const int v = static_cast<int>(std::lrint(c * 32767.f));
      w.u16(static_cast<uint16_t>(static_cast<int16_t>(v)));
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write WAV file: " + path);
  const auto& buf = w.data();
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("short write to WAV file: " + path);
}

}  // namespace fedshot
