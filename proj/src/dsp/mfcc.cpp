#include "fedshot/dsp/mfcc.hpp"

#include <cmath>
#include <complex>
#include <fstream>

#include "fedshot/bytes.hpp"
#include "fedshot/rng.hpp"

namespace fedshot {

int MfccConfig::win_samples(int sample_rate) const {
  return static_cast<int>(std::floor(window_ms * sample_rate / 1000.0));
}

int MfccConfig::hop_samples(int sample_rate) const {
  return static_cast<int>(std::floor(hop_ms * sample_rate / 1000.0));
}

int MfccConfig::effective_fft_size(int sample_rate) const {
  if (fft_size > 0) return fft_size;
  int n = 1;
  while (n < win_samples(sample_rate)) n <<= 1;
  return n;
}

void MfccConfig::validate(int sample_rate) const {
  if (sample_rate <= 0) throw ConfigError("sample rate must be positive");
  if (n_mfcc <= 0 || n_mels <= 0) throw ConfigError("n_mfcc and n_mels must be positive");
  if (n_mfcc > n_mels)
    throw ConfigError("n_mfcc (" + std::to_string(n_mfcc) + ") exceeds n_mels (" +
                      std::to_string(n_mels) + ")");
  if (window_ms <= 0 || hop_ms <= 0) throw ConfigError("window and hop must be positive");
  if (preemphasis < 0 || preemphasis >= 1)
    throw ConfigError("preemphasis must lie in [0,1)");
  if (log_floor <= 0) throw ConfigError("log_floor must be positive");
  const int win = win_samples(sample_rate);
  if (win < 2) throw ConfigError("window shorter than 2 samples at this rate");
  const int fft = effective_fft_size(sample_rate);
  if (fft < win)
    throw ConfigError("fft_size " + std::to_string(fft) + " shorter than window " +
                      std::to_string(win));
  if ((fft & (fft - 1)) != 0)
    throw ConfigError("fft_size " + std::to_string(fft) + " is not a power of two");
}

uint64_t MfccConfig::fingerprint() const {
  // canonical textual form, hashed
  char buf[256];
  std::snprintf(buf, sizeof(buf), "mfcc|%d|%.6f|%.6f|%d|%d|%.6f|%.9g|%d", n_mfcc, window_ms,
                hop_ms, n_mels, fft_size, preemphasis, log_floor, normalize ? 1 : 0);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* p = buf; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 0x100000001b3ULL;
  }
  return h;
}

int expected_frame_count(int64_t n_samples, int win_samples, int hop_samples) {
  if (n_samples < win_samples) return 0;
  return static_cast<int>((n_samples - win_samples) / hop_samples) + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(int n_mels, int fft_size, int sample_rate) {
  const int n_bins = fft_size / 2 + 1;
  std::vector<double> fb(static_cast<size_t>(n_mels) * n_bins, 0.0);
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[static_cast<size_t>(i)] = mel_to_hz(mel_max * i / (n_mels + 1));

  const double bin_hz = static_cast<double>(sample_rate) / fft_size;
  for (int k = 0; k < n_mels; ++k) {
    const double lo = edges[static_cast<size_t>(k)];
    const double mid = edges[static_cast<size_t>(k) + 1];
    const double hi = edges[static_cast<size_t>(k) + 2];
    for (int j = 0; j < n_bins; ++j) {
      const double f = j * bin_hz;
      double w = 0.0;
      if (f > lo && f < hi) w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
      fb[static_cast<size_t>(k) * n_bins + j] = std::max(w, 0.0);
    }
  }
  return fb;
}

double mel_filter_center_hz(int k, int n_mels, int sample_rate) {
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  return mel_to_hz(mel_max * (k + 1) / (n_mels + 1));
}

namespace {

// Iterative radix-2, in place; fft_size is a power of two by config invariant.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

std::vector<double> preemphasized(const AudioClip& clip, double coeff) {
  std::vector<double> y(clip.samples.size());
  y[0] = clip.samples[0];
  for (size_t i = 1; i < y.size(); ++i)
    y[i] = static_cast<double>(clip.samples[i]) - coeff * clip.samples[i - 1];
  return y;
}

}  // namespace

std::vector<std::vector<double>> power_spectra(const AudioClip& clip, const MfccConfig& cfg) {
  validate_clip(clip);
  cfg.validate(clip.sample_rate);
  const int win = cfg.win_samples(clip.sample_rate);
  const int hop = cfg.hop_samples(clip.sample_rate);
  const int fft = cfg.effective_fft_size(clip.sample_rate);
  if (static_cast<int64_t>(clip.samples.size()) < win)
    throw ClipTooShort("clip has " + std::to_string(clip.samples.size()) +
                       " samples, window needs " + std::to_string(win));

  const std::vector<double> x = preemphasized(clip, cfg.preemphasis);
  std::vector<double> hann(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i)
    hann[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);

  const int frames = expected_frame_count(static_cast<int64_t>(x.size()), win, hop);
  std::vector<std::vector<double>> out(static_cast<size_t>(frames));
  std::vector<std::complex<double>> buf(static_cast<size_t>(fft));
  for (int t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const size_t start = static_cast<size_t>(t) * hop;
    for (int i = 0; i < win; ++i)
      buf[static_cast<size_t>(i)] = x[start + i] * hann[static_cast<size_t>(i)];
    fft_radix2(buf);
    auto& ps = out[static_cast<size_t>(t)];
    ps.resize(static_cast<size_t>(fft / 2 + 1));
    for (int j = 0; j <= fft / 2; ++j) ps[static_cast<size_t>(j)] = std::norm(buf[static_cast<size_t>(j)]);
  }
  return out;
}

std::vector<std::vector<double>> log_mel_spectrogram(const AudioClip& clip,
                                                     const MfccConfig& cfg) {
  const auto spectra = power_spectra(clip, cfg);
  const int fft = cfg.effective_fft_size(clip.sample_rate);
  const int n_bins = fft / 2 + 1;
  const auto fb = mel_filterbank(cfg.n_mels, fft, clip.sample_rate);

  std::vector<std::vector<double>> out(spectra.size());
  for (size_t t = 0; t < spectra.size(); ++t) {
    auto& row = out[t];
    row.resize(static_cast<size_t>(cfg.n_mels));
    for (int k = 0; k < cfg.n_mels; ++k) {
      double e = 0.0;
      const double* w = fb.data() + static_cast<size_t>(k) * n_bins;
      for (int j = 0; j < n_bins; ++j) e += w[j] * spectra[t][static_cast<size_t>(j)];
      row[static_cast<size_t>(k)] = std::log(std::max(e, cfg.log_floor));
    }
  }
  return out;
}

MfccMatrix extract_mfcc(const AudioClip& clip, const MfccConfig& cfg) {
  const auto log_mel = log_mel_spectrogram(clip, cfg);
  const int frames = static_cast<int>(log_mel.size());
  const int M = cfg.n_mels;

  // DCT-II, orthonormal
  std::vector<double> dct(static_cast<size_t>(cfg.n_mfcc) * M);
  for (int k = 0; k < cfg.n_mfcc; ++k) {
    const double norm = k == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
    for (int n = 0; n < M; ++n)
      dct[static_cast<size_t>(k) * M + n] =
          norm * std::cos(M_PI * k * (2.0 * n + 1.0) / (2.0 * M));
  }

  MfccMatrix m;
  m.frame_count = frames;
  m.n_coeffs = cfg.n_mfcc;
  m.config_fingerprint = cfg.fingerprint();
  m.values.resize(static_cast<size_t>(frames) * cfg.n_mfcc);
  std::vector<double> col(static_cast<size_t>(frames));
  for (int t = 0; t < frames; ++t)
    for (int k = 0; k < cfg.n_mfcc; ++k) {
      double acc = 0.0;
      const double* row = dct.data() + static_cast<size_t>(k) * M;
      for (int n = 0; n < M; ++n) acc += row[n] * log_mel[static_cast<size_t>(t)][static_cast<size_t>(n)];
      m.values[static_cast<size_t>(t) * cfg.n_mfcc + k] = static_cast<float>(acc);
    }

  if (cfg.normalize && frames > 0) {
    for (int k = 0; k < cfg.n_mfcc; ++k) {
      double mean = 0.0;
      for (int t = 0; t < frames; ++t) mean += m.at(t, k);
      mean /= frames;
      double var = 0.0;
      for (int t = 0; t < frames; ++t) {
        const double d = m.at(t, k) - mean;
        var += d * d;
      }
      var /= frames;
      const double inv = 1.0 / std::sqrt(std::max(var, 1e-12));
      for (int t = 0; t < frames; ++t)
        m.values[static_cast<size_t>(t) * cfg.n_mfcc + k] =
            static_cast<float>((m.at(t, k) - mean) * inv);
    }
  }
  return m;
}

namespace {
constexpr uint16_t kMfccVersion = 1;
}

std::vector<uint8_t> serialize_mfcc(const MfccMatrix& m) {
  ByteWriter w;
  w.str("MFCC");
  w.u16(kMfccVersion);
  w.u16(0);  // reserved, pads the header to 16 bytes
  w.u32(static_cast<uint32_t>(m.frame_count));
  w.u32(static_cast<uint32_t>(m.n_coeffs));
  for (float v : m.values) w.f32(v);
  return w.take();
}

MfccMatrix deserialize_mfcc(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "MFCC") throw BadMagic("feature block lacks MFCC magic");
  const uint16_t version = r.u16();
  if (version != kMfccVersion)
    throw VersionMismatch("feature block version " + std::to_string(version) + ", expected " +
                          std::to_string(kMfccVersion));
  r.u16();  // reserved
  MfccMatrix m;
  m.frame_count = static_cast<int>(r.u32());
  m.n_coeffs = static_cast<int>(r.u32());
  const size_t n = static_cast<size_t>(m.frame_count) * static_cast<size_t>(m.n_coeffs);
  m.values.resize(n);
  for (size_t i = 0; i < n; ++i) m.values[i] = r.f32();
  return m;
}

void save_mfcc(const std::string& path, const MfccMatrix& m) {
  const auto bytes = serialize_mfcc(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write feature block: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("short write to feature block: " + path);
}

MfccMatrix load_mfcc(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open feature block: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return deserialize_mfcc(bytes);
}

}  // namespace fedshot
