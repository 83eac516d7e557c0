#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fedshot/data/datahub.hpp"
#include "fedshot/rng.hpp"

namespace fedshot {

std::vector<SyntheticClassSpec> default_synthetic_classes() {
  // Eight cough-type labels; fundamentals spaced >= 15% apart, with varying
  // harmonic richness and burst envelopes so classes differ beyond pitch.
  // Labels that form a cross-validation novel pair sit far apart on the
  // frequency ladder.
  std::vector<SyntheticClassSpec> specs(8);
  const char* names[8] = {
      "Barking cough",          "Chesty and wet cough",
      "Coughing up crap again", "Dry afternoon cough",
      "Gaggy wet cough",        "Heavy cold and sore throat coughing",
      "Night wet cough",        "Spring allergy coughing",
  };
  const double f0[8] = {515, 275, 440, 200, 375, 170, 320, 235};
  const int harmonics[8] = {6, 4, 7, 3, 5, 6, 4, 5};
  const double attack[8] = {8, 14, 10, 18, 12, 9, 16, 11};
  const double decay[8] = {90, 150, 110, 190, 130, 100, 170, 120};
  for (int i = 0; i < 8; ++i) {
    specs[static_cast<size_t>(i)].label = names[i];
    specs[static_cast<size_t>(i)].fundamental_hz = f0[i];
    specs[static_cast<size_t>(i)].harmonics = harmonics[i];
    specs[static_cast<size_t>(i)].attack_ms = attack[i];
    specs[static_cast<size_t>(i)].decay_ms = decay[i];
  }
  return specs;
}

void check_spec_separation(const std::vector<SyntheticClassSpec>& specs) {
  for (const auto& s : specs) {
    if (s.fundamental_hz <= 0 || s.harmonics < 1 || s.attack_ms <= 0 || s.decay_ms <= 0 ||
        s.noise_floor < 0 || s.bursts_min < 1 || s.bursts_max < s.bursts_min)
      throw ConfigError("synthetic class '" + s.label + "' has non-positive parameters");
  }
  std::vector<double> f0;
  for (const auto& s : specs) f0.push_back(s.fundamental_hz);
  std::sort(f0.begin(), f0.end());
  for (size_t i = 1; i < f0.size(); ++i) {
    if ((f0[i] - f0[i - 1]) / f0[i - 1] < 0.15)
      throw SpecOverlap("fundamentals " + std::to_string(f0[i - 1]) + " and " +
                        std::to_string(f0[i]) + " Hz are closer than 15%");
  }
}

AudioClip synthesize_clip(const SyntheticClassSpec& spec, double duration_s, int sample_rate,
                          uint64_t seed) {
  Rng rng(seed);
  const size_t n = static_cast<size_t>(duration_s * sample_rate);
  std::vector<double> x(n, 0.0);

  const int n_bursts =
      spec.bursts_min + static_cast<int>(rng.uniform_int(
                            static_cast<uint64_t>(spec.bursts_max - spec.bursts_min + 1)));
  const double f0 = spec.fundamental_hz * (1.0 + rng.uniform(-spec.f0_jitter, spec.f0_jitter));
  const size_t attack = static_cast<size_t>(spec.attack_ms * sample_rate / 1000.0);
  const size_t decay = static_cast<size_t>(spec.decay_ms * sample_rate / 1000.0);
  const size_t burst_len = attack + decay;

  for (int b = 0; b < n_bursts; ++b) {
    const double amp = 1.0 + rng.uniform(-spec.amp_jitter, spec.amp_jitter);
    const size_t start =
        burst_len < n ? static_cast<size_t>(rng.uniform_int(n - burst_len)) : 0;
    std::vector<double> phase(static_cast<size_t>(spec.harmonics));
    for (auto& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);
    for (size_t i = 0; i < burst_len && start + i < n; ++i) {
      const double t = static_cast<double>(i) / sample_rate;
      double env;
      if (i < attack)
        env = static_cast<double>(i) / static_cast<double>(attack);
      else
        env = std::exp(-3.0 * static_cast<double>(i - attack) / static_cast<double>(decay));
      double s = 0.0;
      for (int h = 1; h <= spec.harmonics; ++h)
        s += std::sin(2.0 * M_PI * f0 * h * t + phase[static_cast<size_t>(h - 1)]) / h;
      x[start + i] += amp * env * s;
    }
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0)
    for (double& v : x) v /= peak;  // burst peak at 1 before the noise floor

  for (double& v : x) v += spec.noise_floor * rng.uniform(-1.0, 1.0);

  peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0 ? 0.9 / peak : 1.0;

  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.label = spec.label;
  clip.samples.resize(n);
  for (size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<float>(x[i] * scale);
  return clip;
}

SyntheticDataset generate_synthetic(const std::vector<SyntheticClassSpec>& specs, int per_class,
                                    double duration_s, int sample_rate, uint64_t seed) {
  if (specs.size() < 2) throw ConfigError("need at least two synthetic classes");
  if (per_class < 1) throw ConfigError("per_class must be positive");
  check_spec_separation(specs);

  SyntheticDataset data;
  for (size_t ci = 0; ci < specs.size(); ++ci) {
    for (int i = 0; i < per_class; ++i) {
      AudioClip clip = synthesize_clip(specs[ci], duration_s, sample_rate,
                                       derive_seed(seed, "clip", ci, static_cast<uint64_t>(i)));
      char name[64];
      std::snprintf(name, sizeof(name), "class%02zu_clip%04d.wav", ci, i);
      clip.source_id = name;
      ManifestEntry e;
      e.path = name;
      e.label = specs[ci].label;
      e.duration_ms = duration_s * 1000.0;
      e.sample_rate = sample_rate;
      data.manifest.entries.push_back(std::move(e));
      data.clips.push_back(std::move(clip));
    }
  }
  return data;
}

DatasetManifest write_synthetic_dataset(const std::string& dir, const SyntheticDataset& data) {
  std::filesystem::create_directories(dir);
  DatasetManifest manifest = data.manifest;
  for (size_t i = 0; i < data.clips.size(); ++i) {
    const std::string path = (std::filesystem::path(dir) / manifest.entries[i].path).string();
    write_wav(path, data.clips[i], 16);
    manifest.entries[i].path = path;
  }
  write_manifest((std::filesystem::path(dir) / "manifest.tsv").string(), manifest);
  return manifest;
}

}  // namespace fedshot
