#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedshot/dsp/audio.hpp"
#include "fedshot/dsp/mfcc.hpp"
#include "fedshot/fewshot/engine.hpp"

namespace fedshot {

struct ManifestEntry {
  std::string path;  // WAV location
  std::string label;
  double duration_ms = 0;
  int sample_rate = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<std::string> distinct_labels() const;
  uint64_t fingerprint() const;
};

// One record per line: path TAB label TAB duration_ms TAB sample_rate.
DatasetManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& manifest);

struct LabelSpace {
  std::vector<std::string> base_labels;   // Y_train
  std::vector<std::string> novel_labels;  // Y_test
};

// Two labels become the novel set, the rest the base set.
LabelSpace make_fold(const DatasetManifest& manifest,
                     const std::pair<std::string, std::string>& novel_pair);

// The four cross-validation novel pairs; together they cover all eight
// classes exactly once.
const std::vector<std::pair<std::string, std::string>>& fold_presets();

// Stable string-to-id mapping in sorted label order, so numeric label order
// equals lexicographic order everywhere.
struct LabelTable {
  std::vector<std::string> names;

  static LabelTable from_labels(std::vector<std::string> labels);
  int id_of(const std::string& name) const;
  const std::string& name_of(int id) const;
};

// Per-label round-robin assignment after a seeded shuffle (IID split).
// Every client ends up with near-equal counts of every label.
struct ClientSplit {
  int client_id = 0;
  std::vector<size_t> entry_indices;  // rows of the manifest
};

std::vector<ClientSplit> partition_clients(const DatasetManifest& manifest, int num_clients,
                                           uint64_t seed, int min_per_label_per_client = 1);

// --- synthetic desk-scale dataset ---

struct SyntheticClassSpec {
  std::string label;
  double fundamental_hz = 200;
  int harmonics = 5;
  double attack_ms = 12;
  double decay_ms = 120;
  double noise_floor = 0.2;   // white-noise amplitude relative to burst peak
  double f0_jitter = 0.06;    // +- fraction of the fundamental
  double amp_jitter = 0.5;    // +- fraction of burst amplitude
  int bursts_min = 2;
  int bursts_max = 4;
};

std::vector<SyntheticClassSpec> default_synthetic_classes();

// Distinct fundamentals must be separated by >= 15%; throws SpecOverlap.
void check_spec_separation(const std::vector<SyntheticClassSpec>& specs);

AudioClip synthesize_clip(const SyntheticClassSpec& spec, double duration_s, int sample_rate,
                          uint64_t seed);

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<AudioClip> clips;  // parallel to manifest.entries
};

SyntheticDataset generate_synthetic(const std::vector<SyntheticClassSpec>& specs, int per_class,
                                    double duration_s, int sample_rate, uint64_t seed);

// Writes clips as WAV files under dir and returns a manifest pointing at them.
DatasetManifest write_synthetic_dataset(const std::string& dir, const SyntheticDataset& data);

// --- feature cache ---

// Extracted blocks keyed by (clip id, config fingerprint); empty cache_dir
// disables persistence.
class FeatureStore {
 public:
  FeatureStore(std::string cache_dir, MfccConfig cfg);

  MfccMatrix get(const ManifestEntry& entry);
  std::string cache_path(const ManifestEntry& entry) const;

  int64_t hits() const { return hits_; }
  int64_t misses() const { return misses_; }

 private:
  std::string cache_dir_;
  MfccConfig cfg_;
  int64_t hits_ = 0;
  int64_t misses_ = 0;
};

struct ClientDataset {
  int client_id = 0;
  FeaturePool base;   // labels in Y_train
  FeaturePool novel;  // labels in Y_test
};

// Materialize per-client pools; sample ids are manifest row indices, labels
// are LabelTable ids over the full manifest.
std::vector<ClientDataset> build_client_datasets(const DatasetManifest& manifest,
                                                 const std::vector<ClientSplit>& splits,
                                                 const LabelSpace& space,
                                                 const LabelTable& table, FeatureStore& store);

}  // namespace fedshot
