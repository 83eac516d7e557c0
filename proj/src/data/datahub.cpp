#include "fedshot/data/datahub.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fedshot/rng.hpp"

namespace fedshot {

std::vector<std::string> DatasetManifest::distinct_labels() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.label);
  return {s.begin(), s.end()};
}

uint64_t DatasetManifest::fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= '\n';
    h *= 0x100000001b3ULL;
  };
  for (const auto& e : entries) {
    mix(e.path);
    mix(e.label);
    mix(std::to_string(e.sample_rate));
  }
  return h;
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4)
      throw DataError("manifest line " + std::to_string(lineno) + ": expected 4 tab-separated fields, got " +
                      std::to_string(fields.size()));
    ManifestEntry e;
    e.path = fields[0];
    e.label = fields[1];
    try {
      e.duration_ms = std::stod(fields[2]);
      e.sample_rate = std::stoi(fields[3]);
    } catch (const std::exception&) {
      throw DataError("manifest line " + std::to_string(lineno) + ": bad numeric field");
    }
    if (e.duration_ms <= 0 || e.sample_rate <= 0)
      throw DataError("manifest line " + std::to_string(lineno) + ": non-positive duration or rate");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write manifest: " + path);
  for (const auto& e : manifest.entries) {
    std::ostringstream os;
    os << e.path << '\t' << e.label << '\t' << e.duration_ms << '\t' << e.sample_rate << '\n';
    f << os.str();
  }
}

LabelSpace make_fold(const DatasetManifest& manifest,
                     const std::pair<std::string, std::string>& novel_pair) {
  if (novel_pair.first == novel_pair.second)
    throw PairNotDistinct("novel pair repeats label '" + novel_pair.first + "'");
  const auto labels = manifest.distinct_labels();
  auto known = [&](const std::string& l) {
    return std::find(labels.begin(), labels.end(), l) != labels.end();
  };
  if (!known(novel_pair.first)) throw UnknownLabel("label '" + novel_pair.first + "' not in manifest");
  if (!known(novel_pair.second))
    throw UnknownLabel("label '" + novel_pair.second + "' not in manifest");

  LabelSpace space;
  space.novel_labels = {novel_pair.first, novel_pair.second};
  std::sort(space.novel_labels.begin(), space.novel_labels.end());
  for (const auto& l : labels)
    if (l != novel_pair.first && l != novel_pair.second) space.base_labels.push_back(l);
  return space;
}

const std::vector<std::pair<std::string, std::string>>& fold_presets() {
  static const std::vector<std::pair<std::string, std::string>> presets = {
      {"Heavy cold and sore throat coughing", "Night wet cough"},
      {"Dry afternoon cough", "Gaggy wet cough"},
      {"Spring allergy coughing", "Coughing up crap again"},
      {"Chesty and wet cough", "Barking cough"},
  };
  return presets;
}

LabelTable LabelTable::from_labels(std::vector<std::string> labels) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  LabelTable t;
  t.names = std::move(labels);
  return t;
}

int LabelTable::id_of(const std::string& name) const {
  auto it = std::lower_bound(names.begin(), names.end(), name);
  if (it == names.end() || *it != name) throw UnknownLabel("label '" + name + "' not in table");
  return static_cast<int>(it - names.begin());
}

const std::string& LabelTable::name_of(int id) const {
  if (id < 0 || id >= static_cast<int>(names.size()))
    throw UnknownLabel("label id " + std::to_string(id) + " out of range");
  return names[static_cast<size_t>(id)];
}

std::vector<ClientSplit> partition_clients(const DatasetManifest& manifest, int num_clients,
                                           uint64_t seed, int min_per_label_per_client) {
  if (num_clients < 1) throw ConfigError("need at least one client");
  std::vector<ClientSplit> splits(static_cast<size_t>(num_clients));
  for (int u = 0; u < num_clients; ++u) splits[static_cast<size_t>(u)].client_id = u;

  for (const std::string& label : manifest.distinct_labels()) {
    std::vector<size_t> rows;
    for (size_t i = 0; i < manifest.entries.size(); ++i)
      if (manifest.entries[i].label == label) rows.push_back(i);
    if (static_cast<int64_t>(rows.size()) <
        static_cast<int64_t>(num_clients) * min_per_label_per_client)
      throw InsufficientSamplesForSplit(
          "label '" + label + "' has " + std::to_string(rows.size()) + " clips, need " +
          std::to_string(static_cast<int64_t>(num_clients) * min_per_label_per_client));
    Rng rng(derive_seed(seed, "partition_label", manifest.fingerprint(),
                        std::hash<std::string>{}(label)));
    rng.shuffle(rows);
    for (size_t i = 0; i < rows.size(); ++i)
      splits[i % static_cast<size_t>(num_clients)].entry_indices.push_back(rows[i]);
  }
  for (auto& s : splits) std::sort(s.entry_indices.begin(), s.entry_indices.end());
  return splits;
}

FeatureStore::FeatureStore(std::string cache_dir, MfccConfig cfg)
    : cache_dir_(std::move(cache_dir)), cfg_(std::move(cfg)) {
  if (!cache_dir_.empty()) std::filesystem::create_directories(cache_dir_);
}

std::string FeatureStore::cache_path(const ManifestEntry& entry) const {
  const uint64_t key = derive_seed(cfg_.fingerprint(), entry.path);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(key));
  const std::string stem = std::filesystem::path(entry.path).stem().string();
  return (std::filesystem::path(cache_dir_) / (stem + "_" + hex + ".mfcc")).string();
}

MfccMatrix FeatureStore::get(const ManifestEntry& entry) {
  if (!cache_dir_.empty()) {
    const std::string path = cache_path(entry);
    if (std::filesystem::exists(path)) {
      ++hits_;
      MfccMatrix m = load_mfcc(path);
      m.config_fingerprint = cfg_.fingerprint();
      return m;
    }
  }
  ++misses_;
  MfccMatrix m = extract_mfcc(read_wav(entry.path), cfg_);
  if (!cache_dir_.empty()) save_mfcc(cache_path(entry), m);
  return m;
}

std::vector<ClientDataset> build_client_datasets(const DatasetManifest& manifest,
                                                 const std::vector<ClientSplit>& splits,
                                                 const LabelSpace& space,
                                                 const LabelTable& table, FeatureStore& store) {
  auto in = [](const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
  };
  std::vector<ClientDataset> out;
  for (const auto& split : splits) {
    ClientDataset cd;
    cd.client_id = split.client_id;
    for (size_t row : split.entry_indices) {
      const auto& e = manifest.entries[row];
      const int label_id = table.id_of(e.label);
      if (in(space.base_labels, e.label))
        cd.base.add(store.get(e), label_id, static_cast<int64_t>(row));
      else if (in(space.novel_labels, e.label))
        cd.novel.add(store.get(e), label_id, static_cast<int64_t>(row));
      else
        throw UnknownLabel("label '" + e.label + "' is in neither base nor novel set");
    }
    out.push_back(std::move(cd));
  }
  return out;
}

}  // namespace fedshot
