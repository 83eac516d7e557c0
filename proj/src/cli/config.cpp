#include "fedshot/cli/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fedshot {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<uint64_t>(x);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

void ExperimentConfig::set(const std::string& key, const std::string& v) {
  if (key == "seed") seed = parse_u64(key, v);
  else if (key == "out_dir") out_dir = v;
  else if (key == "cache_dir") cache_dir = v;
  else if (key == "data.source") data_source = v;
  else if (key == "data.manifest") data_manifest = v;
  else if (key == "data.per_class") data_per_class = parse_int(key, v);
  else if (key == "data.duration_s") data_duration_s = parse_double(key, v);
  else if (key == "data.sample_rate") data_sample_rate = parse_int(key, v);
  else if (key == "augment.enabled") augment_enabled = parse_bool(key, v);
  else if (key == "augment.ratio_min") augment_ratio_min = parse_double(key, v);
  else if (key == "augment.ratio_max") augment_ratio_max = parse_double(key, v);
  else if (key == "mfcc.n_mfcc") mfcc.n_mfcc = parse_int(key, v);
  else if (key == "mfcc.window_ms") mfcc.window_ms = parse_double(key, v);
  else if (key == "mfcc.hop_ms") mfcc.hop_ms = parse_double(key, v);
  else if (key == "mfcc.n_mels") mfcc.n_mels = parse_int(key, v);
  else if (key == "mfcc.fft_size") mfcc.fft_size = parse_int(key, v);
  else if (key == "mfcc.preemphasis") mfcc.preemphasis = parse_double(key, v);
  else if (key == "mfcc.log_floor") mfcc.log_floor = parse_double(key, v);
  else if (key == "mfcc.normalize") mfcc.normalize = parse_bool(key, v);
  else if (key == "model.arch") model_arch = v;
  else if (key == "model.embed_dim") model_embed_dim = parse_int(key, v);
  else if (key == "model.base_channels") model_base_channels = parse_int(key, v);
  else if (key == "model.attention") model_attention = parse_bool(key, v);
  else if (key == "episode.n_way") episode.n_way = parse_int(key, v);
  else if (key == "episode.k_shot") episode.k_shot = parse_int(key, v);
  else if (key == "episode.v_query") episode.v_query = parse_int(key, v);
  else if (key == "fed.num_clients") fed_num_clients = parse_int(key, v);
  else if (key == "fed.rounds") fed_rounds = parse_int(key, v);
  else if (key == "fed.episodes_per_round") fed_episodes_per_round = parse_int(key, v);
  else if (key == "fed.transport") fed_transport = v;
  else if (key == "fed.socket_addr") fed_socket_addr = v;
  else if (key == "fed.timeout_s") fed_timeout_s = parse_double(key, v);
  else if (key == "train.lr") train_lr = parse_double(key, v);
  else if (key == "train.optimizer") train_optimizer = v;
  else if (key == "train.distance") train_distance = v;
  else if (key == "fold.preset") fold_preset = parse_int(key, v);
  else if (key == "fold.novel") { fold_novel = v; fold_preset = -1; }
  else if (key == "eval.episodes") eval_episodes = parse_int(key, v);
  else if (key == "local.client") local_client = parse_int(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

void ExperimentConfig::validate() const {
  if (data_source != "synthetic8" && data_source != "manifest")
    throw ConfigError("data.source must be synthetic8 or manifest");
  if (data_source == "manifest" && data_manifest.empty())
    throw ConfigError("data.source=manifest needs data.manifest");
  if (data_per_class < 1 || data_duration_s <= 0 || data_sample_rate <= 0)
    throw ConfigError("dataset parameters must be positive");
  if (augment_enabled) {
    if (data_source != "synthetic8")
      throw ConfigError("noise augmentation is only wired for the synthetic source");
    if (!(augment_ratio_min > 0 && augment_ratio_min <= augment_ratio_max &&
          augment_ratio_max <= 1.0))
      throw ConfigError("augment ratios must satisfy 0 < min <= max <= 1");
  }
  mfcc.validate(data_sample_rate);
  architecture();
  if (model_embed_dim < 1) throw ConfigError("model.embed_dim must be positive");
  episode.validate();
  if (fed_num_clients < 1 || fed_rounds < 1 || fed_episodes_per_round < 0)
    throw ConfigError("federation sizes must be positive (episodes may be zero)");
  transport_kind();
  parse_address(fed_socket_addr);
  if (fed_timeout_s <= 0) throw ConfigError("fed.timeout_s must be positive");
  if (train_lr <= 0) throw ConfigError("train.lr must be positive");
  optimizer_kind();
  distance_kind();
  if (fold_preset < -1 || fold_preset >= static_cast<int>(fold_presets().size()))
    throw ConfigError("fold.preset out of range");
  if (fold_preset == -1 && fold_novel.find('|') == std::string::npos)
    throw ConfigError("fold.novel must be 'label A|label B'");
  if (eval_episodes < 1) throw ConfigError("eval.episodes must be positive");
  if (local_client < 0 || local_client >= fed_num_clients)
    throw ConfigError("local.client out of range");
}

std::string ExperimentConfig::echo() const {
  std::ostringstream os;
  os << "seed = " << seed << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << "cache_dir = " << cache_dir << "\n";
  os << "data.source = " << data_source << "\n";
  os << "data.manifest = " << data_manifest << "\n";
  os << "data.per_class = " << data_per_class << "\n";
  os << "data.duration_s = " << data_duration_s << "\n";
  os << "data.sample_rate = " << data_sample_rate << "\n";
  os << "augment.enabled = " << (augment_enabled ? "true" : "false") << "\n";
  os << "augment.ratio_min = " << augment_ratio_min << "\n";
  os << "augment.ratio_max = " << augment_ratio_max << "\n";
  os << "mfcc.n_mfcc = " << mfcc.n_mfcc << "\n";
  os << "mfcc.window_ms = " << mfcc.window_ms << "\n";
  os << "mfcc.hop_ms = " << mfcc.hop_ms << "\n";
  os << "mfcc.n_mels = " << mfcc.n_mels << "\n";
  os << "mfcc.fft_size = " << mfcc.fft_size << "\n";
  os << "mfcc.preemphasis = " << mfcc.preemphasis << "\n";
  os << "mfcc.log_floor = " << mfcc.log_floor << "\n";
  os << "mfcc.normalize = " << (mfcc.normalize ? "true" : "false") << "\n";
  os << "model.arch = " << model_arch << "\n";
  os << "model.embed_dim = " << model_embed_dim << "\n";
  os << "model.base_channels = " << model_base_channels << "\n";
  os << "model.attention = " << (model_attention ? "true" : "false") << "\n";
  os << "episode.n_way = " << episode.n_way << "\n";
  os << "episode.k_shot = " << episode.k_shot << "\n";
  os << "episode.v_query = " << episode.v_query << "\n";
  os << "fed.num_clients = " << fed_num_clients << "\n";
  os << "fed.rounds = " << fed_rounds << "\n";
  os << "fed.episodes_per_round = " << fed_episodes_per_round << "\n";
  os << "fed.transport = " << fed_transport << "\n";
  os << "fed.socket_addr = " << fed_socket_addr << "\n";
  os << "fed.timeout_s = " << fed_timeout_s << "\n";
  os << "train.lr = " << train_lr << "\n";
  os << "train.optimizer = " << train_optimizer << "\n";
  os << "train.distance = " << train_distance << "\n";
  if (fold_preset >= 0)
    os << "fold.preset = " << fold_preset << "\n";
  else
    os << "fold.novel = " << fold_novel << "\n";
  os << "eval.episodes = " << eval_episodes << "\n";
  os << "local.client = " << local_client << "\n";
  return os.str();
}

Architecture ExperimentConfig::architecture() const {
  if (model_arch == "proto_conv_small") return Architecture::ProtoConvSmall;
  if (model_arch == "resnet18_attention") return Architecture::ResNet18Attention;
  throw ConfigError("model.arch must be proto_conv_small or resnet18_attention");
}

OptimizerKind ExperimentConfig::optimizer_kind() const {
  if (train_optimizer == "adam") return OptimizerKind::Adam;
  if (train_optimizer == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("train.optimizer must be adam or sgd");
}

DistanceKind ExperimentConfig::distance_kind() const {
  if (train_distance == "sqeuclidean") return DistanceKind::SquaredEuclidean;
  if (train_distance == "euclidean") return DistanceKind::Euclidean;
  throw ConfigError("train.distance must be sqeuclidean or euclidean");
}

TransportKind ExperimentConfig::transport_kind() const {
  if (fed_transport == "inprocess") return TransportKind::InProcess;
  if (fed_transport == "socket") return TransportKind::Socket;
  throw ConfigError("fed.transport must be inprocess or socket");
}

std::pair<std::string, std::string> ExperimentConfig::novel_pair() const {
  if (fold_preset >= 0) return fold_presets()[static_cast<size_t>(fold_preset)];
  const auto bar = fold_novel.find('|');
  return {fold_novel.substr(0, bar), fold_novel.substr(bar + 1)};
}

FederationConfig ExperimentConfig::federation(int in_coeffs, int in_frames) const {
  FederationConfig fc;
  fc.num_clients = fed_num_clients;
  fc.rounds = fed_rounds;
  fc.episodes_per_round = fed_episodes_per_round;
  fc.episode = episode;
  fc.lr = static_cast<float>(train_lr);
  fc.optimizer = optimizer_kind();
  fc.distance = distance_kind();
  fc.seed = seed;
  fc.transport = transport_kind();
  fc.socket_addr = fed_socket_addr;
  fc.timeout_ms = static_cast<int>(fed_timeout_s * 1000.0);
  fc.model.arch = architecture();
  fc.model.embed_dim = model_embed_dim;
  fc.model.base_channels = model_base_channels;
  fc.model.attention = model_attention;
  fc.model.in_coeffs = in_coeffs;
  fc.model.in_frames = in_frames;
  return fc;
}

}  // namespace fedshot
