#pragma once

#include <map>
#include <string>

#include "fedshot/data/datahub.hpp"
#include "fedshot/fed/orchestrator.hpp"

namespace fedshot {

// Flat key=value experiment description. Every run echoes the full canonical
// form into its output directory; re-running that echo reproduces the run.
struct ExperimentConfig {
  uint64_t seed = 42;
  std::string out_dir = "runs/out";
  std::string cache_dir;  // empty disables the feature cache

  std::string data_source = "synthetic8";  // synthetic8 | manifest
  std::string data_manifest;
  int data_per_class = 60;
  double data_duration_s = 1.0;
  int data_sample_rate = 16000;

  bool augment_enabled = false;
  double augment_ratio_min = 0.1;
  double augment_ratio_max = 0.5;

  MfccConfig mfcc;

  std::string model_arch = "proto_conv_small";  // proto_conv_small | resnet18_attention
  int model_embed_dim = 64;
  int model_base_channels = 0;
  bool model_attention = true;

  EpisodeSpec episode{2, 2, 5};

  int fed_num_clients = 5;
  int fed_rounds = 40;
  int fed_episodes_per_round = 25;
  std::string fed_transport = "inprocess";  // inprocess | socket
  std::string fed_socket_addr = "127.0.0.1:0";
  double fed_timeout_s = 300.0;

  double train_lr = 1e-3;
  std::string train_optimizer = "adam";       // adam | sgd
  std::string train_distance = "sqeuclidean";  // sqeuclidean | euclidean

  int fold_preset = 0;      // index into fold_presets(); -1 uses fold_novel
  std::string fold_novel;   // "label A|label B"

  int eval_episodes = 200;
  int local_client = 0;

  static ExperimentConfig from_file(const std::string& path);
  void set(const std::string& key, const std::string& value);  // unknown keys rejected
  void validate() const;
  std::string echo() const;

  Architecture architecture() const;
  OptimizerKind optimizer_kind() const;
  DistanceKind distance_kind() const;
  TransportKind transport_kind() const;
  std::pair<std::string, std::string> novel_pair() const;
  FederationConfig federation(int in_coeffs, int in_frames) const;
};

}  // namespace fedshot
