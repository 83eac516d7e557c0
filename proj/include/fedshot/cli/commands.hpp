#pragma once

#include <string>
#include <vector>

#include "fedshot/cli/config.hpp"

namespace fedshot::cli {

// Data materialized for a run: per-client pools plus the pooled novel set.
struct PreparedData {
  DatasetManifest manifest;
  LabelTable table;
  LabelSpace space;
  std::vector<ClientDataset> clients;
  FeaturePool pooled_novel;
  int in_coeffs = 0;
  int in_frames = 0;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

void save_checkpoint(const std::string& path, const ParameterSet& params, uint32_t round);
ParameterSet load_checkpoint(const std::string& path);

int cmd_gen_synthetic(const ExperimentConfig& cfg);
int cmd_extract(const ExperimentConfig& cfg);
int cmd_train_local(const ExperimentConfig& cfg);
int cmd_train_fed(const ExperimentConfig& cfg);
int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);
int cmd_bench(const ExperimentConfig& cfg);

}  // namespace fedshot::cli
