#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedshot/dsp/mfcc.hpp"
#include "fedshot/metrics/metrics.hpp"
#include "fedshot/nn/model.hpp"
#include "fedshot/tensor/optim.hpp"

namespace fedshot {

struct EpisodeSpec {
  int n_way = 2;
  int k_shot = 2;
  int v_query = 5;

  void validate() const {
    if (n_way < 2) throw ConfigError("n_way must be at least 2");
    if (k_shot < 1 || v_query < 1) throw ConfigError("k_shot and v_query must be positive");
  }
  std::string setting_string() const {
    return std::to_string(n_way) + "-way " + std::to_string(k_shot) + "-shot";
  }
};

// Labeled feature pool; samples carry stable ids so support/query disjointness
// is checkable by identity.
class FeaturePool {
 public:
  void add(MfccMatrix features, int label, int64_t sample_id);
  size_t size() const { return features_.size(); }
  const MfccMatrix& features(size_t i) const { return features_[i]; }
  int label(size_t i) const { return labels_[i]; }
  int64_t sample_id(size_t i) const { return ids_[i]; }
  std::vector<int> distinct_labels() const;
  const std::vector<size_t>& of_label(int label) const;

 private:
  std::vector<MfccMatrix> features_;
  std::vector<int> labels_;
  std::vector<int64_t> ids_;
  std::map<int, std::vector<size_t>> by_label_;
};

struct Episode {
  EpisodeSpec spec;
  std::vector<int> classes;             // the N episode labels, ascending
  std::vector<size_t> support;          // pool indices, class-major (K per class)
  std::vector<size_t> query;            // pool indices, class-major (V per class)
  std::vector<int> support_class_idx;   // row -> position in classes
  std::vector<int> query_class_idx;
};

// Uniform class choice without replacement, then uniform sample choice
// without replacement within each class.
Episode sample_episode(const FeaturePool& pool, const EpisodeSpec& spec, uint64_t seed);

enum class DistanceKind { SquaredEuclidean, Euclidean };

struct PrototypeBank {
  int embed_dim = 0;
  std::vector<int> labels;     // ascending
  std::vector<float> vectors;  // labels.size() x embed_dim

  const float* prototype(size_t i) const { return vectors.data() + i * embed_dim; }
};

PrototypeBank prototypes_from_embeddings(const std::vector<std::vector<float>>& embeddings,
                                         const std::vector<int>& labels);

PrototypeBank compute_prototypes(EmbeddingModel<float>& model,
                                 const std::vector<std::pair<const MfccMatrix*, int>>& support);

struct Classification {
  int label = 0;
  std::vector<std::pair<int, double>> probabilities;  // by ascending label
};

// Softmax over negative distances; ties resolve to the smallest label.
Classification classify_embedding(const PrototypeBank& bank, const std::vector<float>& embedding,
                                  DistanceKind distance);

Classification classify_query(EmbeddingModel<float>& model, const PrototypeBank& bank,
                              const MfccMatrix& query, DistanceKind distance);

struct EpisodeLossResult {
  Tensor<float> loss;
  int correct = 0;
  int total = 0;
  double accuracy() const { return total > 0 ? static_cast<double>(correct) / total : 0.0; }
};

// Loss over a prepared episode: prototypes are recomputed on the live tape so
// gradients flow through the support embeddings as well.
EpisodeLossResult episode_loss_from_embeddings(const Tensor<float>& support_emb,
                                               const std::vector<int>& support_class_idx,
                                               const Tensor<float>& query_emb,
                                               const std::vector<int>& query_class_idx,
                                               int n_way, DistanceKind distance);

EpisodeLossResult episode_loss(EmbeddingModel<float>& model, const FeaturePool& pool,
                               const Episode& episode, DistanceKind distance,
                               bool training = true);

struct EpisodeRecord {
  int index = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct LocalStats {
  uint32_t episodes_run = 0;  // the client's task count (aggregation weight)
  double mean_loss = 0.0;
  double mean_accuracy = 0.0;
  std::vector<EpisodeRecord> records;
};

LocalStats run_local_training(EmbeddingModel<float>& model, Optimizer<float>& optimizer,
                              const FeaturePool& base_pool, const EpisodeSpec& spec,
                              int episodes, uint64_t seed, DistanceKind distance);

struct EvalResult {
  std::map<int, std::vector<double>> per_class_f1;  // label -> per-episode F1
  int episodes = 0;
  double mean_accuracy = 0.0;

  std::map<int, SummaryStat> f1_summary() const {
    std::map<int, SummaryStat> out;
    for (const auto& [label, values] : per_class_f1) out[label] = summarize(values);
    return out;
  }
};

// Episodic evaluation on novel classes: prototypes from sampled supports,
// per-class F1 accumulated across episodes.
EvalResult evaluate_novel(EmbeddingModel<float>& model, const FeaturePool& novel_pool,
                          const EpisodeSpec& spec, int n_episodes, uint64_t seed,
                          DistanceKind distance);

}  // namespace fedshot
