#include "fedshot/fewshot/engine.hpp"

#include <algorithm>
#include <cmath>

#include "fedshot/rng.hpp"

namespace fedshot {

void FeaturePool::add(MfccMatrix features, int label, int64_t sample_id) {
  by_label_[label].push_back(features_.size());
  features_.push_back(std::move(features));
  labels_.push_back(label);
  ids_.push_back(sample_id);
}

std::vector<int> FeaturePool::distinct_labels() const {
  std::vector<int> out;
  out.reserve(by_label_.size());
  for (const auto& [label, _] : by_label_) out.push_back(label);
  return out;  // map order is ascending
}

const std::vector<size_t>& FeaturePool::of_label(int label) const {
  auto it = by_label_.find(label);
  if (it == by_label_.end())
    throw UnknownLabel("pool has no samples for label " + std::to_string(label));
  return it->second;
}

Episode sample_episode(const FeaturePool& pool, const EpisodeSpec& spec, uint64_t seed) {
  spec.validate();
  const std::vector<int> all_labels = pool.distinct_labels();
  if (static_cast<int>(all_labels.size()) < spec.n_way)
    throw InsufficientClasses("pool has " + std::to_string(all_labels.size()) +
                              " classes, episode needs " + std::to_string(spec.n_way));
  const int need = spec.k_shot + spec.v_query;
  for (int label : all_labels)
    if (static_cast<int>(pool.of_label(label).size()) < need)
      throw InsufficientSamplesPerClass("class " + std::to_string(label) + " has " +
                                        std::to_string(pool.of_label(label).size()) +
                                        " samples, episode needs " + std::to_string(need));

  Rng rng(seed);

  // partial Fisher-Yates: first n_way entries are the episode classes
  std::vector<int> chosen = all_labels;
  for (int i = 0; i < spec.n_way; ++i) {
    const size_t j = i + static_cast<size_t>(rng.uniform_int(chosen.size() - i));
    std::swap(chosen[static_cast<size_t>(i)], chosen[j]);
  }
  chosen.resize(static_cast<size_t>(spec.n_way));
  std::sort(chosen.begin(), chosen.end());

  Episode ep;
  ep.spec = spec;
  ep.classes = chosen;
  for (int ci = 0; ci < spec.n_way; ++ci) {
    std::vector<size_t> members = pool.of_label(chosen[static_cast<size_t>(ci)]);
    for (int i = 0; i < need; ++i) {
      const size_t j = i + static_cast<size_t>(rng.uniform_int(members.size() - i));
      std::swap(members[static_cast<size_t>(i)], members[j]);
    }
    for (int i = 0; i < spec.k_shot; ++i) {
      ep.support.push_back(members[static_cast<size_t>(i)]);
      ep.support_class_idx.push_back(ci);
    }
    for (int i = 0; i < spec.v_query; ++i) {
      ep.query.push_back(members[static_cast<size_t>(spec.k_shot + i)]);
      ep.query_class_idx.push_back(ci);
    }
  }
  return ep;
}

PrototypeBank prototypes_from_embeddings(const std::vector<std::vector<float>>& embeddings,
                                         const std::vector<int>& labels) {
  if (embeddings.empty()) throw EmptyClass("no support embeddings");
  if (embeddings.size() != labels.size())
    throw ShapeMismatch("embedding/label count mismatch");
  const size_t dim = embeddings[0].size();

  std::map<int, std::pair<std::vector<double>, int>> acc;
  for (size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != dim) throw EmbedDimMismatch("ragged support embeddings");
    auto& slot = acc[labels[i]];
    if (slot.first.empty()) slot.first.assign(dim, 0.0);
    for (size_t d = 0; d < dim; ++d) slot.first[d] += embeddings[i][d];
    slot.second += 1;
  }

  PrototypeBank bank;
  bank.embed_dim = static_cast<int>(dim);
  for (auto& [label, slot] : acc) {
    bank.labels.push_back(label);
    for (size_t d = 0; d < dim; ++d)
      bank.vectors.push_back(static_cast<float>(slot.first[d] / slot.second));
  }
  return bank;
}

PrototypeBank compute_prototypes(
    EmbeddingModel<float>& model,
    const std::vector<std::pair<const MfccMatrix*, int>>& support) {
  if (support.empty()) throw EmptyClass("support set is empty");
  std::vector<const MfccMatrix*> batch;
  std::vector<int> labels;
  for (const auto& [m, label] : support) {
    batch.push_back(m);
    labels.push_back(label);
  }
  NoGradGuard guard;
  auto emb = embed_batch(model, batch, false);
  const int dim = emb.dim(1);
  std::vector<std::vector<float>> rows(batch.size(), std::vector<float>(static_cast<size_t>(dim)));
  for (size_t i = 0; i < batch.size(); ++i)
    std::copy(emb.data().begin() + static_cast<long>(i * static_cast<size_t>(dim)),
              emb.data().begin() + static_cast<long>((i + 1) * static_cast<size_t>(dim)),
              rows[i].begin());
  return prototypes_from_embeddings(rows, labels);
}

Classification classify_embedding(const PrototypeBank& bank, const std::vector<float>& embedding,
                                  DistanceKind distance) {
  if (bank.labels.empty()) throw EmptyClass("prototype bank is empty");
  if (static_cast<int>(embedding.size()) != bank.embed_dim)
    throw EmbedDimMismatch("query embedding dim " + std::to_string(embedding.size()) +
                           " vs bank dim " + std::to_string(bank.embed_dim));

  const size_t n = bank.labels.size();
  std::vector<double> logits(n);
  for (size_t c = 0; c < n; ++c) {
    double d2 = 0.0;
    const float* p = bank.prototype(c);
    for (int d = 0; d < bank.embed_dim; ++d) {
      const double diff = static_cast<double>(embedding[static_cast<size_t>(d)]) - p[d];
      d2 += diff * diff;
    }
    logits[c] = distance == DistanceKind::SquaredEuclidean ? -d2 : -std::sqrt(d2);
  }

  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);

  Classification out;
  double best = -1.0;
  for (size_t c = 0; c < n; ++c) {
    const double p = std::exp(logits[c] - mx) / z;
    out.probabilities.emplace_back(bank.labels[c], p);
    if (p > best) {  // strict: ties keep the earliest (smallest) label
      best = p;
      out.label = bank.labels[c];
    }
  }
  return out;
}

Classification classify_query(EmbeddingModel<float>& model, const PrototypeBank& bank,
                              const MfccMatrix& query, DistanceKind distance) {
  if (model.embed_dim() != bank.embed_dim)
    throw EmbedDimMismatch("model dim " + std::to_string(model.embed_dim()) + " vs bank dim " +
                           std::to_string(bank.embed_dim));
  NoGradGuard guard;
  auto emb = embed_batch(model, {&query}, false);
  return classify_embedding(bank, emb.data(), distance);
}

EpisodeLossResult episode_loss_from_embeddings(const Tensor<float>& support_emb,
                                               const std::vector<int>& support_class_idx,
                                               const Tensor<float>& query_emb,
                                               const std::vector<int>& query_class_idx,
                                               int n_way, DistanceKind distance) {
  auto protos = group_mean(support_emb, support_class_idx, n_way);
  auto d2 = pairwise_sqdist(query_emb, protos);
  auto logits = distance == DistanceKind::SquaredEuclidean
                    ? scale(d2, -1.f)
                    : scale(sqrt_floor(d2, 1e-12f), -1.f);
  auto logp = log_softmax(logits, 1);

  EpisodeLossResult result;
  result.loss = nll_loss_sum(logp, query_class_idx);
  result.total = static_cast<int>(query_class_idx.size());
  const int n = n_way;
  for (size_t i = 0; i < query_class_idx.size(); ++i) {
    int arg = 0;
    const float* row = logp.data().data() + i * static_cast<size_t>(n);
    for (int c = 1; c < n; ++c)
      if (row[c] > row[arg]) arg = c;
    if (arg == query_class_idx[i]) ++result.correct;
  }
  return result;
}

EpisodeLossResult episode_loss(EmbeddingModel<float>& model, const FeaturePool& pool,
                               const Episode& episode, DistanceKind distance, bool training) {
  std::vector<const MfccMatrix*> batch;
  batch.reserve(episode.support.size() + episode.query.size());
  for (size_t i : episode.support) batch.push_back(&pool.features(i));
  for (size_t i : episode.query) batch.push_back(&pool.features(i));

  auto emb = embed_batch(model, batch, training);
  const int nk = static_cast<int>(episode.support.size());
  const int nv = static_cast<int>(episode.query.size());
  auto support_emb = slice_rows(emb, 0, nk);
  auto query_emb = slice_rows(emb, nk, nv);
  return episode_loss_from_embeddings(support_emb, episode.support_class_idx, query_emb,
                                      episode.query_class_idx, episode.spec.n_way, distance);
}

LocalStats run_local_training(EmbeddingModel<float>& model, Optimizer<float>& optimizer,
                              const FeaturePool& base_pool, const EpisodeSpec& spec,
                              int episodes, uint64_t seed, DistanceKind distance) {
  LocalStats stats;
  for (int e = 0; e < episodes; ++e) {
    const Episode ep = sample_episode(base_pool, spec, derive_seed(seed, "episode", static_cast<uint64_t>(e)));
    auto result = episode_loss(model, base_pool, ep, distance, true);
    result.loss.backward();
    optimizer.step();

    EpisodeRecord rec;
    rec.index = e;
    rec.loss = static_cast<double>(result.loss.item());
    rec.accuracy = result.accuracy();
    stats.records.push_back(rec);
    stats.mean_loss += rec.loss;
    stats.mean_accuracy += rec.accuracy;
    ++stats.episodes_run;
  }
  if (stats.episodes_run > 0) {
    stats.mean_loss /= stats.episodes_run;
    stats.mean_accuracy /= stats.episodes_run;
  }
  return stats;
}

EvalResult evaluate_novel(EmbeddingModel<float>& model, const FeaturePool& novel_pool,
                          const EpisodeSpec& spec, int n_episodes, uint64_t seed,
                          DistanceKind distance) {
  EvalResult result;
  int correct = 0, total = 0;
  for (int e = 0; e < n_episodes; ++e) {
    const Episode ep =
        sample_episode(novel_pool, spec, derive_seed(seed, "eval_episode", static_cast<uint64_t>(e)));

    std::vector<std::pair<const MfccMatrix*, int>> support;
    for (size_t i = 0; i < ep.support.size(); ++i)
      support.emplace_back(&novel_pool.features(ep.support[i]),
                           novel_pool.label(ep.support[i]));
    const PrototypeBank bank = compute_prototypes(model, support);

    ConfusionMatrix cm(ep.classes);
    for (size_t i = 0; i < ep.query.size(); ++i) {
      const auto pred =
          classify_query(model, bank, novel_pool.features(ep.query[i]), distance);
      const int truth = novel_pool.label(ep.query[i]);
      cm.add(truth, pred.label);
      if (pred.label == truth) ++correct;
      ++total;
    }
    for (const auto& [label, f1] : f1_per_class(cm)) result.per_class_f1[label].push_back(f1);
    ++result.episodes;
  }
  result.mean_accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
  return result;
}

}  // namespace fedshot
