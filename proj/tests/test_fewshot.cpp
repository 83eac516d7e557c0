#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "fedshot/fewshot/engine.hpp"
#include "fedshot/rng.hpp"
#include "support/fake_features.hpp"

using namespace fedshot;
namespace ft = fedshot::testing;

namespace {

ModelConfig tiny_model_config(int embed_dim = 8) {
  ModelConfig cfg;
  cfg.embed_dim = embed_dim;
  cfg.base_channels = 4;
  cfg.in_coeffs = 8;
  cfg.in_frames = 6;
  return cfg;
}

void zero_all_params(EmbeddingModel<float>& model) {
  model.visit_params([](const std::string&, Tensor<float>& t, bool) {
    std::fill(t.raw_data().begin(), t.raw_data().end(), 0.f);
  });
}

}  // namespace

TEST_CASE("forced partition uses every sample exactly once") {
  EpisodeSpec spec{3, 2, 2};
  auto pool = ft::fake_pool({0, 1, 2}, 4, 1);
  auto ep = sample_episode(pool, spec, 7);
  CHECK(ep.support.size() == 6);
  CHECK(ep.query.size() == 6);
  std::set<size_t> seen(ep.support.begin(), ep.support.end());
  seen.insert(ep.query.begin(), ep.query.end());
  CHECK(seen.size() == pool.size());
}

TEST_CASE("2-way 2-shot with 3 queries gives |S|=4, |Q|=6") {
  EpisodeSpec spec{2, 2, 3};
  auto pool = ft::fake_pool({0, 1, 2, 3}, 10, 2);
  auto ep = sample_episode(pool, spec, 1);
  CHECK(ep.support.size() == 4);
  CHECK(ep.query.size() == 6);
}

TEST_CASE("class choice is uniform across seeds") {
  EpisodeSpec spec{2, 1, 1};
  auto pool = ft::fake_pool({0, 1, 2, 3, 4, 5}, 3, 3);
  std::map<int, int> hits;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    auto ep = sample_episode(pool, spec, static_cast<uint64_t>(s));
    for (int c : ep.classes) ++hits[c];
  }
  for (const auto& [cls, n] : hits)
    CHECK(std::abs(static_cast<double>(n) / draws - 1.0 / 3.0) <= 0.02);
}

TEST_CASE("sampling errors") {
  EpisodeSpec spec{4, 2, 2};
  auto small = ft::fake_pool({0, 1, 2}, 8, 4);
  CHECK_THROWS_AS(sample_episode(small, spec, 1), InsufficientClasses);

  auto thin = ft::fake_pool({0, 1, 2, 3}, 3, 5);  // needs K+V=4 per class
  CHECK_THROWS_AS(sample_episode(thin, EpisodeSpec{2, 2, 2}, 1), InsufficientSamplesPerClass);
  try {
    sample_episode(thin, EpisodeSpec{2, 2, 2}, 1);
  } catch (const InsufficientSamplesPerClass& e) {
    CHECK(std::string(e.what()).find("class 0") != std::string::npos);
  }

  CHECK_THROWS_AS(sample_episode(small, EpisodeSpec{1, 1, 1}, 1), ConfigError);
}

TEST_CASE("support and query never share a sample across 1000 seeds") {
  EpisodeSpec spec{2, 2, 3};
  auto pool = ft::fake_pool({0, 1, 2, 3, 4}, 8, 6);
  for (int s = 0; s < 1000; ++s) {
    auto ep = sample_episode(pool, spec, static_cast<uint64_t>(s));
    std::set<int64_t> support_ids;
    for (size_t i : ep.support) support_ids.insert(pool.sample_id(i));
    for (size_t i : ep.query) CHECK(support_ids.count(pool.sample_id(i)) == 0);
  }
}

TEST_CASE("episode sampling replays exactly from a seed") {
  EpisodeSpec spec{3, 2, 2};
  auto pool = ft::fake_pool({0, 1, 2, 3, 4}, 6, 7);
  auto a = sample_episode(pool, spec, 123);
  auto b = sample_episode(pool, spec, 123);
  CHECK(a.classes == b.classes);
  CHECK(a.support == b.support);
  CHECK(a.query == b.query);
}

TEST_CASE("prototype of two unit embeddings is their midpoint") {
  auto bank = prototypes_from_embeddings({{1.f, 0.f}, {0.f, 1.f}}, {5, 5});
  REQUIRE(bank.labels == std::vector<int>{5});
  CHECK(bank.vectors[0] == doctest::Approx(0.5f));
  CHECK(bank.vectors[1] == doctest::Approx(0.5f));
}

TEST_CASE("one-shot prototypes equal the support embedding") {
  EmbeddingModel<float> model(tiny_model_config(), 11);
  Rng rng(1);
  auto a = ft::fake_feature(rng, 0);
  auto b = ft::fake_feature(rng, 1);
  auto bank = compute_prototypes(model, {{&a, 0}, {&b, 1}});

  NoGradGuard guard;
  auto ea = embed_batch(model, {&a}, false);
  for (int d = 0; d < bank.embed_dim; ++d)
    CHECK(bank.prototype(0)[d] == ea.data()[static_cast<size_t>(d)]);

  // identical support members collapse to the same embedding
  auto bank2 = compute_prototypes(model, {{&a, 0}, {&a, 0}});
  for (int d = 0; d < bank2.embed_dim; ++d)
    CHECK(bank2.prototype(0)[d] == doctest::Approx(ea.data()[static_cast<size_t>(d)]));

  CHECK_THROWS_AS(compute_prototypes(model, {}), EmptyClass);
}

TEST_CASE("classification probabilities follow the distance softmax") {
  PrototypeBank bank;
  bank.embed_dim = 1;
  bank.labels = {0, 1};
  bank.vectors = {0.f, 1.f + static_cast<float>(std::sqrt(2.0))};
  // query at 1: d2 to A = 1, d2 to B = 2
  auto c = classify_embedding(bank, {1.f}, DistanceKind::SquaredEuclidean);
  CHECK(c.label == 0);
  CHECK(c.probabilities[0].second == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-5));
  CHECK(c.probabilities[0].second + c.probabilities[1].second == doctest::Approx(1.0));
}

TEST_CASE("query on a prototype wins, equidistant queries tie to the smallest label") {
  PrototypeBank bank;
  bank.embed_dim = 2;
  bank.labels = {3, 9};
  bank.vectors = {1.f, 0.f, -1.f, 0.f};
  auto on_a = classify_embedding(bank, {1.f, 0.f}, DistanceKind::SquaredEuclidean);
  CHECK(on_a.label == 3);
  CHECK(on_a.probabilities[0].second > 0.5);

  auto mid = classify_embedding(bank, {0.f, 0.7f}, DistanceKind::SquaredEuclidean);
  CHECK(mid.label == 3);  // tie -> ascending label order
  CHECK(mid.probabilities[0].second == doctest::Approx(0.5));
  CHECK(mid.probabilities[1].second == doctest::Approx(0.5));

  CHECK_THROWS_AS(classify_embedding(bank, {0.f, 0.f, 0.f}, DistanceKind::SquaredEuclidean),
                  EmbedDimMismatch);
}

TEST_CASE("argmax label is invariant to the distance flavor and to translation") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    PrototypeBank bank;
    bank.embed_dim = 3;
    const int n = 2 + static_cast<int>(rng.uniform_int(3));
    for (int c = 0; c < n; ++c) {
      bank.labels.push_back(c);
      for (int d = 0; d < 3; ++d)
        bank.vectors.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
    }
    std::vector<float> q = {static_cast<float>(rng.uniform(-1.0, 1.0)),
                            static_cast<float>(rng.uniform(-1.0, 1.0)),
                            static_cast<float>(rng.uniform(-1.0, 1.0))};
    auto sq = classify_embedding(bank, q, DistanceKind::SquaredEuclidean);
    auto eu = classify_embedding(bank, q, DistanceKind::Euclidean);
    CHECK(sq.label == eu.label);

    // translate everything by a constant vector
    PrototypeBank shifted = bank;
    const float c0 = 2.5f, c1 = -1.25f, c2 = 0.75f;
    for (size_t i = 0; i < shifted.vectors.size(); i += 3) {
      shifted.vectors[i] += c0;
      shifted.vectors[i + 1] += c1;
      shifted.vectors[i + 2] += c2;
    }
    auto sh = classify_embedding(shifted, {q[0] + c0, q[1] + c1, q[2] + c2},
                                 DistanceKind::SquaredEuclidean);
    CHECK(sh.label == sq.label);
    for (size_t i = 0; i < sh.probabilities.size(); ++i)
      CHECK(sh.probabilities[i].second ==
            doctest::Approx(sq.probabilities[i].second).epsilon(1e-4));
  }
}

TEST_CASE("constant model gives the uniform loss |Q| ln N") {
  EmbeddingModel<float> model(tiny_model_config(), 21);
  zero_all_params(model);
  EpisodeSpec spec{2, 2, 5};
  auto pool = ft::fake_pool({0, 1, 2}, 8, 9);
  auto ep = sample_episode(pool, spec, 3);
  auto result = episode_loss(model, pool, ep, DistanceKind::SquaredEuclidean, true);
  CHECK(result.loss.item() ==
        doctest::Approx(10.0 * std::log(2.0)).epsilon(1e-5));
}

TEST_CASE("episode loss is non-negative and consistent with probabilities") {
  EmbeddingModel<float> model(tiny_model_config(), 22);
  EpisodeSpec spec{3, 2, 3};
  auto pool = ft::fake_pool({0, 1, 2, 3}, 8, 10);
  auto ep = sample_episode(pool, spec, 5);

  auto result = episode_loss(model, pool, ep, DistanceKind::SquaredEuclidean, false);
  CHECK(result.loss.item() >= 0.f);

  // product of true-label probabilities from the classification path
  std::vector<std::pair<const MfccMatrix*, int>> support;
  for (size_t i : ep.support) support.emplace_back(&pool.features(i), pool.label(i));
  auto bank = compute_prototypes(model, support);
  double log_prod = 0.0;
  for (size_t i : ep.query) {
    auto c = classify_query(model, bank, pool.features(i), DistanceKind::SquaredEuclidean);
    for (const auto& [label, p] : c.probabilities)
      if (label == pool.label(i)) log_prod += std::log(p);
  }
  CHECK(std::exp(-static_cast<double>(result.loss.item())) ==
        doctest::Approx(std::exp(log_prod)).epsilon(1e-4));
}

TEST_CASE("well-separated embedding clusters give near-zero loss") {
  // plug-in check on fixed embeddings, far-apart class centers
  const int n = 3, k = 2, v = 4, dim = 4;
  std::vector<float> semb, qemb;
  std::vector<int> sidx, qidx;
  for (int c = 0; c < n; ++c) {
    for (int i = 0; i < k; ++i) {
      for (int d = 0; d < dim; ++d) semb.push_back(d == c ? 10.f : 0.f);
      sidx.push_back(c);
    }
    for (int i = 0; i < v; ++i) {
      for (int d = 0; d < dim; ++d) qemb.push_back((d == c ? 10.f : 0.f) + 0.01f * i);
      qidx.push_back(c);
    }
  }
  auto s = Tensor<float>::from_vector({n * k, dim}, semb);
  auto q = Tensor<float>::from_vector({n * v, dim}, qemb);
  auto result = episode_loss_from_embeddings(s, sidx, q, qidx, n, DistanceKind::SquaredEuclidean);
  CHECK(result.loss.item() <= 0.01f * n * v);
  CHECK(result.correct == n * v);
}

TEST_CASE("zero training episodes change nothing") {
  EmbeddingModel<float> model(tiny_model_config(), 30);
  auto before = model.parameter_set();
  Optimizer<float> opt(OptimizerKind::Adam, model.trainable_params(), 1e-3f);
  auto pool = ft::fake_pool({0, 1, 2}, 8, 11);
  auto stats = run_local_training(model, opt, pool, EpisodeSpec{2, 2, 2}, 0, 99,
                                  DistanceKind::SquaredEuclidean);
  CHECK(stats.episodes_run == 0);
  auto after = model.parameter_set();
  for (size_t i = 0; i < before.entries.size(); ++i)
    CHECK(before.entries[i].values == after.entries[i].values);
}

TEST_CASE("local training is bit-deterministic given seeds") {
  auto run = [] {
    EmbeddingModel<float> model(tiny_model_config(), 31);
    Optimizer<float> opt(OptimizerKind::Adam, model.trainable_params(), 1e-3f);
    auto pool = ft::fake_pool({0, 1, 2, 3}, 8, 12);
    run_local_training(model, opt, pool, EpisodeSpec{2, 2, 3}, 10, 77,
                       DistanceKind::SquaredEuclidean);
    return model.parameter_set();
  };
  auto a = run();
  auto b = run();
  for (size_t i = 0; i < a.entries.size(); ++i)
    CHECK(a.entries[i].values == b.entries[i].values);
}

TEST_CASE("training on separable features reaches high episode accuracy") {
  EmbeddingModel<float> model(tiny_model_config(), 32);
  Optimizer<float> opt(OptimizerKind::Adam, model.trainable_params(), 1e-3f);
  auto base = ft::fake_pool({0, 1, 2, 3}, 12, 13);
  auto stats = run_local_training(model, opt, base, EpisodeSpec{2, 2, 5}, 120, 55,
                                  DistanceKind::SquaredEuclidean);
  double tail = 0.0;
  for (size_t i = stats.records.size() - 20; i < stats.records.size(); ++i)
    tail += stats.records[i].accuracy;
  CHECK(tail / 20.0 >= 0.95);
}

TEST_CASE("a perfect classifier reports F1 of exactly one with zero spread") {
  EmbeddingModel<float> model(tiny_model_config(), 34);
  Optimizer<float> opt(OptimizerKind::Adam, model.trainable_params(), 1e-3f);
  auto train_pool = ft::fake_pool({4, 5}, 16, 16, 6, 8, 0.02);
  run_local_training(model, opt, train_pool, EpisodeSpec{2, 2, 5}, 150, 57,
                     DistanceKind::SquaredEuclidean);

  // held-out draws of the same two classes: the classifier is effectively perfect
  auto held_out = ft::fake_pool({4, 5}, 12, 900, 6, 8, 0.02);
  auto eval = evaluate_novel(model, held_out, EpisodeSpec{2, 2, 5}, 30, 66,
                             DistanceKind::SquaredEuclidean);
  REQUIRE(eval.mean_accuracy == 1.0);
  auto summary = eval.f1_summary();
  CHECK(summary[4].mean == 1.0);
  CHECK(summary[4].stddev == 0.0);
  CHECK(summary[5].mean == 1.0);
  CHECK(summary[5].stddev == 0.0);
}

TEST_CASE("degenerate constant model always answers the smallest label") {
  EmbeddingModel<float> model(tiny_model_config(), 33);
  zero_all_params(model);
  auto novel = ft::fake_pool({2, 7}, 10, 15);
  auto eval = evaluate_novel(model, novel, EpisodeSpec{2, 2, 4}, 25, 5,
                             DistanceKind::SquaredEuclidean);
  auto summary = eval.f1_summary();
  // always predicting one class of two: F1 = 2/3 for it, 0 for the other
  CHECK(summary[2].mean == doctest::Approx(2.0 / 3.0));
  CHECK(summary[2].stddev == doctest::Approx(0.0));
  CHECK(summary[7].mean == doctest::Approx(0.0));
  CHECK(summary[7].stddev == doctest::Approx(0.0));
}
