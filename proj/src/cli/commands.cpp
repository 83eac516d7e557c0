#include "fedshot/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

#include "fedshot/fed/wire.hpp"
#include "fedshot/rng.hpp"

namespace fedshot::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << content;
}

std::string prepare_out_dir(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_text((fs::path(cfg.out_dir) / "config.txt").string(), cfg.echo());
  return cfg.out_dir;
}

AudioClip white_noise_clip(size_t n, int rate, uint64_t seed) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(n);
  Rng rng(seed);
  for (auto& s : c.samples) s = static_cast<float>(rng.uniform(-1.0, 1.0));
  return c;
}

// One fixed-format line per training episode; byte-stable across runs.
void append_episode_lines(std::string& out, int round, int client_id,
                          const LocalStats& stats) {
  char buf[128];
  for (const auto& rec : stats.records) {
    std::snprintf(buf, sizeof(buf), "round=%d client=%d episode=%d loss=%.6f acc=%.6f\n",
                  round, client_id, rec.index, rec.loss, rec.accuracy);
    out += buf;
  }
}

void append_eval_lines(std::string& out, const std::string& scope, const EvalResult& eval,
                       const LabelTable& table) {
  char buf[256];
  for (const auto& [label, stat] : eval.f1_summary()) {
    std::snprintf(buf, sizeof(buf), "eval %s label=%s f1_mean=%.6f f1_std=%.6f episodes=%d\n",
                  scope.c_str(), table.name_of(label).c_str(), stat.mean, stat.stddev,
                  stat.count);
    out += buf;
  }
}

json eval_to_json(const EvalResult& eval, const LabelTable& table) {
  json per_label = json::object();
  for (const auto& [label, stat] : eval.f1_summary()) {
    per_label[table.name_of(label)] = {
        {"f1_mean", stat.mean}, {"f1_std", stat.stddev}, {"episodes", stat.count}};
  }
  return {{"per_label", per_label},
          {"mean_accuracy", eval.mean_accuracy},
          {"episodes", eval.episodes}};
}

MetricSummary eval_to_summary(const EvalResult& eval, const LabelTable& table,
                              const ExperimentConfig& cfg, const std::string& fold_id) {
  MetricSummary ms;
  ms.setting = cfg.episode.setting_string();
  ms.fold_id = fold_id;
  for (const auto& [label, stat] : eval.f1_summary())
    ms.per_label.push_back({table.name_of(label), stat});
  return ms;
}

double percentile95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t idx = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData data;

  std::vector<MfccMatrix> features;
  if (cfg.data_source == "synthetic8") {
    auto synth = generate_synthetic(default_synthetic_classes(), cfg.data_per_class,
                                    cfg.data_duration_s, cfg.data_sample_rate,
                                    derive_seed(cfg.seed, "datagen"));
    data.manifest = synth.manifest;
    features.reserve(synth.clips.size());
    for (size_t i = 0; i < synth.clips.size(); ++i) {
      AudioClip clip = synth.clips[i];
      if (cfg.augment_enabled) {
        const auto noise =
            white_noise_clip(clip.samples.size(), clip.sample_rate,
                             derive_seed(cfg.seed, "augment_noise", i));
        Rng ratio_rng(derive_seed(cfg.seed, "augment_ratio", i));
        const float ratio = static_cast<float>(
            ratio_rng.uniform(cfg.augment_ratio_min, cfg.augment_ratio_max));
        clip = mix_noise(clip, noise, ratio, derive_seed(cfg.seed, "augment_mix", i));
      }
      features.push_back(extract_mfcc(clip, cfg.mfcc));
    }
  } else {
    data.manifest = read_manifest(cfg.data_manifest);
    if (data.manifest.entries.empty()) throw DataError("manifest is empty");
    FeatureStore store(cfg.cache_dir, cfg.mfcc);
    features.reserve(data.manifest.entries.size());
    for (const auto& e : data.manifest.entries) features.push_back(store.get(e));
  }

  for (const auto& m : features)
    if (m.frame_count != features[0].frame_count || m.n_coeffs != features[0].n_coeffs)
      throw DataError("all clips must share one feature shape; mixed durations or rates");
  data.in_coeffs = features[0].n_coeffs;
  data.in_frames = features[0].frame_count;

  data.space = make_fold(data.manifest, cfg.novel_pair());
  data.table = LabelTable::from_labels(data.manifest.distinct_labels());
  const auto splits =
      partition_clients(data.manifest, cfg.fed_num_clients, derive_seed(cfg.seed, "partition"),
                        cfg.episode.k_shot + cfg.episode.v_query);

  auto is_novel = [&](const std::string& label) {
    return std::find(data.space.novel_labels.begin(), data.space.novel_labels.end(), label) !=
           data.space.novel_labels.end();
  };
  for (const auto& split : splits) {
    ClientDataset cd;
    cd.client_id = split.client_id;
    for (size_t row : split.entry_indices) {
      const auto& e = data.manifest.entries[row];
      if (is_novel(e.label))
        cd.novel.add(features[row], data.table.id_of(e.label), static_cast<int64_t>(row));
      else
        cd.base.add(features[row], data.table.id_of(e.label), static_cast<int64_t>(row));
    }
    data.clients.push_back(std::move(cd));
  }
  for (size_t row = 0; row < data.manifest.entries.size(); ++row) {
    const auto& e = data.manifest.entries[row];
    if (is_novel(e.label))
      data.pooled_novel.add(features[row], data.table.id_of(e.label),
                            static_cast<int64_t>(row));
  }
  return data;
}

void save_checkpoint(const std::string& path, const ParameterSet& params, uint32_t round) {
  RoundMessage msg;
  msg.kind = MessageKind::Global;
  msg.round = round;
  msg.params = params;
  const auto bytes = serialize_message(msg);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return deserialize_message(bytes).params;
}

int cmd_gen_synthetic(const ExperimentConfig& cfg) {
  cfg.validate();
  prepare_out_dir(cfg);
  auto synth = generate_synthetic(default_synthetic_classes(), cfg.data_per_class,
                                  cfg.data_duration_s, cfg.data_sample_rate,
                                  derive_seed(cfg.seed, "datagen"));
  const std::string dir = (fs::path(cfg.out_dir) / "dataset").string();
  auto manifest = write_synthetic_dataset(dir, synth);
  std::cout << "wrote " << manifest.entries.size() << " clips and " << dir
            << "/manifest.tsv\n";
  return 0;
}

int cmd_extract(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.data_manifest.empty())
    throw ConfigError("extract needs data.manifest (run gen-synthetic first for a preset)");
  prepare_out_dir(cfg);
  const auto manifest = read_manifest(cfg.data_manifest);
  const std::string cache =
      cfg.cache_dir.empty() ? (fs::path(cfg.out_dir) / "cache").string() : cfg.cache_dir;
  FeatureStore store(cache, cfg.mfcc);
  int failures = 0;
  for (const auto& e : manifest.entries) {
    try {
      store.get(e);
    } catch (const Error& err) {
      ++failures;
      std::cerr << "extract failed for " << e.path << ": " << err.what() << "\n";
    }
  }
  std::cout << "clips=" << manifest.entries.size() << " extracted=" << store.misses()
            << " cached=" << store.hits() << " failed=" << failures << "\n";
  return failures == 0 ? 0 : 2;
}

namespace {

struct EvalOutputs {
  std::string metrics_lines;
  json summary_clients = json::array();
  json summary_pooled;
  std::string table_text;
};

EvalOutputs run_evaluations(const ExperimentConfig& cfg, const PreparedData& data,
                            EmbeddingModel<float>& model, const std::vector<int>& client_ids) {
  EvalOutputs out;
  for (int u : client_ids) {
    auto eval = evaluate_novel(model, data.clients[static_cast<size_t>(u)].novel, cfg.episode,
                               cfg.eval_episodes, eval_seed(cfg.seed, u), cfg.distance_kind());
    append_eval_lines(out.metrics_lines, "client=" + std::to_string(u), eval, data.table);
    json j = eval_to_json(eval, data.table);
    j["client"] = u;
    out.summary_clients.push_back(std::move(j));
  }
  auto pooled = evaluate_novel(model, data.pooled_novel, cfg.episode, cfg.eval_episodes,
                               derive_seed(cfg.seed, "evaluation_pooled"), cfg.distance_kind());
  append_eval_lines(out.metrics_lines, "pooled", pooled, data.table);
  out.summary_pooled = eval_to_json(pooled, data.table);

  const auto pair = cfg.novel_pair();
  out.table_text =
      render_table(eval_to_summary(pooled, data.table, cfg, pair.first + " / " + pair.second));
  return out;
}

json base_summary(const ExperimentConfig& cfg, const PreparedData& data,
                  const std::string& mode) {
  return {{"mode", mode},
          {"setting", cfg.episode.setting_string()},
          {"fold", {{"novel", data.space.novel_labels}, {"base", data.space.base_labels}}},
          {"clients", cfg.fed_num_clients},
          {"rounds", cfg.fed_rounds},
          {"episodes_per_round", cfg.fed_episodes_per_round},
          {"seed", cfg.seed}};
}

}  // namespace

int cmd_train_local(const ExperimentConfig& cfg) {
  cfg.validate();
  prepare_out_dir(cfg);
  auto data = prepare_data(cfg);
  const auto fc = cfg.federation(data.in_coeffs, data.in_frames);

  EmbeddingModel<float> model(fc.model, client_init_seed(cfg.seed));
  Optimizer<float> optimizer(fc.optimizer, model.trainable_params(), fc.lr);
  const auto& pool = data.clients[static_cast<size_t>(cfg.local_client)].base;

  std::string metrics;
  double last_loss = 0, last_acc = 0;
  for (int round = 1; round <= cfg.fed_rounds; ++round) {
    auto stats =
        run_local_training(model, optimizer, pool, cfg.episode, cfg.fed_episodes_per_round,
                           client_episode_seed(cfg.seed, cfg.local_client, round),
                           cfg.distance_kind());
    append_episode_lines(metrics, round, cfg.local_client, stats);
    last_loss = stats.mean_loss;
    last_acc = stats.mean_accuracy;
  }

  auto evals = run_evaluations(cfg, data, model, {cfg.local_client});
  metrics += evals.metrics_lines;
  write_text((fs::path(cfg.out_dir) / "metrics.txt").string(), metrics);

  json summary = base_summary(cfg, data, "local");
  summary["local_client"] = cfg.local_client;
  summary["train"] = {{"last_round_mean_loss", last_loss}, {"last_round_mean_acc", last_acc}};
  summary["eval"] = {{"clients", evals.summary_clients}, {"pooled", evals.summary_pooled}};
  write_text((fs::path(cfg.out_dir) / "summary.json").string(), summary.dump(2) + "\n");

  save_checkpoint((fs::path(cfg.out_dir) / "model.ckpt").string(), model.parameter_set(),
                  static_cast<uint32_t>(cfg.fed_rounds));
  std::cout << evals.table_text;
  return 0;
}

int cmd_train_fed(const ExperimentConfig& cfg) {
  cfg.validate();
  prepare_out_dir(cfg);
  auto data = prepare_data(cfg);
  const auto fc = cfg.federation(data.in_coeffs, data.in_frames);

  std::vector<const FeaturePool*> pools;
  for (const auto& c : data.clients) pools.push_back(&c.base);
  auto result = run_federation(fc, pools);

  std::string metrics;
  for (int r = 0; r < cfg.fed_rounds; ++r)
    for (int u = 0; u < cfg.fed_num_clients; ++u)
      append_episode_lines(metrics, r + 1, u,
                           result.round_client_stats[static_cast<size_t>(r)][static_cast<size_t>(u)]);

  EmbeddingModel<float> model(fc.model, client_init_seed(cfg.seed));
  model.load_parameter_set(result.global);
  std::vector<int> ids;
  for (int u = 0; u < cfg.fed_num_clients; ++u) ids.push_back(u);
  auto evals = run_evaluations(cfg, data, model, ids);
  metrics += evals.metrics_lines;
  write_text((fs::path(cfg.out_dir) / "metrics.txt").string(), metrics);

  std::string timing;
  std::vector<double> agg_ms, upd_ms;
  char buf[160];
  for (const auto& rep : result.reports) {
    std::snprintf(buf, sizeof(buf), "round=%d beta=%u aggregate_ms=%.3f update_ms=%.3f\n",
                  rep.round, rep.total_beta, rep.aggregate_ms, rep.update_ms);
    timing += buf;
    agg_ms.push_back(rep.aggregate_ms);
    upd_ms.push_back(rep.update_ms);
  }
  std::snprintf(buf, sizeof(buf),
                "Average weights mean_ms=%.3f p95_ms=%.3f\nUpdate weights mean_ms=%.3f "
                "p95_ms=%.3f\n",
                summarize(agg_ms).mean, percentile95(agg_ms), summarize(upd_ms).mean,
                percentile95(upd_ms));
  timing += buf;
  write_text((fs::path(cfg.out_dir) / "timing.txt").string(), timing);

  json summary = base_summary(cfg, data, "federated");
  const auto& last = result.round_client_stats.back();
  double loss = 0, acc = 0;
  for (const auto& s : last) {
    loss += s.mean_loss;
    acc += s.mean_accuracy;
  }
  summary["train"] = {{"last_round_mean_loss", loss / last.size()},
                      {"last_round_mean_acc", acc / last.size()}};
  summary["timing"] = {{"aggregate_mean_ms", summarize(agg_ms).mean},
                       {"update_mean_ms", summarize(upd_ms).mean}};
  summary["eval"] = {{"clients", evals.summary_clients}, {"pooled", evals.summary_pooled}};
  write_text((fs::path(cfg.out_dir) / "summary.json").string(), summary.dump(2) + "\n");

  save_checkpoint((fs::path(cfg.out_dir) / "global.ckpt").string(), result.global,
                  static_cast<uint32_t>(cfg.fed_rounds));
  std::cout << evals.table_text;
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  cfg.validate();
  prepare_out_dir(cfg);
  auto data = prepare_data(cfg);
  const auto fc = cfg.federation(data.in_coeffs, data.in_frames);

  EmbeddingModel<float> model(fc.model, client_init_seed(cfg.seed));
  model.load_parameter_set(load_checkpoint(checkpoint_path));

  std::vector<int> ids;
  for (int u = 0; u < cfg.fed_num_clients; ++u) ids.push_back(u);
  auto evals = run_evaluations(cfg, data, model, ids);
  write_text((fs::path(cfg.out_dir) / "metrics.txt").string(), evals.metrics_lines);

  json summary = base_summary(cfg, data, "eval");
  summary["checkpoint"] = checkpoint_path;
  summary["eval"] = {{"clients", evals.summary_clients}, {"pooled", evals.summary_pooled}};
  write_text((fs::path(cfg.out_dir) / "summary.json").string(), summary.dump(2) + "\n");
  std::cout << evals.table_text;
  return 0;
}

int cmd_bench(const ExperimentConfig& cfg) {
  cfg.validate();
  prepare_out_dir(cfg);
  const int bench_rounds = 30;
  const int U = cfg.fed_num_clients;

  const int frames = expected_frame_count(
      static_cast<int64_t>(cfg.data_duration_s * cfg.data_sample_rate),
      cfg.mfcc.win_samples(cfg.data_sample_rate), cfg.mfcc.hop_samples(cfg.data_sample_rate));
  auto fc = cfg.federation(cfg.mfcc.n_mfcc, std::max(frames, 1));
  EmbeddingModel<float> model(fc.model, client_init_seed(cfg.seed));

  struct Target {
    std::string name;
    ParameterSet params;
  };
  std::vector<Target> targets;
  targets.push_back({"empty", ParameterSet{}});
  targets.push_back({"model(" + std::to_string(model.parameter_set().total_elements()) + ")",
                     model.parameter_set()});
  Rng rng(derive_seed(cfg.seed, "bench"));
  for (int64_t n : {int64_t{10000}, int64_t{100000}, int64_t{1000000}}) {
    ParameterSet ps;
    ParamEntry e;
    e.name = "block";
    e.shape = {static_cast<int>(n)};
    e.values.resize(static_cast<size_t>(n));
    for (auto& v : e.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    ps.entries.push_back(std::move(e));
    targets.push_back({"synthetic(" + std::to_string(n) + ")", std::move(ps)});
  }

  std::string report;
  char buf[256];
  std::vector<double> scaling_means;
  for (const auto& target : targets) {
    std::vector<Upload> uploads;
    for (int u = 0; u < U; ++u) uploads.push_back({u, 1, target.params});
    std::vector<double> agg_ms, upd_ms;
    for (int r = 0; r < bench_rounds; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      ParameterSet global;
      if (!target.params.entries.empty()) global = aggregate(uploads);
      const auto t1 = std::chrono::steady_clock::now();
      RoundMessage msg;
      msg.kind = MessageKind::Global;
      msg.params = std::move(global);
      const auto bytes = serialize_message(msg);
      for (int u = 0; u < U; ++u) {
        auto received = deserialize_message(bytes);
        (void)received;
      }
      const auto t2 = std::chrono::steady_clock::now();
      agg_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      upd_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
    }
    std::snprintf(buf, sizeof(buf),
                  "target=%s clients=%d rounds=%d\n"
                  "  Average weights mean_ms=%.4f p95_ms=%.4f\n"
                  "  Update weights mean_ms=%.4f p95_ms=%.4f\n",
                  target.name.c_str(), U, bench_rounds, summarize(agg_ms).mean,
                  percentile95(agg_ms), summarize(upd_ms).mean, percentile95(upd_ms));
    report += buf;
    if (target.name.rfind("synthetic", 0) == 0) scaling_means.push_back(summarize(agg_ms).mean);
  }
  const bool monotone = scaling_means.size() == 3 && scaling_means[0] <= scaling_means[1] &&
                        scaling_means[1] <= scaling_means[2];
  report += std::string("aggregate scaling monotone across 1e4/1e5/1e6: ") +
            (monotone ? "yes" : "no") + "\n";

  write_text((fs::path(cfg.out_dir) / "timing.txt").string(), report);
  std::cout << report;
  return 0;
}

}  // namespace fedshot::cli
