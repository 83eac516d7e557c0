#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedshot/cli/commands.hpp"

using namespace fedshot;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FEDSHOT_CLI_PATH) + " " + args + " >" + log.string() +
                          " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const char* kTinyTrain =
    " --set data.per_class=8 --set data.duration_s=0.5 --set fed.num_clients=1"
    " --set fed.rounds=1 --set fed.episodes_per_round=3 --set eval.episodes=5"
    " --set model.embed_dim=16 --set model.base_channels=4";

}  // namespace

TEST_CASE("config rejects unknown keys and bad values") {
  ExperimentConfig cfg;
  CHECK_THROWS_AS(cfg.set("no.such.key", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("fed.rounds", "many"), ConfigError);
  CHECK_THROWS_AS(cfg.set("model.attention", "maybe"), ConfigError);

  cfg.set("model.arch", "transformer");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.set("model.arch", "proto_conv_small");
  cfg.set("fed.transport", "pigeon");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.set("fed.transport", "socket");
  cfg.validate();

  ExperimentConfig bad;
  bad.set("episode.n_way", "1");
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config echo parses back to an identical echo") {
  ExperimentConfig cfg;
  cfg.set("seed", "777");
  cfg.set("fed.num_clients", "3");
  cfg.set("fold.novel", "Barking cough|Night wet cough");
  cfg.set("mfcc.n_mfcc", "20");
  cfg.set("mfcc.n_mels", "24");
  const std::string echoed = cfg.echo();

  TempDir dir("fedshot_cli_echo");
  const auto path = dir.path / "cfg.txt";
  std::ofstream(path) << echoed;
  auto back = ExperimentConfig::from_file(path.string());
  CHECK(back.echo() == echoed);
  CHECK(back.seed == 777);
  CHECK(back.novel_pair().first == "Barking cough");
}

TEST_CASE("checkpoints round trip through the wire format") {
  TempDir dir("fedshot_cli_ckpt");
  ParameterSet ps;
  ps.entries.push_back({"a.w", {2, 3}, {1, 2, 3, 4, 5, 6}});
  ps.entries.push_back({"a.b", {3}, {-1, 0, 1}});
  const auto path = (dir.path / "m.ckpt").string();
  cli::save_checkpoint(path, ps, 7);
  auto back = cli::load_checkpoint(path);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].name == "a.w");
  CHECK(back.entries[0].values == ps.entries[0].values);
  CHECK(back.entries[1].values == ps.entries[1].values);
}

TEST_CASE("gen-synthetic then extract, and extraction is idempotent") {
  TempDir dir("fedshot_cli_gen");
  const auto log = dir.path / "log.txt";
  int rc = run_cli("gen-synthetic --out " + (dir.path / "gen").string() +
                       " --set data.per_class=4 --set data.duration_s=0.5",
                   log);
  CHECK(rc == 0);
  const auto manifest = dir.path / "gen" / "dataset" / "manifest.tsv";
  REQUIRE(fs::exists(manifest));
  CHECK(read_manifest(manifest.string()).entries.size() == 32);

  const std::string extract_args = "extract --out " + (dir.path / "ex").string() +
                                   " --set data.source=manifest --set data.manifest=" +
                                   manifest.string() + " --set data.duration_s=0.5";
  rc = run_cli(extract_args, log);
  CHECK(rc == 0);
  CHECK(slurp(log).find("extracted=32") != std::string::npos);

  rc = run_cli(extract_args, log);  // warm cache: no extraction work
  CHECK(rc == 0);
  CHECK(slurp(log).find("extracted=0") != std::string::npos);
  CHECK(slurp(log).find("cached=32") != std::string::npos);
}

TEST_CASE("the full 480-clip preset extracts inside the soft budget") {
  TempDir dir("fedshot_cli_full_extract");
  const auto log = dir.path / "log.txt";
  REQUIRE(run_cli("gen-synthetic --out " + (dir.path / "gen").string(), log) == 0);
  const auto manifest = dir.path / "gen" / "dataset" / "manifest.tsv";
  REQUIRE(read_manifest(manifest.string()).entries.size() == 480);

  const auto t0 = std::chrono::steady_clock::now();
  const int rc = run_cli("extract --out " + (dir.path / "ex").string() +
                             " --set data.source=manifest --set data.manifest=" +
                             manifest.string(),
                         log);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(rc == 0);
  CHECK(slurp(log).find("extracted=480") != std::string::npos);
  CHECK(secs < 60.0);
}

TEST_CASE("extract without a manifest is a usage error, missing file a data error") {
  TempDir dir("fedshot_cli_exterr");
  const auto log = dir.path / "log.txt";
  CHECK(run_cli("extract --out " + (dir.path / "a").string(), log) == 1);
  CHECK(run_cli("extract --out " + (dir.path / "b").string() +
                    " --set data.source=manifest --set data.manifest=/nonexistent.tsv",
                log) == 2);
}

TEST_CASE("unknown flags and missing subcommands are usage errors") {
  TempDir dir("fedshot_cli_usage");
  const auto log = dir.path / "log.txt";
  CHECK(run_cli("--bogus", log) == 1);
  CHECK(run_cli("train-local --set nonsense=1 --out " + (dir.path / "x").string(), log) == 1);
  CHECK(run_cli("--help", log) == 0);
}

TEST_CASE("train-local writes the full output layout") {
  TempDir dir("fedshot_cli_local");
  const auto out = dir.path / "run";
  const auto log = dir.path / "log.txt";
  const int rc = run_cli("train-local --out " + out.string() + kTinyTrain, log);
  CHECK(rc == 0);
  CHECK(fs::exists(out / "config.txt"));
  CHECK(fs::exists(out / "metrics.txt"));
  CHECK(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "model.ckpt"));

  const std::string metrics = slurp(out / "metrics.txt");
  CHECK(metrics.find("round=1 client=0 episode=0") != std::string::npos);
  CHECK(metrics.find("eval pooled label=") != std::string::npos);
}

TEST_CASE("the echoed config replays to identical metrics") {
  TempDir dir("fedshot_cli_replay");
  const auto out1 = dir.path / "a";
  const auto out2 = dir.path / "b";
  const auto log = dir.path / "log.txt";
  REQUIRE(run_cli("train-local --out " + out1.string() + kTinyTrain, log) == 0);
  // re-run from the echo, only redirecting the output directory
  REQUIRE(run_cli("train-local --config " + (out1 / "config.txt").string() + " --out " +
                      out2.string(),
                  log) == 0);
  CHECK(slurp(out1 / "metrics.txt") == slurp(out2 / "metrics.txt"));
  CHECK(slurp(out1 / "model.ckpt") == slurp(out2 / "model.ckpt"));
}

TEST_CASE("eval reloads a checkpoint and reports the same pooled numbers") {
  TempDir dir("fedshot_cli_eval");
  const auto out = dir.path / "run";
  const auto log = dir.path / "log.txt";
  REQUIRE(run_cli("train-local --out " + out.string() + kTinyTrain, log) == 0);
  const auto evald = dir.path / "evald";
  const int rc = run_cli("eval --checkpoint " + (out / "model.ckpt").string() + " --out " +
                             evald.string() + kTinyTrain,
                         log);
  CHECK(rc == 0);
  const std::string a = slurp(out / "metrics.txt");
  const std::string b = slurp(evald / "metrics.txt");
  const auto pooled_tail = a.substr(a.find("eval pooled"));
  CHECK(b.find(pooled_tail) != std::string::npos);
}

TEST_CASE("bench reports both table rows and linear-ish scaling") {
  TempDir dir("fedshot_cli_bench");
  const auto out = dir.path / "bench";
  const auto log = dir.path / "log.txt";
  const int rc = run_cli("bench --out " + out.string() +
                             " --set fed.num_clients=2 --set model.base_channels=4",
                         log);
  CHECK(rc == 0);
  const std::string report = slurp(out / "timing.txt");
  CHECK(report.find("Average weights") != std::string::npos);
  CHECK(report.find("Update weights") != std::string::npos);
  CHECK(report.find("target=empty") != std::string::npos);
  CHECK(report.find("monotone across 1e4/1e5/1e6: yes") != std::string::npos);
}
