#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fedshot/fed/transport.hpp"
#include "fedshot/fewshot/engine.hpp"

namespace fedshot {

enum class TransportKind { InProcess, Socket };

struct FederationConfig {
  int num_clients = 5;
  int rounds = 40;
  int episodes_per_round = 25;
  EpisodeSpec episode;
  float lr = 1e-3f;
  OptimizerKind optimizer = OptimizerKind::Adam;
  DistanceKind distance = DistanceKind::SquaredEuclidean;
  uint64_t seed = 42;
  TransportKind transport = TransportKind::InProcess;
  std::string socket_addr = "127.0.0.1:0";
  int timeout_ms = 300000;
  ModelConfig model;
};

struct Upload {
  int client_id = 0;
  uint32_t beta = 0;  // few-shot tasks run this round
  ParameterSet params;
};

// beta-weighted mean, summed in ascending client-id order; accumulation in
// f64 keeps the result inside the componentwise convex hull exactly.
ParameterSet aggregate(std::vector<Upload> uploads);

struct RoundReport {
  int round = 0;
  uint32_t total_beta = 0;
  double aggregate_ms = 0.0;
  double update_ms = 0.0;  // broadcast through the last ACK
};

// Seed derivations shared by the federated and local training paths, so a
// single-client federation replays a plain local run bit for bit.
uint64_t client_init_seed(uint64_t run_seed);
uint64_t client_episode_seed(uint64_t run_seed, int client_id, int round);
uint64_t eval_seed(uint64_t run_seed, int client_id);

// Synchronous server over pre-identified channels (one per client, indexed by
// client id, HELLO already consumed).
class FederationServer {
 public:
  FederationServer(std::vector<std::unique_ptr<MessageChannel>> channels,
                   ParameterSet initial_global, int timeout_ms);

  // GLOBAL(round 0) broadcast plus ACK barrier.
  void sync_initial();

  // Steps 2..4 of a communication round; step 1 runs inside the clients.
  RoundReport run_round(int round);

  const ParameterSet& global() const { return global_; }

 private:
  RoundMessage receive_from(int client_id, MessageKind expected, int round);

  std::vector<std::unique_ptr<MessageChannel>> channels_;
  ParameterSet global_;
  int timeout_ms_;
};

// Consume a HELLO on every channel and order them by declared client id.
std::vector<std::unique_ptr<MessageChannel>> await_hellos(
    std::vector<std::unique_ptr<MessageChannel>> channels, int timeout_ms);

// The client side of the protocol: initial sync, then R rounds of
// train/upload/download/ack. Stats land in out_stats[round-1].
void client_loop(MessageChannel& channel, int client_id, const FederationConfig& config,
                 const FeaturePool& base_pool, std::vector<LocalStats>& out_stats);

struct FederationResult {
  ParameterSet global;
  std::vector<RoundReport> reports;
  // [round][client] training statistics, collected in memory (never on the wire)
  std::vector<std::vector<LocalStats>> round_client_stats;
};

FederationResult run_federation(const FederationConfig& config,
                                const std::vector<const FeaturePool*>& client_base_pools);

}  // namespace fedshot
