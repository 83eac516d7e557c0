#include "fedshot/fed/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

#include "fedshot/rng.hpp"

namespace fedshot {

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

ParameterSet aggregate(std::vector<Upload> uploads) {
  if (uploads.empty()) throw ZeroTotalTasks("no uploads to aggregate");
  std::sort(uploads.begin(), uploads.end(),
            [](const Upload& a, const Upload& b) { return a.client_id < b.client_id; });

  uint64_t beta = 0;
  for (const auto& u : uploads) beta += u.beta;
  if (beta == 0) throw ZeroTotalTasks("all clients report zero tasks");
  for (const auto& u : uploads) uploads.front().params.check_same_structure(u.params);

  ParameterSet out = uploads.front().params;  // structure template
  const double inv_beta = 1.0 / static_cast<double>(beta);
  for (size_t e = 0; e < out.entries.size(); ++e) {
    auto& values = out.entries[e].values;
    for (size_t i = 0; i < values.size(); ++i) {
      double acc = 0.0;
      for (const auto& u : uploads)
        acc += static_cast<double>(u.beta) *
               static_cast<double>(u.params.entries[e].values[i]);
      values[i] = static_cast<float>(acc * inv_beta);
    }
  }
  return out;
}

uint64_t client_init_seed(uint64_t run_seed) { return derive_seed(run_seed, "model_init"); }

uint64_t client_episode_seed(uint64_t run_seed, int client_id, int round) {
  return derive_seed(run_seed, "episodes", static_cast<uint64_t>(client_id),
                     static_cast<uint64_t>(round));
}

uint64_t eval_seed(uint64_t run_seed, int client_id) {
  return derive_seed(run_seed, "evaluation", static_cast<uint64_t>(client_id));
}

FederationServer::FederationServer(std::vector<std::unique_ptr<MessageChannel>> channels,
                                   ParameterSet initial_global, int timeout_ms)
    : channels_(std::move(channels)), global_(std::move(initial_global)),
      timeout_ms_(timeout_ms) {}

RoundMessage FederationServer::receive_from(int client_id, MessageKind expected, int round) {
  RoundMessage msg;
  try {
    msg = channels_[static_cast<size_t>(client_id)]->receive(timeout_ms_);
  } catch (const ClientTimeout& e) {
    throw ClientTimeout("client " + std::to_string(client_id) + ": " + e.what());
  }
  if (msg.kind != expected)
    throw TransportError("client " + std::to_string(client_id) + " sent kind " +
                         std::to_string(static_cast<int>(msg.kind)) + ", expected " +
                         std::to_string(static_cast<int>(expected)));
  if (msg.kind != MessageKind::Hello && static_cast<int>(msg.round) != round)
    throw TransportError("client " + std::to_string(client_id) + " answered round " +
                         std::to_string(msg.round) + " during round " + std::to_string(round));
  if (msg.client_id != client_id)
    throw TransportError("channel " + std::to_string(client_id) + " carries client id " +
                         std::to_string(msg.client_id));
  return msg;
}

void FederationServer::sync_initial() {
  RoundMessage global_msg;
  global_msg.kind = MessageKind::Global;
  global_msg.round = 0;
  global_msg.params = global_;
  for (auto& ch : channels_) ch->send(global_msg);
  for (size_t u = 0; u < channels_.size(); ++u)
    receive_from(static_cast<int>(u), MessageKind::Ack, 0);
}

RoundReport FederationServer::run_round(int round) {
  RoundReport report;
  report.round = round;

  // Step 2: collect every client's upload (synchronous, full participation)
  std::vector<Upload> uploads;
  for (size_t u = 0; u < channels_.size(); ++u) {
    RoundMessage msg = receive_from(static_cast<int>(u), MessageKind::Upload, round);
    Upload up;
    up.client_id = static_cast<int>(u);
    up.beta = msg.beta;
    up.params = std::move(msg.params);
    report.total_beta += up.beta;
    uploads.push_back(std::move(up));
  }

  // Step 3: aggregate; zero total work keeps the previous global model.
  // A structure mismatch aborts before global_ is touched, so state rolls
  // back to the prior model by construction.
  const auto agg_start = std::chrono::steady_clock::now();
  if (report.total_beta > 0) global_ = aggregate(std::move(uploads));
  report.aggregate_ms = ms_since(agg_start);

  // Step 4: broadcast and wait for every ACK (the round barrier)
  const auto update_start = std::chrono::steady_clock::now();
  RoundMessage global_msg;
  global_msg.kind = MessageKind::Global;
  global_msg.round = static_cast<uint32_t>(round);
  global_msg.params = global_;
  for (auto& ch : channels_) ch->send(global_msg);
  for (size_t u = 0; u < channels_.size(); ++u)
    receive_from(static_cast<int>(u), MessageKind::Ack, round);
  report.update_ms = ms_since(update_start);
  return report;
}

std::vector<std::unique_ptr<MessageChannel>> await_hellos(
    std::vector<std::unique_ptr<MessageChannel>> channels, int timeout_ms) {
  std::vector<std::unique_ptr<MessageChannel>> ordered(channels.size());
  for (auto& ch : channels) {
    RoundMessage hello = ch->receive(timeout_ms);
    if (hello.kind != MessageKind::Hello) throw TransportError("expected HELLO first");
    if (hello.client_id >= ordered.size() || ordered[hello.client_id])
      throw TransportError("duplicate or out-of-range client id " +
                           std::to_string(hello.client_id));
    ordered[hello.client_id] = std::move(ch);
  }
  return ordered;
}

void client_loop(MessageChannel& channel, int client_id, const FederationConfig& config,
                 const FeaturePool& base_pool, std::vector<LocalStats>& out_stats) {
  RoundMessage hello;
  hello.kind = MessageKind::Hello;
  hello.client_id = static_cast<uint16_t>(client_id);
  channel.send(hello);

  EmbeddingModel<float> model(config.model, client_init_seed(config.seed));
  Optimizer<float> optimizer(config.optimizer, model.trainable_params(), config.lr);

  // initial sync
  {
    RoundMessage global = channel.receive(config.timeout_ms);
    if (global.kind != MessageKind::Global)
      throw TransportError("client " + std::to_string(client_id) + ": expected initial GLOBAL");
    model.load_parameter_set(global.params);
    RoundMessage ack;
    ack.kind = MessageKind::Ack;
    ack.round = global.round;
    ack.client_id = static_cast<uint16_t>(client_id);
    channel.send(ack);
  }

  out_stats.resize(static_cast<size_t>(config.rounds));
  for (int round = 1; round <= config.rounds; ++round) {
    LocalStats stats = run_local_training(
        model, optimizer, base_pool, config.episode, config.episodes_per_round,
        client_episode_seed(config.seed, client_id, round), config.distance);

    RoundMessage upload;
    upload.kind = MessageKind::Upload;
    upload.round = static_cast<uint32_t>(round);
    upload.client_id = static_cast<uint16_t>(client_id);
    upload.beta = stats.episodes_run;
    upload.params = model.parameter_set();
    channel.send(upload);

    RoundMessage global = channel.receive(config.timeout_ms);
    if (global.kind != MessageKind::Global || static_cast<int>(global.round) != round)
      throw TransportError("client " + std::to_string(client_id) +
                           ": expected GLOBAL for round " + std::to_string(round));
    model.load_parameter_set(global.params);

    RoundMessage ack;
    ack.kind = MessageKind::Ack;
    ack.round = static_cast<uint32_t>(round);
    ack.client_id = static_cast<uint16_t>(client_id);
    channel.send(ack);

    out_stats[static_cast<size_t>(round - 1)] = std::move(stats);
  }
}

FederationResult run_federation(const FederationConfig& config,
                                const std::vector<const FeaturePool*>& client_base_pools) {
  const int U = config.num_clients;
  if (U < 1) throw ConfigError("federation needs at least one client");
  if (static_cast<int>(client_base_pools.size()) != U)
    throw ConfigError("expected " + std::to_string(U) + " client pools, got " +
                      std::to_string(client_base_pools.size()));

  std::vector<std::vector<LocalStats>> per_client_stats(static_cast<size_t>(U));
  std::vector<std::thread> clients;
  std::vector<std::exception_ptr> client_errors(static_cast<size_t>(U));
  std::vector<std::unique_ptr<MessageChannel>> server_sides;

  std::unique_ptr<SocketServer> listener;
  std::vector<std::unique_ptr<MessageChannel>> client_sides(static_cast<size_t>(U));
  if (config.transport == TransportKind::InProcess) {
    for (int u = 0; u < U; ++u) {
      auto [a, b] = make_in_process_link();
      server_sides.push_back(std::move(a));
      client_sides[static_cast<size_t>(u)] = std::move(b);
    }
  } else {
    listener = std::make_unique<SocketServer>(config.socket_addr);
  }

  for (int u = 0; u < U; ++u) {
    clients.emplace_back([&, u] {
      try {
        std::unique_ptr<MessageChannel> channel;
        if (config.transport == TransportKind::InProcess)
          channel = std::move(client_sides[static_cast<size_t>(u)]);
        else
          channel = connect_channel("127.0.0.1", listener->port(), config.timeout_ms);
        client_loop(*channel, u, config, *client_base_pools[static_cast<size_t>(u)],
                    per_client_stats[static_cast<size_t>(u)]);
      } catch (...) {
        client_errors[static_cast<size_t>(u)] = std::current_exception();
      }
    });
  }

  FederationResult result;
  std::exception_ptr server_error;
  try {
    if (config.transport == TransportKind::Socket) {
      for (int u = 0; u < U; ++u)
        server_sides.push_back(listener->accept_channel(config.timeout_ms));
    }
    auto ordered = await_hellos(std::move(server_sides), config.timeout_ms);

    EmbeddingModel<float> init_model(config.model, client_init_seed(config.seed));
    FederationServer server(std::move(ordered), init_model.parameter_set(),
                            config.timeout_ms);
    server.sync_initial();
    for (int round = 1; round <= config.rounds; ++round)
      result.reports.push_back(server.run_round(round));
    result.global = server.global();
  } catch (...) {
    server_error = std::current_exception();
  }

  for (auto& t : clients) t.join();
  if (server_error) std::rethrow_exception(server_error);
  for (int u = 0; u < U; ++u)
    if (client_errors[static_cast<size_t>(u)]) std::rethrow_exception(client_errors[static_cast<size_t>(u)]);

  result.round_client_stats.resize(static_cast<size_t>(config.rounds));
  for (int r = 0; r < config.rounds; ++r) {
    auto& row = result.round_client_stats[static_cast<size_t>(r)];
    row.resize(static_cast<size_t>(U));
    for (int u = 0; u < U; ++u)
      row[static_cast<size_t>(u)] = per_client_stats[static_cast<size_t>(u)][static_cast<size_t>(r)];
  }
  return result;
}

}  // namespace fedshot
