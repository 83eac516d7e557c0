#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <zlib.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "fedshot/fed/orchestrator.hpp"
#include "fedshot/fed/transport.hpp"
#include "fedshot/fed/wire.hpp"
#include "fedshot/rng.hpp"
#include "support/fake_features.hpp"

using namespace fedshot;
namespace ft = fedshot::testing;

namespace {

ParameterSet random_params(Rng& rng, int entries) {
  ParameterSet ps;
  for (int e = 0; e < entries; ++e) {
    ParamEntry pe;
    pe.name = "entry_" + std::to_string(e);
    const int rows = 1 + static_cast<int>(rng.uniform_int(4));
    const int cols = 1 + static_cast<int>(rng.uniform_int(5));
    pe.shape = {rows, cols};
    for (int i = 0; i < rows * cols; ++i)
      pe.values.push_back(static_cast<float>(rng.uniform(-2.0, 2.0)));
    ps.entries.push_back(std::move(pe));
  }
  return ps;
}

ParameterSet scalar_params(float v) {
  ParameterSet ps;
  ps.entries.push_back({"w", {1}, {v}});
  return ps;
}

FederationConfig tiny_fed_config(int clients, int rounds, int episodes) {
  FederationConfig cfg;
  cfg.num_clients = clients;
  cfg.rounds = rounds;
  cfg.episodes_per_round = episodes;
  cfg.episode = EpisodeSpec{2, 2, 3};
  cfg.lr = 1e-3f;
  cfg.seed = 2024;
  cfg.timeout_ms = 30000;
  cfg.model.embed_dim = 8;
  cfg.model.base_channels = 4;
  cfg.model.in_coeffs = 8;
  cfg.model.in_frames = 6;
  return cfg;
}

}  // namespace

TEST_CASE("aggregating identical weights returns them bit-exactly") {
  Rng rng(1);
  auto ps = random_params(rng, 4);
  std::vector<Upload> ups;
  for (int u = 0; u < 3; ++u) ups.push_back({u, 7, ps});
  auto agg = aggregate(ups);
  for (size_t e = 0; e < ps.entries.size(); ++e)
    CHECK(agg.entries[e].values == ps.entries[e].values);
}

TEST_CASE("opposite weights with equal tasks cancel") {
  Rng rng(2);
  auto w = random_params(rng, 3);
  auto neg = w;
  for (auto& e : neg.entries)
    for (auto& v : e.values) v = -v;
  auto agg = aggregate({{0, 5, w}, {1, 5, neg}});
  for (const auto& e : agg.entries)
    for (float v : e.values) CHECK(v == 0.f);
}

TEST_CASE("weighted mean matches hand arithmetic") {
  auto agg = aggregate({{0, 1, scalar_params(1.f)}, {1, 3, scalar_params(3.f)}});
  CHECK(agg.entries[0].values[0] == 2.5f);  // (1*1 + 3*3) / 4

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int U = 2 + static_cast<int>(rng.uniform_int(4));
    std::vector<Upload> ups;
    auto tmpl = random_params(rng, 3);
    for (int u = 0; u < U; ++u) {
      auto p = tmpl;
      for (auto& e : p.entries)
        for (auto& v : e.values) v = static_cast<float>(rng.uniform(-2.0, 2.0));
      ups.push_back({u, 1 + static_cast<uint32_t>(rng.uniform_int(9)), p});
    }
    auto agg = aggregate(ups);
    double beta = 0;
    for (const auto& u : ups) beta += u.beta;
    for (size_t e = 0; e < tmpl.entries.size(); ++e)
      for (size_t i = 0; i < tmpl.entries[e].values.size(); ++i) {
        double acc = 0;
        for (const auto& u : ups)
          acc += static_cast<double>(u.beta) * u.params.entries[e].values[i];
        CHECK(agg.entries[e].values[i] == static_cast<float>(acc / beta));
      }
  }
}

TEST_CASE("aggregate stays inside the componentwise convex hull") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int U = 2 + static_cast<int>(rng.uniform_int(4));
    std::vector<Upload> ups;
    auto tmpl = random_params(rng, 2);
    for (int u = 0; u < U; ++u) {
      auto p = tmpl;
      for (auto& e : p.entries)
        for (auto& v : e.values) v = static_cast<float>(rng.uniform(-3.0, 3.0));
      ups.push_back({u, 1 + static_cast<uint32_t>(rng.uniform_int(5)), p});
    }
    auto agg = aggregate(ups);
    for (size_t e = 0; e < tmpl.entries.size(); ++e)
      for (size_t i = 0; i < tmpl.entries[e].values.size(); ++i) {
        float lo = ups[0].params.entries[e].values[i], hi = lo;
        for (const auto& u : ups) {
          lo = std::min(lo, u.params.entries[e].values[i]);
          hi = std::max(hi, u.params.entries[e].values[i]);
        }
        CHECK(agg.entries[e].values[i] >= lo);
        CHECK(agg.entries[e].values[i] <= hi);
      }
  }
}

TEST_CASE("upload arrival order never changes the result") {
  Rng rng(5);
  std::vector<Upload> ups;
  for (int u = 0; u < 5; ++u) {
    auto p = random_params(rng, 2);
    // same structure across clients
    if (u > 0)
      for (size_t e = 0; e < p.entries.size(); ++e) p.entries[e].shape = ups[0].params.entries[e].shape;
    ups.push_back({u, static_cast<uint32_t>(1 + u), p});
  }
  // normalize structures: regenerate all from the first template
  auto tmpl = ups[0].params;
  for (auto& u : ups) {
    auto p = tmpl;
    for (auto& e : p.entries)
      for (auto& v : e.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    u.params = p;
  }
  auto sorted = aggregate(ups);
  std::reverse(ups.begin(), ups.end());
  auto reversed = aggregate(ups);
  for (size_t e = 0; e < sorted.entries.size(); ++e)
    CHECK(sorted.entries[e].values == reversed.entries[e].values);
}

TEST_CASE("aggregate error paths") {
  CHECK_THROWS_AS(aggregate({}), ZeroTotalTasks);
  CHECK_THROWS_AS(aggregate({{0, 0, scalar_params(1.f)}, {1, 0, scalar_params(2.f)}}),
                  ZeroTotalTasks);

  auto a = scalar_params(1.f);
  ParameterSet b;
  b.entries.push_back({"different", {1}, {2.f}});
  try {
    aggregate({{0, 1, a}, {1, 1, b}});
    FAIL("expected StructureMismatch");
  } catch (const StructureMismatch& e) {
    CHECK(std::string(e.what()).find("different") != std::string::npos);
  }
}

TEST_CASE("wire round trip is byte-identical") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    RoundMessage msg;
    msg.kind = static_cast<MessageKind>(1 + rng.uniform_int(4));
    msg.round = static_cast<uint32_t>(rng.uniform_int(1000));
    msg.client_id = static_cast<uint16_t>(rng.uniform_int(64));
    msg.beta = static_cast<uint32_t>(rng.uniform_int(500));
    msg.params = random_params(rng, static_cast<int>(rng.uniform_int(4)));
    const auto bytes = serialize_message(msg);
    const auto back = deserialize_message(bytes);
    CHECK(back.kind == msg.kind);
    CHECK(back.round == msg.round);
    CHECK(back.client_id == msg.client_id);
    CHECK(back.beta == msg.beta);
    CHECK(serialize_message(back) == bytes);
  }
}

TEST_CASE("empty parameter set is a header-only frame") {
  RoundMessage msg;
  msg.kind = MessageKind::Ack;
  msg.round = 3;
  msg.client_id = 2;
  const auto bytes = serialize_message(msg);
  // magic(4) version(2) kind(1) round(4) client(2) beta(4) count(4) + crc(4)
  CHECK(bytes.size() == 25);
  CHECK(deserialize_message(bytes).params.entries.empty());
}

TEST_CASE("single-entry frame matches the byte layout by hand") {
  RoundMessage msg;
  msg.kind = MessageKind::Upload;
  msg.round = 1;
  msg.client_id = 0;
  msg.beta = 4;
  msg.params.entries.push_back({"w", {2, 2}, {1.f, 2.f, 3.f, 4.f}});
  const auto bytes = serialize_message(msg);
  // header 21 + name_len 2 + name 1 + ndim 1 + dims 8 + values 16 + crc 4
  REQUIRE(bytes.size() == 53);
  CHECK(bytes[0] == 'F');
  CHECK(bytes[1] == '2');
  CHECK(bytes[2] == 'L');
  CHECK(bytes[3] == 'C');
  CHECK(bytes[21] == 1);    // name_len lo byte
  CHECK(bytes[23] == 'w');  // name
  CHECK(bytes[24] == 2);    // ndim
  // dims 2,2 little-endian
  CHECK(bytes[25] == 2);
  CHECK(bytes[29] == 2);
  // first value 1.0f = 0x3f800000 LE
  CHECK(bytes[33] == 0x00);
  CHECK(bytes[36] == 0x3f);
}

TEST_CASE("corrupted frames raise their designated errors") {
  Rng rng(7);
  RoundMessage msg;
  msg.kind = MessageKind::Upload;
  msg.round = 2;
  msg.client_id = 1;
  msg.beta = 3;
  msg.params = random_params(rng, 2);
  const auto bytes = serialize_message(msg);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_message(bad_magic), BadMagic);

  auto bad_version = bytes;
  bad_version[4] = 0x42;
  CHECK_THROWS_AS(deserialize_message(bad_version), VersionMismatch);

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_message(truncated), TruncatedPayload);

  auto bad_crc = bytes;
  bad_crc[40] ^= 0x01;  // flip a value byte, structure intact
  CHECK_THROWS_AS(deserialize_message(bad_crc), ChecksumMismatch);

  // extra bytes inside the frame (before a recomputed CRC)
  auto padded = bytes;
  padded.resize(padded.size() - 4);
  padded.push_back(0xaa);
  padded.push_back(0xbb);
  const uint32_t crc = static_cast<uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), padded.data(), static_cast<uInt>(padded.size())));
  for (int i = 0; i < 4; ++i) padded.push_back(static_cast<uint8_t>(crc >> (8 * i)));
  CHECK_THROWS_AS(deserialize_message(padded), TruncatedPayload);
}

TEST_CASE("in-process link carries messages and enforces deadlines") {
  auto [a, b] = make_in_process_link();
  RoundMessage msg;
  msg.kind = MessageKind::Hello;
  msg.client_id = 9;
  a->send(msg);
  auto got = b->receive(1000);
  CHECK(got.kind == MessageKind::Hello);
  CHECK(got.client_id == 9);
  CHECK_THROWS_AS(b->receive(50), ClientTimeout);
}

TEST_CASE("socket transport carries frames over localhost") {
  SocketServer server("127.0.0.1:0");
  REQUIRE(server.port() > 0);

  std::atomic<bool> go{false};
  std::thread client([&] {
    auto ch = connect_channel("127.0.0.1", server.port(), 2000);
    while (!go.load()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    RoundMessage msg;
    msg.kind = MessageKind::Upload;
    msg.client_id = 3;
    msg.beta = 11;
    Rng rng(8);
    msg.params = random_params(rng, 3);
    ch->send(msg);
    auto reply = ch->receive(2000);
    CHECK(reply.kind == MessageKind::Global);
  });

  auto ch = server.accept_channel(2000);
  // peer connected but silent: the deadline must fire
  CHECK_THROWS_AS(ch->receive(50), ClientTimeout);
  go.store(true);
  auto got = ch->receive(2000);
  CHECK(got.kind == MessageKind::Upload);
  CHECK(got.client_id == 3);
  CHECK(got.beta == 11);
  RoundMessage reply;
  reply.kind = MessageKind::Global;
  ch->send(reply);
  client.join();
}

TEST_CASE("single-client federation equals plain local training bit-exactly") {
  auto cfg = tiny_fed_config(1, 3, 2);
  auto pool = ft::fake_pool({0, 1, 2, 3}, 8, 555);
  auto fed = run_federation(cfg, {&pool});

  EmbeddingModel<float> local(cfg.model, client_init_seed(cfg.seed));
  Optimizer<float> opt(cfg.optimizer, local.trainable_params(), cfg.lr);
  for (int r = 1; r <= cfg.rounds; ++r)
    run_local_training(local, opt, pool, cfg.episode, cfg.episodes_per_round,
                       client_episode_seed(cfg.seed, 0, r), cfg.distance);
  auto lp = local.parameter_set();
  REQUIRE(lp.entries.size() == fed.global.entries.size());
  for (size_t e = 0; e < lp.entries.size(); ++e)
    CHECK(lp.entries[e].values == fed.global.entries[e].values);
}

TEST_CASE("zero local episodes leave the global model untouched") {
  auto cfg = tiny_fed_config(3, 2, 0);
  auto pool = ft::fake_pool({0, 1, 2}, 6, 556);
  auto fed = run_federation(cfg, {&pool, &pool, &pool});
  EmbeddingModel<float> init(cfg.model, client_init_seed(cfg.seed));
  auto ip = init.parameter_set();
  for (size_t e = 0; e < ip.entries.size(); ++e)
    CHECK(ip.entries[e].values == fed.global.entries[e].values);
  for (const auto& r : fed.reports) CHECK(r.total_beta == 0);
}

TEST_CASE("identical trajectories aggregate to any single upload") {
  // custom clients sharing one episode stream: all uploads coincide
  auto cfg = tiny_fed_config(3, 1, 2);
  auto pool = ft::fake_pool({0, 1, 2, 3}, 8, 557);

  std::vector<std::unique_ptr<MessageChannel>> server_sides;
  std::vector<std::thread> clients;
  std::vector<ParameterSet> uploads(3);
  for (int u = 0; u < 3; ++u) {
    auto [s, c] = make_in_process_link();
    server_sides.push_back(std::move(s));
    clients.emplace_back([&, u, ch = std::shared_ptr<MessageChannel>(std::move(c))] {
      RoundMessage hello;
      hello.kind = MessageKind::Hello;
      hello.client_id = static_cast<uint16_t>(u);
      ch->send(hello);

      EmbeddingModel<float> model(cfg.model, 1);
      Optimizer<float> opt(cfg.optimizer, model.trainable_params(), cfg.lr);
      auto global = ch->receive(5000);
      model.load_parameter_set(global.params);
      RoundMessage ack;
      ack.kind = MessageKind::Ack;
      ack.client_id = static_cast<uint16_t>(u);
      ch->send(ack);

      // every client uses the same seed stream -> identical trajectory
      run_local_training(model, opt, pool, cfg.episode, cfg.episodes_per_round, 12345,
                         cfg.distance);
      RoundMessage up;
      up.kind = MessageKind::Upload;
      up.round = 1;
      up.client_id = static_cast<uint16_t>(u);
      up.beta = static_cast<uint32_t>(cfg.episodes_per_round);
      up.params = model.parameter_set();
      uploads[static_cast<size_t>(u)] = up.params;
      ch->send(up);

      auto g = ch->receive(5000);
      RoundMessage ack2;
      ack2.kind = MessageKind::Ack;
      ack2.round = 1;
      ack2.client_id = static_cast<uint16_t>(u);
      ch->send(ack2);
      (void)g;
    });
  }

  auto ordered = await_hellos(std::move(server_sides), 5000);
  EmbeddingModel<float> init(cfg.model, client_init_seed(cfg.seed));
  FederationServer server(std::move(ordered), init.parameter_set(), 5000);
  server.sync_initial();
  server.run_round(1);
  for (auto& t : clients) t.join();

  for (size_t e = 0; e < uploads[0].entries.size(); ++e) {
    CHECK(uploads[0].entries[e].values == uploads[1].entries[e].values);
    CHECK(server.global().entries[e].values == uploads[0].entries[e].values);
  }
}

TEST_CASE("one federated SGD step equals the weighted-mean gradient step") {
  auto cfg = tiny_fed_config(3, 1, 1);
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.lr = 0.05f;
  std::vector<FeaturePool> pools;
  for (int u = 0; u < 3; ++u) pools.push_back(ft::fake_pool({0, 1, 2, 3}, 8, 600 + static_cast<uint64_t>(u)));
  auto fed = run_federation(cfg, {&pools[0], &pools[1], &pools[2]});

  // manual: per client, gradients at the shared initial point
  EmbeddingModel<float> init(cfg.model, client_init_seed(cfg.seed));
  const auto w0 = init.parameter_set();

  std::vector<ParameterSet> manual_posts;
  for (int u = 0; u < 3; ++u) {
    EmbeddingModel<float> m(cfg.model, 1);
    m.load_parameter_set(w0);
    const uint64_t ep_seed =
        derive_seed(client_episode_seed(cfg.seed, u, 1), "episode", 0);
    auto ep = sample_episode(pools[static_cast<size_t>(u)], cfg.episode, ep_seed);
    auto loss = episode_loss(m, pools[static_cast<size_t>(u)], ep, cfg.distance, true);
    loss.loss.backward();
    // manual sgd step
    m.visit_params([&](const std::string&, Tensor<float>& t, bool learnable) {
      if (!learnable || !t.has_grad()) return;
      auto& w = t.raw_data();
      const auto& g = t.grad();
      for (size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * g[i];
    });
    manual_posts.push_back(m.parameter_set());
  }

  // centralized equivalent: beta-weighted mean of posteriors with equal beta
  // equals w0 - lr * mean gradient
  for (size_t e = 0; e < w0.entries.size(); ++e)
    for (size_t i = 0; i < w0.entries[e].values.size(); ++i) {
      double acc = 0;
      for (const auto& mp : manual_posts) acc += mp.entries[e].values[i];
      const double expect = acc / 3.0;
      const double got = fed.global.entries[e].values[i];
      const double denom = std::max({std::abs(expect), std::abs(got), 1e-2});
      CHECK(std::abs(expect - got) / denom < 1e-5);
    }
}

TEST_CASE("in-process and socket transports give bit-identical global models") {
  auto cfg = tiny_fed_config(3, 2, 2);
  std::vector<FeaturePool> pools;
  for (int u = 0; u < 3; ++u) pools.push_back(ft::fake_pool({0, 1, 2, 3}, 8, 700 + static_cast<uint64_t>(u)));
  std::vector<const FeaturePool*> prefs{&pools[0], &pools[1], &pools[2]};

  cfg.transport = TransportKind::InProcess;
  auto a = run_federation(cfg, prefs);
  cfg.transport = TransportKind::Socket;
  cfg.socket_addr = "127.0.0.1:0";
  auto b = run_federation(cfg, prefs);

  REQUIRE(a.global.entries.size() == b.global.entries.size());
  for (size_t e = 0; e < a.global.entries.size(); ++e)
    CHECK(a.global.entries[e].values == b.global.entries[e].values);
}

TEST_CASE("a silent client times out with its id named") {
  auto [s, c] = make_in_process_link();
  std::vector<std::unique_ptr<MessageChannel>> sides;
  sides.push_back(std::move(s));

  std::thread quiet([ch = std::shared_ptr<MessageChannel>(std::move(c))] {
    RoundMessage hello;
    hello.kind = MessageKind::Hello;
    hello.client_id = 0;
    ch->send(hello);
    // never acks, never uploads
  });

  auto ordered = await_hellos(std::move(sides), 2000);
  FederationServer server(std::move(ordered), scalar_params(1.f), 150);
  try {
    server.sync_initial();
    FAIL("expected ClientTimeout");
  } catch (const ClientTimeout& e) {
    CHECK(std::string(e.what()).find("client 0") != std::string::npos);
  }
  quiet.join();
}

TEST_CASE("structure mismatch aborts the round and rolls back") {
  std::vector<std::unique_ptr<MessageChannel>> sides;
  std::vector<std::thread> threads;
  const auto good = scalar_params(2.f);

  for (int u = 0; u < 2; ++u) {
    auto [s, c] = make_in_process_link();
    sides.push_back(std::move(s));
    threads.emplace_back([u, ch = std::shared_ptr<MessageChannel>(std::move(c))] {
      RoundMessage hello;
      hello.kind = MessageKind::Hello;
      hello.client_id = static_cast<uint16_t>(u);
      ch->send(hello);
      ch->receive(2000);  // initial global
      RoundMessage ack;
      ack.kind = MessageKind::Ack;
      ack.client_id = static_cast<uint16_t>(u);
      ch->send(ack);

      RoundMessage up;
      up.kind = MessageKind::Upload;
      up.round = 1;
      up.client_id = static_cast<uint16_t>(u);
      up.beta = 1;
      if (u == 0) {
        up.params = scalar_params(5.f);
      } else {
        up.params.entries.push_back({"rogue", {2}, {1.f, 2.f}});  // divergent structure
      }
      ch->send(up);
      try {
        ch->receive(500);  // server aborts, no global arrives
      } catch (const Error&) {
      }
    });
  }

  auto ordered = await_hellos(std::move(sides), 2000);
  FederationServer server(std::move(ordered), good, 2000);
  server.sync_initial();
  CHECK_THROWS_AS(server.run_round(1), StructureMismatch);
  // rollback: global still the prior model
  CHECK(server.global().entries[0].values[0] == 2.f);
  for (auto& t : threads) t.join();
}
