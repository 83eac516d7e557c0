#pragma once

#include <memory>
#include <string>
#include <utility>

#include "fedshot/fed/wire.hpp"

namespace fedshot {

// One endpoint of a reliable message link. Both implementations move whole
// serialized frames, so the wire format is exercised regardless of transport.
class MessageChannel {
 public:
  virtual ~MessageChannel() = default;
  virtual void send(const RoundMessage& msg) = 0;
  // Throws ClientTimeout when the deadline passes, TransportError on a broken
  // link.
  virtual RoundMessage receive(int timeout_ms) = 0;
};

// Paired in-memory endpoints backed by byte queues.
std::pair<std::unique_ptr<MessageChannel>, std::unique_ptr<MessageChannel>>
make_in_process_link();

// Length-prefixed frames over a local TCP stream.
class SocketServer {
 public:
  explicit SocketServer(const std::string& addr);  // "host:port", port 0 = ephemeral
  ~SocketServer();
  SocketServer(const SocketServer&) = delete;
  SocketServer& operator=(const SocketServer&) = delete;

  int port() const { return port_; }
  std::unique_ptr<MessageChannel> accept_channel(int timeout_ms);

 private:
  int listen_fd_ = -1;
  int port_ = 0;
};

std::unique_ptr<MessageChannel> connect_channel(const std::string& host, int port,
                                                int timeout_ms);

std::pair<std::string, int> parse_address(const std::string& addr);

}  // namespace fedshot
