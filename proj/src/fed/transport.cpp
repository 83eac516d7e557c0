#include "fedshot/fed/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>

namespace fedshot {

namespace {

class ByteQueue {
 public:
  void push(std::vector<uint8_t> frame) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      frames_.push_back(std::move(frame));
    }
    cv_.notify_one();
  }

  std::vector<uint8_t> pop(int timeout_ms) {
    std::unique_lock<std::mutex> lock(mu_);
    if (!cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                      [&] { return !frames_.empty(); }))
      throw ClientTimeout("no message within " + std::to_string(timeout_ms) + " ms");
    auto frame = std::move(frames_.front());
    frames_.pop_front();
    return frame;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<uint8_t>> frames_;
};

class InProcessChannel : public MessageChannel {
 public:
  InProcessChannel(std::shared_ptr<ByteQueue> out, std::shared_ptr<ByteQueue> in)
      : out_(std::move(out)), in_(std::move(in)) {}

  void send(const RoundMessage& msg) override { out_->push(serialize_message(msg)); }

  RoundMessage receive(int timeout_ms) override {
    return deserialize_message(in_->pop(timeout_ms));
  }

 private:
  std::shared_ptr<ByteQueue> out_;
  std::shared_ptr<ByteQueue> in_;
};

void write_all(int fd, const uint8_t* data, size_t n) {
  size_t off = 0;
  while (off < n) {
    const ssize_t w = ::write(fd, data + off, n - off);
    if (w <= 0) throw TransportError("socket write failed: " + std::string(strerror(errno)));
    off += static_cast<size_t>(w);
  }
}

void read_all(int fd, uint8_t* data, size_t n, int timeout_ms) {
  size_t off = 0;
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (off < n) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                          deadline - std::chrono::steady_clock::now())
                          .count();
    if (left <= 0) throw ClientTimeout("socket read deadline passed");
    pollfd pfd{fd, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, static_cast<int>(left));
    if (pr == 0) throw ClientTimeout("no data within " + std::to_string(timeout_ms) + " ms");
    if (pr < 0) throw TransportError("poll failed: " + std::string(strerror(errno)));
    const ssize_t r = ::read(fd, data + off, n - off);
    if (r == 0) throw TransportError("peer closed the connection");
    if (r < 0) throw TransportError("socket read failed: " + std::string(strerror(errno)));
    off += static_cast<size_t>(r);
  }
}

class SocketChannel : public MessageChannel {
 public:
  explicit SocketChannel(int fd) : fd_(fd) {
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~SocketChannel() override {
    if (fd_ >= 0) ::close(fd_);
  }

  void send(const RoundMessage& msg) override {
    const auto frame = serialize_message(msg);
    uint8_t len[4];
    for (int i = 0; i < 4; ++i)
      len[i] = static_cast<uint8_t>(static_cast<uint32_t>(frame.size()) >> (8 * i));
    write_all(fd_, len, 4);
    write_all(fd_, frame.data(), frame.size());
  }

  RoundMessage receive(int timeout_ms) override {
    uint8_t len[4];
    read_all(fd_, len, 4, timeout_ms);
    uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<uint32_t>(len[i]) << (8 * i);
    if (n > (1u << 30)) throw TransportError("frame length " + std::to_string(n) + " too large");
    std::vector<uint8_t> frame(n);
    read_all(fd_, frame.data(), n, timeout_ms);
    return deserialize_message(frame);
  }

 private:
  int fd_;
};

}  // namespace

std::pair<std::unique_ptr<MessageChannel>, std::unique_ptr<MessageChannel>>
make_in_process_link() {
  auto a_to_b = std::make_shared<ByteQueue>();
  auto b_to_a = std::make_shared<ByteQueue>();
  return {std::make_unique<InProcessChannel>(a_to_b, b_to_a),
          std::make_unique<InProcessChannel>(b_to_a, a_to_b)};
}

std::pair<std::string, int> parse_address(const std::string& addr) {
  const size_t colon = addr.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("socket address must be host:port, got '" + addr + "'");
  const std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("bad port in socket address '" + addr + "'");
  }
  if (port < 0 || port > 65535) throw ConfigError("port out of range in '" + addr + "'");
  return {host, port};
}

SocketServer::SocketServer(const std::string& addr) {
  const auto [host, port] = parse_address(addr);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransportError("cannot create socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
    ::close(listen_fd_);
    throw TransportError("bad listen host '" + host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
    ::close(listen_fd_);
    throw TransportError("bind failed on " + addr + ": " + strerror(errno));
  }
  if (::listen(listen_fd_, 64) != 0) {
    ::close(listen_fd_);
    throw TransportError("listen failed on " + addr);
  }
  socklen_t slen = sizeof(sa);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&sa), &slen);
  port_ = ntohs(sa.sin_port);
}

SocketServer::~SocketServer() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

std::unique_ptr<MessageChannel> SocketServer::accept_channel(int timeout_ms) {
  pollfd pfd{listen_fd_, POLLIN, 0};
  const int pr = ::poll(&pfd, 1, timeout_ms);
  if (pr == 0) throw ClientTimeout("no connection within " + std::to_string(timeout_ms) + " ms");
  if (pr < 0) throw TransportError("poll failed while accepting");
  const int fd = ::accept(listen_fd_, nullptr, nullptr);
  if (fd < 0) throw TransportError("accept failed: " + std::string(strerror(errno)));
  return std::make_unique<SocketChannel>(fd);
}

std::unique_ptr<MessageChannel> connect_channel(const std::string& host, int port,
                                                int timeout_ms) {
  (void)timeout_ms;
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError("cannot create socket");
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(static_cast<uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1) {
    ::close(fd);
    throw TransportError("bad connect host '" + host + "'");
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
    ::close(fd);
    throw TransportError("connect to " + host + ":" + std::to_string(port) +
                         " failed: " + strerror(errno));
  }
  return std::make_unique<SocketChannel>(fd);
}

}  // namespace fedshot
