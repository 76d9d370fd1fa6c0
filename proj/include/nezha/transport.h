#pragma once

// Message transport between nodes, plus the TCP server side for clients.
//
// The simulator delivers envelopes itself; TcpTransport carries them over
// real sockets. A node listens on one port for both peers and clients:
// peers send kPeer frames holding an encoded envelope, clients send request
// frames and read Reply frames on the same connection. Each peer gets one
// outgoing connection with its own ordered queue, reconnected on failure;
// anything queued while a peer is unreachable may be lost, which Raft
// tolerates.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "nezha/client_protocol.h"
#include "nezha/raft.h"

namespace nezha {

class Transport {
 public:
  virtual ~Transport() = default;
  // Fire and forget; delivery is not guaranteed.
  virtual void send(const Envelope& env) = 0;
};

// "host:port" (port 0 lets the OS choose when listening); throws
// kInvalidArgument.
std::pair<std::string, uint16_t> parse_address(const std::string& address);

// Blocking connect with a timeout in ms; returns -1 on failure.
int tcp_connect(const std::string& host, uint16_t port, int timeout_ms);
// Writes all bytes; false when the connection failed.
bool write_all(int fd, std::string_view bytes);

struct TcpTransportOptions {
  NodeId self = 0;
  std::string bind_host = "127.0.0.1";
  uint16_t port = 0;  // 0 picks a free port
  std::map<NodeId, std::string> peers;
  int reconnect_ms = 50;
  size_t max_queued_per_peer = 4096;
};

class TcpTransport : public Transport {
 public:
  using PeerHandler = std::function<void(Envelope)>;
  // conn identifies the client connection for reply().
  using ClientHandler = std::function<void(uint64_t conn, ClientRequest)>;

  // Binds and listens immediately (so port() is known before start).
  // Throws kIoFailure when the port is busy.
  explicit TcpTransport(TcpTransportOptions options);
  ~TcpTransport() override;

  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  uint16_t port() const { return port_; }
  // Allowed until start().
  void set_peers(std::map<NodeId, std::string> peers);
  void start(PeerHandler on_peer, ClientHandler on_client);
  void stop();

  void send(const Envelope& env) override;
  void reply(uint64_t conn, const ClientResponse& response);

 private:
  struct Conn {
    int fd = -1;
    std::mutex write_mu;
    std::thread reader;
    std::atomic<bool> done{false};
  };
  struct PeerLink {
    std::string host;
    uint16_t port = 0;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> queue;
    std::thread worker;
    int fd = -1;
  };

  void accept_loop();
  void read_loop(uint64_t id, std::shared_ptr<Conn> conn);
  void peer_loop(NodeId id, PeerLink* link);
  void reap_finished();

  TcpTransportOptions options_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  bool started_ = false;
  PeerHandler on_peer_;
  ClientHandler on_client_;
  std::thread acceptor_;
  std::mutex conns_mu_;
  std::map<uint64_t, std::shared_ptr<Conn>> conns_;
  uint64_t next_conn_ = 1;
  std::map<NodeId, std::unique_ptr<PeerLink>> links_;
};

}  // namespace nezha
