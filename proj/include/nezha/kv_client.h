#pragma once

// Blocking client for the node wire protocol.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nezha/client_protocol.h"

namespace nezha {

// One TCP connection; not thread-safe.
class Connection {
 public:
  Connection() = default;
  ~Connection();
  Connection(Connection&& other) noexcept;
  Connection& operator=(Connection&& other) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  // false when the node is unreachable.
  bool connect(const std::string& address, int timeout_ms);
  bool connected() const { return fd_ >= 0; }
  void close();
  // nullopt on timeout or a broken connection (the connection is closed).
  std::optional<ClientResponse> call(const ClientRequest& request, int timeout_ms);

 private:
  int fd_ = -1;
  FrameReader reader_;
};

struct KvClientOptions {
  std::vector<std::string> addresses;  // node i+1 at addresses[i]
  int connect_timeout_ms = 500;
  // Per attempt; a little above the server's consensus timeout.
  int request_timeout_ms = 3000;
  int max_attempts = 30;
  int retry_backoff_ms = 20;
  // Node choice only; request ids are always random so that two clients
  // never share one (the server deduplicates by id).
  uint64_t seed = 0;  // 0: random
};

// Follows NotLeader redirects and retries unreachable nodes. A put is retried
// with the same request id only on the node that accepted it, so it is never
// executed twice.
class KvClient {
 public:
  explicit KvClient(KvClientOptions options);

  // Final response; kTimeout when no attempt produced an answer.
  ClientResponse put(std::string key, std::string value);
  ClientResponse get(std::string key);
  ClientResponse scan(std::string start, std::string end, uint32_t limit);
  ClientResponse call(ClientOp op);
  // Status text of one node, nullopt when unreachable.
  std::optional<std::string> status(size_t node_index);

  // Index into addresses of the node believed to lead.
  size_t leader_guess() const { return target_; }

 private:
  RequestId next_id();
  Connection& conn(size_t index);

  KvClientOptions options_;
  std::vector<Connection> conns_;
  size_t target_ = 0;
  std::mt19937_64 rng_;
  std::mt19937_64 id_rng_;
};

}  // namespace nezha
