#include "nezha/kv_client.h"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <thread>

#include "nezha/transport.h"

namespace nezha {

Connection::~Connection() { close(); }

Connection::Connection(Connection&& other) noexcept : fd_(other.fd_), reader_(std::move(other.reader_)) {
  other.fd_ = -1;
}

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    reader_ = std::move(other.reader_);
    other.fd_ = -1;
  }
  return *this;
}

bool Connection::connect(const std::string& address, int timeout_ms) {
  close();
  const auto [host, port] = parse_address(address);
  fd_ = tcp_connect(host, port, timeout_ms);
  return fd_ >= 0;
}

void Connection::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  reader_ = FrameReader{};
}

std::optional<ClientResponse> Connection::call(const ClientRequest& request, int timeout_ms) {
  if (fd_ < 0) return std::nullopt;
  if (!write_all(fd_, encode_frame(encode_request(request)))) {
    close();
    return std::nullopt;
  }
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  char buf[64 * 1024];
  for (;;) {
    try {
      while (auto frame = reader_.next()) {
        ClientResponse r = decode_response(*frame);
        if (r.id == request.id) return r;  // anything else answers an abandoned call
      }
    } catch (const Error&) {
      close();
      return std::nullopt;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) return std::nullopt;
    const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      close();
      return std::nullopt;
    }
    reader_.feed(std::string_view(buf, static_cast<size_t>(n)));
  }
}

KvClient::KvClient(KvClientOptions options)
    : options_(std::move(options)),
      conns_(options_.addresses.size()),
      rng_(options_.seed != 0 ? options_.seed : std::random_device{}()),
      id_rng_(std::random_device{}()) {
  if (options_.addresses.empty()) throw Error(ErrorCode::kInvalidArgument, "no node addresses");
  target_ = rng_() % options_.addresses.size();
}

RequestId KvClient::next_id() {
  RequestId id;
  for (size_t i = 0; i < id.size(); i += 8) {
    const uint64_t r = id_rng_();
    for (size_t b = 0; b < 8; ++b) id[i + b] = static_cast<uint8_t>(r >> (8 * b));
  }
  return id;
}

Connection& KvClient::conn(size_t index) {
  Connection& c = conns_.at(index);
  if (!c.connected()) c.connect(options_.addresses[index], options_.connect_timeout_ms);
  return c;
}

ClientResponse KvClient::put(std::string key, std::string value) {
  return call(PutOp{std::move(key), std::move(value)});
}

ClientResponse KvClient::get(std::string key) { return call(GetOp{std::move(key)}); }

ClientResponse KvClient::scan(std::string start, std::string end, uint32_t limit) {
  return call(ScanOp{std::move(start), std::move(end), limit});
}

ClientResponse KvClient::call(ClientOp op) {
  const ClientRequest req{next_id(), std::move(op)};
  const bool is_put = std::holds_alternative<PutOp>(req.op);
  const size_t n = options_.addresses.size();
  // Set once a put may have reached a leader: from then on only that node
  // can tell us its fate.
  std::optional<size_t> pinned;
  ClientResponse unknown;
  unknown.id = req.id;
  unknown.status = Status::kTimeout;
  auto backoff = [&] { std::this_thread::sleep_for(std::chrono::milliseconds(options_.retry_backoff_ms)); };

  for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
    const size_t idx = pinned.value_or(target_);
    Connection& c = conn(idx);
    if (!c.connected()) {
      if (pinned) return unknown;
      target_ = (target_ + 1) % n;
      backoff();
      continue;
    }
    auto resp = c.call(req, options_.request_timeout_ms);
    if (!resp) {
      if (is_put) {
        pinned = idx;
      } else {
        target_ = (target_ + 1) % n;
      }
      continue;
    }
    switch (resp->status) {
      case Status::kNotLeader:
        if (pinned) return unknown;
        if (resp->leader_hint >= 1 && resp->leader_hint <= n && resp->leader_hint - 1 != idx) {
          target_ = resp->leader_hint - 1;
        } else {
          target_ = (idx + 1) % n;
          backoff();
        }
        continue;
      case Status::kTimeout:
        // The server still tracks the request; a retry with the same id
        // attaches to it.
        if (is_put) pinned = idx;
        continue;
      default:
        target_ = idx;
        return *resp;
    }
  }
  return unknown;
}

std::optional<std::string> KvClient::status(size_t node_index) {
  Connection& c = conn(node_index);
  if (!c.connected()) return std::nullopt;
  auto r = c.call(ClientRequest{next_id(), StatusOp{}}, options_.request_timeout_ms);
  if (!r || r->status != Status::kValue) return std::nullopt;
  return r->value;
}

}  // namespace nezha
