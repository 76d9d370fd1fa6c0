#include "nezha/transport.h"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace nezha {

std::pair<std::string, uint16_t> parse_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw Error(ErrorCode::kInvalidArgument, "expected host:port, got '" + address + "'");
  }
  const std::string port_text = address.substr(colon + 1);
  char* end = nullptr;
  const long port = std::strtol(port_text.c_str(), &end, 10);
  if (*end != '\0' || port < 0 || port > 65535) {
    throw Error(ErrorCode::kInvalidArgument, "bad port in '" + address + "'");
  }
  return {address.substr(0, colon), static_cast<uint16_t>(port)};
}

namespace {

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

int tcp_connect(const std::string& host, uint16_t port, int timeout_ms) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res) return -1;
  const int fd = ::socket(res->ai_family, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) {
    ::freeaddrinfo(res);
    return -1;
  }
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0 && errno == EINPROGRESS) {
    pollfd p{fd, POLLOUT, 0};
    rc = ::poll(&p, 1, timeout_ms) == 1 ? 0 : -1;
    if (rc == 0) {
      int err = 0;
      socklen_t len = sizeof(err);
      ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) rc = -1;
    }
  }
  if (rc != 0) {
    ::close(fd);
    return -1;
  }
  ::fcntl(fd, F_SETFL, flags);
  set_nodelay(fd);
  return fd;
}

bool write_all(int fd, std::string_view bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    bytes.remove_prefix(static_cast<size_t>(n));
  }
  return true;
}

TcpTransport::TcpTransport(TcpTransportOptions options) : options_(std::move(options)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::kIoFailure, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options_.port);
  if (::inet_pton(AF_INET, options_.bind_host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw Error(ErrorCode::kInvalidArgument, "bad bind address " + options_.bind_host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 128) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw Error(ErrorCode::kIoFailure,
                "cannot listen on " + options_.bind_host + ":" + std::to_string(options_.port) + ": " + why);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpTransport::~TcpTransport() {
  stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpTransport::set_peers(std::map<NodeId, std::string> peers) {
  if (started_) throw Error(ErrorCode::kAlreadyRunning, "peers are fixed once started");
  options_.peers = std::move(peers);
}

void TcpTransport::start(PeerHandler on_peer, ClientHandler on_client) {
  if (started_) throw Error(ErrorCode::kAlreadyRunning, "transport already started");
  started_ = true;
  on_peer_ = std::move(on_peer);
  on_client_ = std::move(on_client);
  for (const auto& [id, address] : options_.peers) {
    if (id == options_.self) continue;
    auto link = std::make_unique<PeerLink>();
    std::tie(link->host, link->port) = parse_address(address);
    links_[id] = std::move(link);
  }
  for (auto& [id, link] : links_) {
    link->worker = std::thread([this, id = id, l = link.get()] { peer_loop(id, l); });
  }
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpTransport::stop() {
  if (!started_ || stopping_.exchange(true)) return;
  acceptor_.join();
  for (auto& [id, link] : links_) {
    {
      std::lock_guard lock(link->mu);
      if (link->fd >= 0) ::shutdown(link->fd, SHUT_RDWR);
    }
    link->cv.notify_all();
    link->worker.join();
    if (link->fd >= 0) ::close(link->fd);
  }
  std::map<uint64_t, std::shared_ptr<Conn>> conns;
  {
    std::lock_guard lock(conns_mu_);
    conns.swap(conns_);
  }
  for (auto& [id, c] : conns) {
    ::shutdown(c->fd, SHUT_RDWR);
    c->reader.join();
    ::close(c->fd);
  }
}

void TcpTransport::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) {
      reap_finished();
      continue;
    }
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    set_nodelay(fd);
    auto conn = std::make_shared<Conn>();
    conn->fd = fd;
    std::lock_guard lock(conns_mu_);
    const uint64_t id = next_conn_++;
    conns_[id] = conn;
    conn->reader = std::thread([this, id, conn] { read_loop(id, conn); });
  }
}

void TcpTransport::reap_finished() {
  std::vector<std::shared_ptr<Conn>> dead;
  {
    std::lock_guard lock(conns_mu_);
    for (auto it = conns_.begin(); it != conns_.end();) {
      if (it->second->done) {
        dead.push_back(it->second);
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& c : dead) {
    c->reader.join();
    ::close(c->fd);
  }
}

void TcpTransport::read_loop(uint64_t id, std::shared_ptr<Conn> conn) {
  FrameReader reader;
  char buf[64 * 1024];
  try {
    while (!stopping_) {
      const ssize_t n = ::recv(conn->fd, buf, sizeof(buf), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      reader.feed(std::string_view(buf, static_cast<size_t>(n)));
      while (auto frame = reader.next()) {
        if (frame->type == FrameType::kPeer) {
          on_peer_(decode_envelope(frame->payload));
          continue;
        }
        try {
          on_client_(id, decode_request(*frame));
        } catch (const Error& e) {
          ClientResponse r;
          r.id = frame->request_id;
          r.status = Status::kError;
          r.value = e.what();
          reply(id, r);
        }
      }
    }
  } catch (const Error&) {
    // Broken framing: drop the connection.
  }
  conn->done = true;
}

void TcpTransport::reply(uint64_t conn_id, const ClientResponse& response) {
  std::shared_ptr<Conn> conn;
  {
    std::lock_guard lock(conns_mu_);
    auto it = conns_.find(conn_id);
    if (it == conns_.end()) return;
    conn = it->second;
  }
  const std::string bytes = encode_frame(encode_response(response));
  std::lock_guard lock(conn->write_mu);
  write_all(conn->fd, bytes);
}

void TcpTransport::send(const Envelope& env) {
  auto it = links_.find(env.to);
  if (it == links_.end()) return;
  PeerLink& link = *it->second;
  std::string bytes = encode_frame(Frame{FrameType::kPeer, RequestId{}, encode_envelope(env)});
  {
    std::lock_guard lock(link.mu);
    if (link.queue.size() >= options_.max_queued_per_peer) link.queue.pop_front();
    link.queue.push_back(std::move(bytes));
  }
  link.cv.notify_one();
}

void TcpTransport::peer_loop(NodeId id, PeerLink* link) {
  std::unique_lock lock(link->mu);
  while (!stopping_) {
    if (link->fd < 0) {
      lock.unlock();
      const int fd = tcp_connect(link->host, link->port, 200);
      lock.lock();
      if (fd < 0) {
        link->cv.wait_for(lock, std::chrono::milliseconds(options_.reconnect_ms),
                          [&] { return stopping_.load(); });
        continue;
      }
      link->fd = fd;
    }
    link->cv.wait(lock, [&] { return stopping_ || !link->queue.empty(); });
    if (stopping_) break;
    std::string batch;
    while (!link->queue.empty()) {
      batch += link->queue.front();
      link->queue.pop_front();
    }
    const int fd = link->fd;
    lock.unlock();
    const bool ok = write_all(fd, batch);
    lock.lock();
    if (!ok) {
      ::close(link->fd);
      link->fd = -1;
    }
  }
}

}  // namespace nezha
