#include "nezha/local_cluster.h"

#include <chrono>
#include <thread>

namespace nezha {

LocalCluster::LocalCluster(LocalClusterOptions options) : options_(std::move(options)) {
  if (options_.nodes == 0) throw Error(ErrorCode::kInvalidArgument, "cluster needs a node");
  // Membership is fixed at construction; the real ports replace these
  // placeholders before start.
  std::map<NodeId, std::string> placeholders;
  for (NodeId id = 1; id <= options_.nodes; ++id) placeholders[id] = "127.0.0.1:0";
  for (NodeId id = 1; id <= options_.nodes; ++id) {
    NodeConfig c = options_.base;
    c.id = id;
    c.peers = placeholders;
    c.data_dir = options_.dir / ("node-" + std::to_string(id));
    daemons_[id] = std::make_unique<NodeDaemon>(c);
    peers_[id] = "127.0.0.1:" + std::to_string(daemons_[id]->port());
  }
  for (auto& [id, d] : daemons_) d->set_peer_addresses(peers_);
  for (auto& [id, d] : daemons_) d->start();
}

LocalCluster::~LocalCluster() { stop_all(); }

std::vector<std::string> LocalCluster::addresses() const {
  std::vector<std::string> out;
  for (const auto& [id, a] : peers_) out.push_back(a);
  return out;
}

NodeConfig LocalCluster::config_for(NodeId id) const {
  NodeConfig c = options_.base;
  c.id = id;
  c.peers = peers_;
  c.data_dir = options_.dir / ("node-" + std::to_string(id));
  return c;
}

void LocalCluster::stop_node(NodeId id) {
  auto& d = daemons_.at(id);
  if (!d) return;
  d->stop();
  d.reset();
}

void LocalCluster::restart_node(NodeId id) {
  stop_node(id);
  daemons_[id] = std::make_unique<NodeDaemon>(config_for(id));
  daemons_[id]->start();
}

void LocalCluster::stop_all() {
  for (auto& [id, d] : daemons_) {
    if (d) d->stop();
  }
  daemons_.clear();
}

std::optional<NodeId> LocalCluster::leader() {
  std::optional<NodeId> best;
  uint64_t best_term = 0;
  for (auto& [id, d] : daemons_) {
    if (!d) continue;
    bool is_leader = false;
    uint64_t term = 0;
    d->with_host([&](NodeHost& h) {
      is_leader = h.raft().is_leader();
      term = h.raft().term();
    });
    if (is_leader && term >= best_term) {
      best = id;
      best_term = term;
    }
  }
  return best;
}

NodeId LocalCluster::wait_leader(TimeMs timeout_ms) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (auto l = leader()) return *l;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  throw Error(ErrorCode::kClusterUnavailable, "no leader within " + std::to_string(timeout_ms) + " ms");
}

}  // namespace nezha
