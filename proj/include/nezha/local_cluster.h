#pragma once

// N daemons in one process on loopback ports chosen by the OS.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nezha/node_daemon.h"

namespace nezha {

struct LocalClusterOptions {
  size_t nodes = 3;
  std::filesystem::path dir;  // node i lives in dir/node-i
  // Template for every node; id, peers and data_dir are filled in.
  NodeConfig base;
};

class LocalCluster {
 public:
  explicit LocalCluster(LocalClusterOptions options);
  ~LocalCluster();

  std::vector<std::string> addresses() const;
  size_t size() const { return options_.nodes; }
  bool up(NodeId id) const { return daemons_.at(id) != nullptr; }
  NodeDaemon& node(NodeId id) { return *daemons_.at(id); }

  void stop_node(NodeId id);
  // Same port and data dir as before.
  void restart_node(NodeId id);
  void stop_all();

  std::optional<NodeId> leader();
  // Throws kClusterUnavailable after timeout_ms.
  NodeId wait_leader(TimeMs timeout_ms = 5000);

 private:
  NodeConfig config_for(NodeId id) const;

  LocalClusterOptions options_;
  std::map<NodeId, std::string> peers_;
  std::map<NodeId, std::unique_ptr<NodeDaemon>> daemons_;
};

}  // namespace nezha
