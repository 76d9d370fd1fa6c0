#pragma once

// A node as a service: NodeHost driven by wall-clock time, behind a TCP
// transport. One loop thread owns the host; transport threads only enqueue.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <variant>

#include "nezha/baseline.h"
#include "nezha/node_host.h"
#include "nezha/transport.h"

namespace nezha {

enum class NodeMode : uint8_t { kNezha, kBaseline };
const char* node_mode_name(NodeMode mode);
NodeMode parse_node_mode(std::string_view text);  // kInvalidArgument

// always: fdatasync before acknowledging; none: page cache only.
enum class FsyncPolicy : uint8_t { kAlways, kNone };
FsyncPolicy parse_fsync_policy(std::string_view text);

struct NodeConfig {
  NodeId id = 1;
  std::map<NodeId, std::string> peers;  // every member, self included ("host:port")
  std::filesystem::path data_dir;
  uint64_t gc_threshold_bytes = 64ull << 20;
  TimeMs gc_timer_ms = 60'000;
  bool gc_enabled = true;
  NodeMode mode = NodeMode::kNezha;
  FsyncPolicy fsync = FsyncPolicy::kAlways;
  BaselineOptions baseline;
  size_t compaction_batch = 512;
  uint64_t checkpoint_interval = 0;
  TimeMs tick_ms = 5;
  RaftOptions raft;  // id/members/seed filled in from above
  EngineOptions engine;

  // Throws kInvalidArgument.
  void validate() const;
};

// Applies keys present in a JSON object on top of `base`; throws
// kInvalidArgument on unknown keys or bad values.
NodeConfig apply_node_config_json(const std::string& json_text, NodeConfig base);

class NodeDaemon {
 public:
  // Opens storage (running recovery) and binds the listening port.
  // Throws kIoFailure (port busy) or kCorruptState.
  explicit NodeDaemon(NodeConfig config);
  ~NodeDaemon();

  NodeDaemon(const NodeDaemon&) = delete;
  NodeDaemon& operator=(const NodeDaemon&) = delete;

  uint16_t port() const { return transport_->port(); }
  // Only before start(), for clusters whose ports were chosen by the OS.
  // The set of ids must stay the same.
  void set_peer_addresses(std::map<NodeId, std::string> peers);
  void start();
  // Clean shutdown: syncs everything and stops all threads.
  void stop();

  // Runs `fn` on the loop thread and waits for it.
  void with_host(const std::function<void(NodeHost&)>& fn);
  std::string status_json();
  // Baseline mode: writes out the emulated memtable. No-op otherwise.
  void flush_baseline();
  const NodeConfig& config() const { return config_; }
  IoCounters& counters() { return counters_; }
  // Milliseconds since this process's clock origin.
  static TimeMs clock_ms();

 private:
  struct ClientItem {
    uint64_t conn;
    ClientRequest request;
  };
  using Item = std::variant<Envelope, ClientItem, std::function<void()>>;

  void loop();
  void post(Item item);

  NodeConfig config_;
  IoCounters counters_;
  std::unique_ptr<NodeHost> host_;
  std::unique_ptr<BaselineEmulator> baseline_;
  std::unique_ptr<TcpTransport> transport_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> inbox_;
  bool running_ = false;
  bool started_ = false;
  std::thread thread_;
};

}  // namespace nezha
