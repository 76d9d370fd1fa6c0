#pragma once

// One node's storage, consensus and request handling behind a single loop
// interface. The simulator, the TCP daemon and in-process clusters all drive
// nodes through this.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nezha/gc_controller.h"
#include "nezha/io_counters.h"
#include "nezha/raft.h"
#include "nezha/request_engine.h"
#include "nezha/trace.h"

namespace nezha {

// Sees every batch of applied entries before their puts are acknowledged.
class ApplyObserver {
 public:
  virtual ~ApplyObserver() = default;
  virtual void on_applied(const std::vector<AppliedRecord>& records, GcController& storage) = 0;
  // Makes everything observed so far durable under the node's sync policy.
  virtual void sync() = 0;
};

struct NodeHostOptions {
  NodeId id = 1;
  std::vector<NodeId> members;
  std::filesystem::path dir;
  StorageOptions storage;
  RaftOptions raft;  // id and members are taken from above
  EngineOptions engine;
  // Write an index checkpoint every this many applied entries (0 = never).
  uint64_t checkpoint_interval = 0;
};

class NodeHost {
 public:
  NodeHost(NodeHostOptions options, IoCounters* counters, TimeMs now, TraceSink* trace = nullptr,
           CrashHook hook = {});

  NodeHost(const NodeHost&) = delete;
  NodeHost& operator=(const NodeHost&) = delete;

  void tick(TimeMs now);
  void receive(const Envelope& env, TimeMs now);
  void submit(ReplyTo to, ClientRequest request, TimeMs now);
  // Flush, apply, answer clients and run one unit of GC work.
  void step(TimeMs now);

  std::vector<Envelope> take_messages() { return raft_->take_messages(); }
  std::vector<OutgoingResponse> take_responses();

  void set_observer(ApplyObserver* observer) { observer_ = observer; }

  RaftNode& raft() { return *raft_; }
  GcController& storage() { return *storage_; }
  RequestEngine& engine() { return *engine_; }
  NodeId id() const { return options_.id; }
  IoCounters* counters() const { return counters_; }

  // One JSON object: role, term, commit/applied, GC phase and its recent
  // transitions, counters.
  std::string status_json() const;
  // Full key -> value state through the phase-aware read path.
  std::map<std::string, std::string> state() const;

 private:
  NodeHostOptions options_;
  IoCounters* counters_;
  TraceSink* trace_;
  std::unique_ptr<GcController> storage_;
  std::unique_ptr<RaftNode> raft_;
  std::unique_ptr<RequestEngine> engine_;
  ApplyObserver* observer_ = nullptr;
  std::vector<OutgoingResponse> extra_;
  GcPhase last_phase_;
  std::deque<std::pair<TimeMs, GcPhase>> transitions_;  // most recent last
  uint64_t last_checkpoint_ = 0;
  uint64_t applied_since_rate_ = 0;
  TimeMs rate_window_start_ = 0;
  double load_ = 0;
};

}  // namespace nezha
