#pragma once

// Deterministic discrete-event cluster simulator.
//
// Virtual time jumps to the next scheduled event. Node timers, message
// deliveries, client actions, crashes and restarts are all events, every
// random choice comes from one seeded generator, and nodes sync in logical
// mode so a crash can tear exactly the bytes that were never synced. Nodes
// group-commit: deliveries only append, and the 10 ms tick syncs, applies
// and sends. A scheduled crash fires at the first moment within 200 ms that
// the node holds unsynced bytes (or at the end of that window). The output
// (trace and client history) is a pure function of the config.
//
// Scenario files are JSON:
//   {
//     "nodes": 3,                     // cluster size
//     "max_time_ms": 60000,           // hard stop for the workload phase
//     "settle_ms": 3000,              // fault-free tail before final checks
//     "gc_threshold_bytes": 1024,     // small, so GC and snapshots happen
//     "compaction_batch": 16,
//     "workload": {
//       "clients": 3, "ops_per_client": 20, "keys": 4, "value_size": 8,
//       "put_fraction": 0.5, "scan_fraction": 0.1,
//       "think_min_ms": 0, "think_max_ms": 20, "client_timeout_ms": 3000,
//       "start_ms": 500
//     },
//     "faults": {
//       "seed": 42,                   // mandatory
//       "drop_prob": 0.05,            // also duplicates with drop_prob / 2
//       "delay_min_ms": 1, "delay_max_ms": 10,
//       "torn_tail": true,
//       "partitions": [ {"start_ms": 1000, "end_ms": 3000, "side": [1]} ],
//       "crashes": [ {"node": 2, "at_ms": 2000, "restart_ms": 4000} ]   // restart_ms -1: never
//     }
//   }

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nezha/checker.h"
#include "nezha/common.h"
#include "nezha/trace.h"

namespace nezha {

struct PartitionWindow {
  TimeMs start_ms = 0;
  TimeMs end_ms = 0;
  std::vector<NodeId> side;  // cut from everyone else
};

struct CrashSpec {
  NodeId node = 0;
  TimeMs at_ms = 0;
  TimeMs restart_ms = -1;  // < 0: stays down until the settle phase
};

struct FaultPlan {
  uint64_t seed = 0;
  double drop_prob = 0;
  TimeMs delay_min_ms = 1;
  TimeMs delay_max_ms = 5;
  bool torn_tail = true;
  std::vector<PartitionWindow> partitions;
  std::vector<CrashSpec> crashes;

  // Throws kScriptError.
  void validate(size_t nodes) const;
};

// Random partitions, crashes and drops that never take down more than
// floor((n-1)/2) nodes at once (crashed plus partitioned minority).
FaultPlan random_fault_plan(uint64_t seed, size_t nodes, TimeMs horizon_ms);

struct WorkloadScript {
  size_t clients = 3;
  size_t ops_per_client = 20;
  size_t keys = 4;
  size_t value_size = 8;
  double put_fraction = 0.5;
  double scan_fraction = 0.1;
  TimeMs think_min_ms = 0;
  TimeMs think_max_ms = 20;
  TimeMs client_timeout_ms = 3000;
  TimeMs start_ms = 500;

  void validate() const;
};

struct SimConfig {
  size_t nodes = 3;
  WorkloadScript workload;
  FaultPlan faults;
  TimeMs max_time_ms = 60'000;
  TimeMs settle_ms = 3000;
  uint64_t gc_threshold_bytes = 1024;
  size_t compaction_batch = 16;
  // Node directories live here; a fresh temporary directory when empty.
  std::filesystem::path work_dir;
  bool keep_files = false;
  // Record Send/Deliver/Drop events (the bulk of a trace).
  bool trace_messages = true;
};

// Throws kScriptError on malformed or invalid input.
SimConfig parse_scenario(std::string_view json_text);
SimConfig load_scenario(const std::filesystem::path& path);

struct SimResult {
  std::vector<TraceEvent> trace;
  std::vector<HistoryOp> history;
  std::map<NodeId, std::map<std::string, std::string>> final_states;
  std::map<NodeId, uint64_t> final_commit;
  bool converged = false;
  TimeMs end_time_ms = 0;
  uint64_t ops_ok = 0;
  uint64_t ops_unknown = 0;  // puts whose outcome the client never learned
  uint64_t ops_failed = 0;   // reads that got no answer
  uint64_t crashes = 0;
  uint64_t gc_cycles = 0;
  uint64_t snapshots_installed = 0;
  uint64_t torn_bytes = 0;
};

SimResult run_simulation(const SimConfig& config);

// `sim_time<TAB>node<TAB>kind<TAB>json` per event.
std::string trace_to_tsv(const std::vector<TraceEvent>& trace);

}  // namespace nezha
