#pragma once

// Offline checkers over simulation output.
//
// check_safety reconstructs every node's log from Append/Truncate/
// SnapshotInstall trace events and verifies the four Raft safety properties.
// check_linearizable verifies a client history against a key-value map
// model, splitting it into independent key groups first.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nezha/compacted_store.h"
#include "nezha/trace.h"

namespace nezha {

struct Violation {
  std::string property;  // "ElectionSafety", "LeaderAppendOnly", "LogMatching", "StateMachineSafety"
  std::string detail;
  std::vector<size_t> events;  // positions in the trace
};

struct SafetyReport {
  std::vector<Violation> violations;
  size_t events_checked = 0;
  size_t leaders_seen = 0;
  size_t entries_applied = 0;
  bool ok() const { return violations.empty(); }
};

SafetyReport check_safety(const std::vector<TraceEvent>& trace);

enum class HistOpKind : uint8_t { kPut, kGet, kScan };

// One client operation. Times come from any clock that orders events
// totally; an operation with no completion may have taken effect at any
// point after its invocation, or never (only meaningful for puts; reads
// without completion are ignored).
struct HistoryOp {
  uint64_t id = 0;
  uint64_t client = 0;
  HistOpKind kind = HistOpKind::kPut;
  std::string key;    // put, get
  std::string value;  // put
  std::string start;  // scan
  std::string end;
  uint32_t limit = 0;
  std::optional<std::string> read;  // get result
  std::vector<KeyValue> entries;    // scan result
  int64_t invoke = 0;
  std::optional<int64_t> complete;
};

struct LinearizabilityOptions {
  // Per key group; beyond this the search is refused with kHistoryTooLarge.
  size_t max_ops = 4096;
  uint64_t max_steps = 20'000'000;
  // Shrink a failing group to a locally minimal failing subset.
  bool shrink = true;
};

struct LinearizabilityResult {
  bool ok = true;
  // Op ids in a valid linearization order (ok), concatenated over groups.
  std::vector<uint64_t> witness;
  // Op ids of a failing subset (not ok).
  std::vector<uint64_t> violating;
  std::string detail;
};

LinearizabilityResult check_linearizable(const std::vector<HistoryOp>& history,
                                         LinearizabilityOptions options = {});

std::string describe(const HistoryOp& op);

}  // namespace nezha
