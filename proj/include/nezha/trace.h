#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nezha/common.h"

namespace nezha {

enum class TraceKind : uint8_t {
  kSend,
  kDeliver,
  kDrop,
  kCrash,
  kRestart,
  kCommit,
  kApply,
  kRoleChange,
  kClientInvoke,
  kClientComplete,
  // Log-level events the safety checker needs beyond the list above.
  kAppend,
  kTruncate,
  kSnapshotInstall,
  kGcPhase,
};

const char* trace_kind_name(TraceKind kind);

// Field meaning depends on kind:
//   Append           term, index, crc, aux = term of index-1
//   Truncate         index = first removed index
//   Commit           index
//   Apply            term, index, crc
//   RoleChange       term, aux = Role
//   SnapshotInstall  term = last_term, index = last_index
//   Send/Deliver/Drop aux = peer, detail = message type
//   Client*          aux = client id, detail = operation summary
//   GcPhase          aux = GcPhase, index = seal index
struct TraceEvent {
  TimeMs time = 0;
  NodeId node = 0;
  TraceKind kind = TraceKind::kSend;
  uint64_t term = 0;
  uint64_t index = 0;
  uint64_t aux = 0;
  uint32_t crc = 0;
  std::string detail;
};

class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void record(TraceEvent event) = 0;
};

class VectorTraceSink : public TraceSink {
 public:
  void record(TraceEvent event) override { events.push_back(std::move(event)); }
  std::vector<TraceEvent> events;
};

}  // namespace nezha
