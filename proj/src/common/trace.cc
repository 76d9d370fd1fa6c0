#include "nezha/trace.h"

namespace nezha {

const char* trace_kind_name(TraceKind kind) {
  switch (kind) {
    case TraceKind::kSend: return "Send";
    case TraceKind::kDeliver: return "Deliver";
    case TraceKind::kDrop: return "Drop";
    case TraceKind::kCrash: return "Crash";
    case TraceKind::kRestart: return "Restart";
    case TraceKind::kCommit: return "Commit";
    case TraceKind::kApply: return "Apply";
    case TraceKind::kRoleChange: return "RoleChange";
    case TraceKind::kClientInvoke: return "ClientInvoke";
    case TraceKind::kClientComplete: return "ClientComplete";
    case TraceKind::kAppend: return "Append";
    case TraceKind::kTruncate: return "Truncate";
    case TraceKind::kSnapshotInstall: return "SnapshotInstall";
    case TraceKind::kGcPhase: return "GcPhase";
  }
  return "?";
}

}  // namespace nezha
