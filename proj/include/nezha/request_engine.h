#pragma once

// Phase-aware request handling on top of RaftNode and GcController.
//
// Reads run against a ReadView captured when the request's read barrier
// clears, so the storage modules consulted are exactly those of the phase in
// force at that moment:
//
//   phase     Get                                  Scan
//   PreGC     active index -> active log           active
//   DuringGC  new, else old                        merge(new, old)
//   PostGC    new, else sorted run                 merge(new, run)
//
// From the second GC cycle on, a PreGC or DuringGC view also carries the run
// left by the previous cycle; it is consulted last, below every segment.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nezha/client_protocol.h"
#include "nezha/gc_controller.h"
#include "nezha/raft.h"

namespace nezha {

inline constexpr TimeMs kConsensusTimeoutMs = 2000;
inline constexpr size_t kDedupWindow = 10'000;

// Ascending union of two ascending lists; on a key collision the entry from
// `newer` survives. Throws kUnsortedInput if either input is not strictly
// ascending.
std::vector<KeyValue> merge_results(const std::vector<KeyValue>& newer,
                                    const std::vector<KeyValue>& older);

enum ReadSource : unsigned {
  kSourceCurrent = 1,  // active (PreGC) or new storage
  kSourceOld = 2,      // active storage during GC
  kSourceRun = 4,      // sorted run
};

struct ReadOptions {
  // Issue the per-module lookups on separate threads. Answers never depend
  // on it.
  bool parallel = false;
};

// `consulted`, when given, receives the ReadSource bits actually queried.
std::optional<std::string> view_get(const ReadView& view, std::string_view key,
                                    ReadOptions options = {}, unsigned* consulted = nullptr);
// Throws kInvalidRange when start > end. limit == 0 means unbounded.
std::vector<KeyValue> view_scan(const ReadView& view, std::string_view start,
                                std::string_view end, size_t limit, ReadOptions options = {},
                                unsigned* consulted = nullptr);

struct EngineOptions {
  TimeMs consensus_timeout_ms = kConsensusTimeoutMs;
  size_t dedup_window = kDedupWindow;
  ReadOptions read;
};

struct EngineStats {
  uint64_t puts_ok = 0;
  uint64_t puts_failed = 0;
  uint64_t timeouts = 0;
  uint64_t dedup_hits = 0;
  uint64_t reads = 0;
};

// Opaque return address chosen by the host (connection id, simulated client).
using ReplyTo = uint64_t;

struct OutgoingResponse {
  ReplyTo to = 0;
  ClientResponse response;
};

// Single-threaded, driven by the host's event loop alongside RaftNode:
//   submit() for each request, raft.flush(now), then poll(now).
class RequestEngine {
 public:
  RequestEngine(RaftNode* raft, GcController* storage, EngineOptions options = {});

  // StatusOp is answered by the host; here it yields Error.
  void submit(ReplyTo to, ClientRequest request, TimeMs now);
  // Resolves puts from applied entries, serves reads whose barrier cleared
  // and expires requests past the consensus timeout.
  void poll(TimeMs now);
  // Same, with entries the host already took from the RaftNode.
  void poll(TimeMs now, const std::vector<AppliedRecord>& applied);

  std::vector<OutgoingResponse> take_responses();
  const EngineStats& stats() const { return stats_; }
  size_t pending_puts() const { return puts_.size(); }
  size_t pending_reads() const { return reads_.size(); }

 private:
  struct Waiter {
    ReplyTo to;
    TimeMs deadline;
  };

  // One proposal, shared by every retry carrying the same request id.
  struct PendingPut {
    RequestId id;
    uint64_t term;
    std::vector<Waiter> waiters;
  };

  struct PendingRead {
    ReplyTo to;
    ClientRequest request;
    TimeMs deadline;
  };

  struct DedupEntry {
    std::optional<uint64_t> index;  // pending proposal
    std::optional<Status> outcome;  // once known
  };

  void reply(ReplyTo to, const RequestId& id, Status status);
  void reply_not_leader(ReplyTo to, const RequestId& id);
  void handle_put(ReplyTo to, const RequestId& id, PutOp op, TimeMs now);
  void handle_read(ReplyTo to, ClientRequest request, TimeMs now);
  void serve_read(const PendingRead& read);
  void resolve_put(uint64_t index, Status status);
  void remember(const RequestId& id);

  RaftNode* raft_;
  GcController* storage_;
  EngineOptions options_;
  EngineStats stats_;

  std::map<uint64_t, PendingPut> puts_;  // by log index
  std::map<uint64_t, PendingRead> reads_;  // by read id
  std::map<RequestId, DedupEntry> dedup_;
  std::deque<RequestId> dedup_order_;
  std::vector<OutgoingResponse> out_;
};

}  // namespace nezha
