#pragma once

// KVS-Raft: standard Raft whose log lives in the ValueLog segments managed by
// GcController, whose state machine is the key index (apply stores a
// location, never a value) and whose snapshot is the sorted run.
//
// RaftNode is a single-threaded event machine. The host feeds it messages,
// ticks and proposals, then calls flush(), which issues one log sync for
// everything appended since the previous flush, releases the replies that
// were waiting on that sync, advances commit and applies.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "nezha/common.h"
#include "nezha/gc_controller.h"
#include "nezha/trace.h"
#include "nezha/valuelog.h"

namespace nezha {

enum class Role : uint8_t { kFollower = 0, kCandidate = 1, kLeader = 2 };
const char* role_name(Role role);

struct RequestVote {
  uint64_t term = 0;
  NodeId candidate = 0;
  uint64_t last_log_index = 0;
  uint64_t last_log_term = 0;
  bool operator==(const RequestVote&) const = default;
};

struct VoteReply {
  uint64_t term = 0;
  bool granted = false;
  bool operator==(const VoteReply&) const = default;
};

struct AppendEntries {
  uint64_t term = 0;
  NodeId leader = 0;
  uint64_t prev_index = 0;
  uint64_t prev_term = 0;
  std::vector<LogRecord> entries;  // contiguous, starting at prev_index + 1
  uint64_t leader_commit = 0;
  uint64_t seq = 0;  // leadership-confirmation round, echoed in the reply
  bool operator==(const AppendEntries&) const = default;
};

struct AppendReply {
  uint64_t term = 0;
  bool success = false;
  uint64_t match_index = 0;     // valid on success
  uint64_t conflict_index = 0;  // on failure: where the leader should retry
  uint64_t seq = 0;
  bool operator==(const AppendReply&) const = default;
};

struct InstallSnapshot {
  uint64_t term = 0;
  NodeId leader = 0;
  uint64_t last_index = 0;
  uint64_t last_term = 0;
  uint64_t total_size = 0;
  uint64_t offset = 0;
  std::string data;
  bool operator==(const InstallSnapshot&) const = default;
};

struct InstallReply {
  uint64_t term = 0;
  uint64_t last_index = 0;
  uint64_t next_offset = 0;  // follower's persisted byte count for this snapshot
  bool installed = false;
  bool operator==(const InstallReply&) const = default;
};

using RaftMessage =
    std::variant<RequestVote, VoteReply, AppendEntries, AppendReply, InstallSnapshot, InstallReply>;

const char* message_name(const RaftMessage& msg);

struct Envelope {
  NodeId from = 0;
  NodeId to = 0;
  RaftMessage msg;
  bool operator==(const Envelope&) const = default;
};

// Binary codec for the TCP transport: [type:1][from:8][to:8][fields...],
// integers little-endian, log entries in the ValueLog record encoding.
std::string encode_envelope(const Envelope& env);
// Throws kInvalidArgument on malformed input.
Envelope decode_envelope(std::string_view bytes);

// `raft.meta`: [current_term:8][voted_for:8, 0 = none][crc32:4].
struct TermState {
  uint64_t current_term = 0;
  NodeId voted_for = 0;
  bool operator==(const TermState&) const = default;
};
std::string encode_term_state(const TermState& s);
TermState decode_term_state(std::string_view bytes);

struct RaftOptions {
  NodeId id = 1;
  std::vector<NodeId> members;  // includes id
  TimeMs election_timeout_min_ms = 150;
  TimeMs election_timeout_max_ms = 300;
  TimeMs heartbeat_interval_ms = 50;
  size_t max_entries_per_message = 256;
  size_t max_bytes_per_message = 4 << 20;
  size_t snapshot_chunk_bytes = 1 << 20;
  size_t entry_cache_bytes = 64 << 20;
  uint64_t seed = 1;
};

struct Proposal {
  uint64_t index = 0;
  uint64_t term = 0;
};

struct ReadResult {
  uint64_t id = 0;
  bool ok = false;  // false: leadership lost before the barrier cleared
};

struct RaftStatus {
  NodeId id = 0;
  Role role = Role::kFollower;
  uint64_t term = 0;
  NodeId leader = 0;
  uint64_t commit_index = 0;
  uint64_t last_applied = 0;
  uint64_t last_log_index = 0;
  uint64_t first_log_index = 0;
  uint64_t snapshot_index = 0;
};

class RaftNode {
 public:
  RaftNode(RaftOptions options, GcController* storage, TimeMs now, TraceSink* trace = nullptr);

  RaftNode(const RaftNode&) = delete;
  RaftNode& operator=(const RaftNode&) = delete;

  // Timer-driven election and heartbeat.
  void tick(TimeMs now);
  void receive(const Envelope& env, TimeMs now);

  // Leader only; throws kNotLeader. The record is appended to the current
  // write segment now and made durable by the next flush().
  Proposal propose(std::string key, std::string value, TimeMs now);

  // Registers a linearizable read. Completes (via take_reads) once this node
  // has confirmed leadership after the call, committed an entry of its term,
  // and applied through the commit index observed then. Throws kNotLeader.
  uint64_t begin_read(TimeMs now);

  void flush(TimeMs now);

  std::vector<Envelope> take_messages();
  std::vector<AppliedRecord> take_applied();
  std::vector<ReadResult> take_reads();

  Role role() const { return role_; }
  bool is_leader() const { return role_ == Role::kLeader; }
  uint64_t term() const { return term_.current_term; }
  NodeId voted_for() const { return term_.voted_for; }
  NodeId leader_hint() const { return leader_; }
  uint64_t commit_index() const { return commit_index_; }
  uint64_t last_applied() const { return last_applied_; }
  NodeId id() const { return options_.id; }
  RaftStatus status() const;
  TimeMs election_deadline() const { return election_deadline_; }
  GcController* storage() const { return storage_; }

 private:
  struct Peer {
    uint64_t next_index = 1;
    uint64_t match_index = 0;
    bool inflight = false;
    uint64_t inflight_last = 0;
    TimeMs sent_at = 0;
    uint64_t acked_seq = 0;
    // Snapshot transfer in progress.
    SortedRunPtr snapshot;
    uint64_t snapshot_offset = 0;
  };

  struct PendingRead {
    uint64_t id;
    uint64_t seq;
    std::optional<uint64_t> read_index;
  };

  struct Incoming {
    uint64_t last_index = 0;
    uint64_t last_term = 0;
    uint64_t size = 0;
  };

  size_t majority() const { return options_.members.size() / 2 + 1; }
  uint64_t last_log_term() const;
  void reset_election_timer(TimeMs now);
  void persist_term();
  void emit(TraceEvent e);
  void send(NodeId to, RaftMessage msg);
  void set_role(Role role, TimeMs now);

  void start_election(TimeMs now);
  void become_leader(TimeMs now);
  void step_down(uint64_t term, TimeMs now);
  void observe_term(uint64_t term, TimeMs now);

  void handle(NodeId from, const RequestVote& m, TimeMs now);
  void handle(NodeId from, const VoteReply& m, TimeMs now);
  void handle(NodeId from, const AppendEntries& m, TimeMs now);
  void handle(NodeId from, const AppendReply& m, TimeMs now);
  void handle(NodeId from, const InstallSnapshot& m, TimeMs now);
  void handle(NodeId from, const InstallReply& m, TimeMs now);

  void append_local(LogRecord record);
  void truncate_local(uint64_t from_index);
  LogRecord entry(uint64_t index) const;
  void replicate(NodeId peer_id, Peer& peer, TimeMs now, bool heartbeat);
  void send_snapshot_chunk(NodeId peer_id, Peer& peer, TimeMs now);
  void advance_commit();
  void apply_committed(TimeMs now);
  void process_reads();
  void fail_reads();

  std::filesystem::path incoming_path(uint64_t last_index, uint64_t last_term) const;
  void load_incoming();

  RaftOptions options_;
  GcController* storage_;
  TraceSink* trace_;
  std::mt19937_64 rng_;
  TimeMs now_ = 0;

  TermState term_;
  Role role_ = Role::kFollower;
  NodeId leader_ = 0;
  uint64_t commit_index_ = 0;
  uint64_t last_applied_ = 0;
  uint64_t durable_index_ = 0;
  bool dirty_ = false;
  TimeMs election_deadline_ = 0;
  TimeMs next_heartbeat_ = 0;

  std::map<NodeId, Peer> peers_;
  std::vector<NodeId> votes_;

  uint64_t hb_seq_ = 0;
  bool confirm_round_due_ = false;
  uint64_t next_read_id_ = 0;
  std::deque<PendingRead> reads_;

  std::optional<Incoming> incoming_;

  std::map<uint64_t, LogRecord> cache_;
  size_t cache_bytes_ = 0;

  std::vector<Envelope> outbox_;
  std::vector<Envelope> after_sync_;
  std::vector<AppliedRecord> applied_;
  std::vector<ReadResult> read_results_;
};

}  // namespace nezha
