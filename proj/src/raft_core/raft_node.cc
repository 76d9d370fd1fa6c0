#include <algorithm>

#include "nezha/file.h"
#include "nezha/raft.h"

namespace nezha {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTermFile = "raft.meta";

uint32_t record_crc(const LogRecord& r) {
  const std::string enc = encode_record(r);
  return get_le32(enc.data());
}

}  // namespace

RaftNode::RaftNode(RaftOptions options, GcController* storage, TimeMs now, TraceSink* trace)
    : options_(std::move(options)),
      storage_(storage),
      trace_(trace),
      rng_(options_.seed * 0x9e3779b97f4a7c15ull + options_.id),
      now_(now) {
  if (options_.members.empty()) options_.members.push_back(options_.id);
  if (std::find(options_.members.begin(), options_.members.end(), options_.id) ==
      options_.members.end()) {
    throw Error(ErrorCode::kInvalidArgument, "node id is not a cluster member");
  }
  const std::string meta = read_file(storage_->dir() / kTermFile);
  if (!meta.empty()) term_ = decode_term_state(meta);
  commit_index_ = last_applied_ = storage_->applied_floor();
  durable_index_ = storage_->last_log_index();
  for (NodeId m : options_.members) {
    if (m != options_.id) peers_[m] = Peer{};
  }
  load_incoming();
  reset_election_timer(now);
}

void RaftNode::emit(TraceEvent e) {
  if (!trace_) return;
  e.time = now_;
  e.node = options_.id;
  trace_->record(std::move(e));
}

void RaftNode::send(NodeId to, RaftMessage msg) {
  outbox_.push_back(Envelope{options_.id, to, std::move(msg)});
}

void RaftNode::set_role(Role role, TimeMs now) {
  if (role == role_) return;
  role_ = role;
  emit(TraceEvent{.kind = TraceKind::kRoleChange, .term = term(), .aux = static_cast<uint64_t>(role)});
}

void RaftNode::persist_term() {
  atomic_write_file(storage_->dir() / kTermFile, encode_term_state(term_),
                    storage_->options().sync_mode);
}

void RaftNode::reset_election_timer(TimeMs now) {
  std::uniform_int_distribution<TimeMs> dist(options_.election_timeout_min_ms,
                                             options_.election_timeout_max_ms - 1);
  election_deadline_ = now + dist(rng_);
}

uint64_t RaftNode::last_log_term() const {
  return storage_->term_at(storage_->last_log_index()).value_or(0);
}

RaftStatus RaftNode::status() const {
  return RaftStatus{options_.id,
                    role_,
                    term(),
                    leader_,
                    commit_index_,
                    last_applied_,
                    storage_->last_log_index(),
                    storage_->first_log_index(),
                    storage_->snapshot().last_index};
}

// ---- elections -----------------------------------------------------------

void RaftNode::tick(TimeMs now) {
  now_ = now;
  if (role_ == Role::kLeader) {
    if (now >= next_heartbeat_) {
      for (auto& [id, peer] : peers_) replicate(id, peer, now, true);
      next_heartbeat_ = now + options_.heartbeat_interval_ms;
    }
  } else if (now >= election_deadline_) {
    start_election(now);
  }
}

void RaftNode::start_election(TimeMs now) {
  term_.current_term++;
  term_.voted_for = options_.id;
  persist_term();
  leader_ = 0;
  fail_reads();
  if (role_ == Role::kCandidate) {
    // A re-election in a new term is still a role change worth tracing.
    emit(TraceEvent{.kind = TraceKind::kRoleChange, .term = term(),
                    .aux = static_cast<uint64_t>(Role::kCandidate)});
  }
  set_role(Role::kCandidate, now);
  votes_ = {options_.id};
  reset_election_timer(now);
  if (votes_.size() >= majority()) {
    become_leader(now);
    return;
  }
  for (const auto& [id, peer] : peers_) {
    send(id, RequestVote{term(), options_.id, storage_->last_log_index(), last_log_term()});
  }
}

void RaftNode::become_leader(TimeMs now) {
  set_role(Role::kLeader, now);
  leader_ = options_.id;
  const uint64_t next = storage_->last_log_index() + 1;
  for (auto& [id, peer] : peers_) {
    peer = Peer{};
    peer.next_index = next;
  }
  append_local(LogRecord{term(), next, OpKind::kNoOp, "", ""});
  next_heartbeat_ = now;
}

void RaftNode::step_down(uint64_t new_term, TimeMs now) {
  const bool was_active = role_ != Role::kFollower;
  if (new_term > term()) {
    term_.current_term = new_term;
    term_.voted_for = 0;
    persist_term();
  }
  if (role_ == Role::kLeader) fail_reads();
  set_role(Role::kFollower, now);
  if (was_active) reset_election_timer(now);
}

void RaftNode::observe_term(uint64_t t, TimeMs now) {
  if (t > term()) {
    leader_ = 0;
    step_down(t, now);
  }
}

void RaftNode::handle(NodeId from, const RequestVote& m, TimeMs now) {
  observe_term(m.term, now);
  bool granted = false;
  if (m.term == term() && (term_.voted_for == 0 || term_.voted_for == m.candidate)) {
    const uint64_t my_term = last_log_term();
    const bool up_to_date =
        m.last_log_term > my_term ||
        (m.last_log_term == my_term && m.last_log_index >= storage_->last_log_index());
    if (up_to_date) {
      term_.voted_for = m.candidate;
      persist_term();
      granted = true;
      reset_election_timer(now);
    }
  }
  send(from, VoteReply{term(), granted});
}

void RaftNode::handle(NodeId from, const VoteReply& m, TimeMs now) {
  observe_term(m.term, now);
  if (role_ != Role::kCandidate || m.term != term() || !m.granted) return;
  if (std::find(votes_.begin(), votes_.end(), from) == votes_.end()) votes_.push_back(from);
  if (votes_.size() >= majority()) become_leader(now);
}

// ---- log replication -------------------------------------------------------

void RaftNode::append_local(LogRecord record) {
  const uint64_t prev_term = storage_->term_at(record.index - 1).value_or(0);
  storage_->append(record);
  dirty_ = true;
  if (trace_) {
    emit(TraceEvent{.kind = TraceKind::kAppend, .term = record.term, .index = record.index,
                    .aux = prev_term, .crc = record_crc(record)});
  }
  const size_t bytes = record.key.size() + record.value.size() + kRecordHeaderSize;
  cache_bytes_ += bytes;
  cache_.emplace(record.index, std::move(record));
  while (cache_bytes_ > options_.entry_cache_bytes && !cache_.empty()) {
    auto it = cache_.begin();
    cache_bytes_ -= it->second.key.size() + it->second.value.size() + kRecordHeaderSize;
    cache_.erase(it);
  }
}

void RaftNode::truncate_local(uint64_t from_index) {
  if (from_index <= commit_index_) {
    throw Error(ErrorCode::kCorruptState,
                "asked to truncate committed entry " + std::to_string(from_index));
  }
  storage_->truncate_suffix(from_index);
  for (auto it = cache_.lower_bound(from_index); it != cache_.end();) {
    cache_bytes_ -= it->second.key.size() + it->second.value.size() + kRecordHeaderSize;
    it = cache_.erase(it);
  }
  dirty_ = true;
  emit(TraceEvent{.kind = TraceKind::kTruncate, .term = term(), .index = from_index});
}

LogRecord RaftNode::entry(uint64_t index) const {
  if (auto it = cache_.find(index); it != cache_.end()) return it->second;
  return storage_->read_entry(index);
}

void RaftNode::handle(NodeId from, const AppendEntries& m, TimeMs now) {
  if (m.term < term()) {
    send(from, AppendReply{term(), false, 0, 0, m.seq});
    return;
  }
  observe_term(m.term, now);
  if (role_ == Role::kLeader) return;  // same-term leader cannot exist
  set_role(Role::kFollower, now);
  leader_ = m.leader;
  reset_election_timer(now);

  const uint64_t last = storage_->last_log_index();
  if (m.prev_index > last) {
    after_sync_.push_back({options_.id, from, AppendReply{term(), false, 0, last + 1, m.seq}});
    return;
  }
  // Entries at or below the commit index are identical on every node, so the
  // consistency check only matters above it.
  if (m.prev_index > commit_index_) {
    const uint64_t mine = storage_->term_at(m.prev_index).value_or(0);
    if (mine != m.prev_term) {
      uint64_t conflict = m.prev_index;
      while (conflict - 1 > commit_index_ && storage_->term_at(conflict - 1) == mine) --conflict;
      after_sync_.push_back({options_.id, from, AppendReply{term(), false, 0, conflict, m.seq}});
      return;
    }
  }
  for (const auto& e : m.entries) {
    if (e.index <= commit_index_) continue;
    if (e.index <= storage_->last_log_index()) {
      if (storage_->term_at(e.index) == e.term) continue;
      truncate_local(e.index);
    }
    append_local(e);
  }
  const uint64_t last_new = m.prev_index + m.entries.size();
  if (m.leader_commit > commit_index_) {
    const uint64_t c = std::min(m.leader_commit, last_new);
    if (c > commit_index_) {
      commit_index_ = c;
      emit(TraceEvent{.kind = TraceKind::kCommit, .term = term(), .index = c});
    }
  }
  after_sync_.push_back({options_.id, from, AppendReply{term(), true, last_new, 0, m.seq}});
}

void RaftNode::handle(NodeId from, const AppendReply& m, TimeMs now) {
  observe_term(m.term, now);
  if (role_ != Role::kLeader || m.term != term()) return;
  auto it = peers_.find(from);
  if (it == peers_.end()) return;
  Peer& peer = it->second;
  peer.acked_seq = std::max(peer.acked_seq, m.seq);
  if (m.success) {
    if (m.match_index > peer.match_index) peer.match_index = m.match_index;
    peer.next_index = std::max(peer.next_index, peer.match_index + 1);
    if (peer.match_index >= peer.inflight_last) peer.inflight = false;
    advance_commit();
  } else if (m.conflict_index > 0) {
    const uint64_t next = std::max(peer.match_index + 1, m.conflict_index);
    // A rejection that does not move next_index back answers an older probe;
    // re-sending on each one would multiply probes under duplication.
    if (!peer.inflight || next < peer.next_index) {
      peer.next_index = next;
      peer.inflight = false;
    }
  }
  if (!peer.snapshot) replicate(from, peer, now, false);
  process_reads();
}

void RaftNode::replicate(NodeId peer_id, Peer& peer, TimeMs now, bool heartbeat) {
  const bool stale = now - peer.sent_at >= options_.heartbeat_interval_ms;
  if (peer.snapshot) {
    if (!peer.inflight || stale) send_snapshot_chunk(peer_id, peer, now);
    return;
  }
  if (peer.next_index < storage_->first_log_index()) {
    peer.snapshot = storage_->snapshot_run();
    peer.snapshot_offset = 0;
    send_snapshot_chunk(peer_id, peer, now);
    return;
  }
  const uint64_t last = storage_->last_log_index();
  const bool can_send_data = !peer.inflight || stale;
  const bool have_data = peer.next_index <= last;
  if (!heartbeat && !(can_send_data && have_data)) return;

  AppendEntries ae;
  ae.term = term();
  ae.leader = options_.id;
  ae.prev_index = peer.next_index - 1;
  ae.prev_term = storage_->term_at(ae.prev_index).value_or(0);
  ae.leader_commit = commit_index_;
  ae.seq = hb_seq_;
  if (can_send_data && have_data) {
    size_t bytes = 0;
    for (uint64_t i = peer.next_index; i <= last; ++i) {
      if (ae.entries.size() >= options_.max_entries_per_message) break;
      LogRecord e = entry(i);
      bytes += encoded_size(e);
      ae.entries.push_back(std::move(e));
      if (bytes >= options_.max_bytes_per_message) break;
    }
    peer.inflight = true;
    peer.inflight_last = ae.entries.back().index;
    peer.sent_at = now;
  }
  send(peer_id, std::move(ae));
}

void RaftNode::send_snapshot_chunk(NodeId peer_id, Peer& peer, TimeMs now) {
  const SortedRun& run = *peer.snapshot;
  InstallSnapshot msg;
  msg.term = term();
  msg.leader = options_.id;
  msg.last_index = run.snapshot().last_index;
  msg.last_term = run.snapshot().last_term;
  msg.total_size = run.file_size();
  msg.offset = std::min<uint64_t>(peer.snapshot_offset, msg.total_size);
  const size_t n = static_cast<size_t>(
      std::min<uint64_t>(options_.snapshot_chunk_bytes, msg.total_size - msg.offset));
  msg.data = run.read_bytes(msg.offset, n);
  peer.inflight = true;
  peer.sent_at = now;
  send(peer_id, std::move(msg));
}

void RaftNode::handle(NodeId from, const InstallReply& m, TimeMs now) {
  observe_term(m.term, now);
  if (role_ != Role::kLeader || m.term != term()) return;
  auto it = peers_.find(from);
  if (it == peers_.end()) return;
  Peer& peer = it->second;
  const bool current =
      peer.snapshot && peer.snapshot->snapshot().last_index == m.last_index;
  if (m.installed) {
    peer.match_index = std::max(peer.match_index, m.last_index);
    peer.next_index = std::max(peer.next_index, peer.match_index + 1);
    if (current) {
      peer.snapshot.reset();
      peer.inflight = false;
    }
    advance_commit();
    replicate(from, peer, now, false);
    return;
  }
  if (!current) return;
  peer.snapshot_offset = m.next_offset;
  peer.inflight = false;
  send_snapshot_chunk(from, peer, now);
}

fs::path RaftNode::incoming_path(uint64_t last_index, uint64_t last_term) const {
  return storage_->dir() / ("snapshot-" + std::to_string(last_index) + "-" +
                            std::to_string(last_term) + ".incoming");
}

// A transfer interrupted by a crash resumes from the bytes already on disk.
void RaftNode::load_incoming() {
  std::vector<std::pair<Incoming, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(storage_->dir())) {
    const std::string name = entry.path().filename().string();
    unsigned long long last = 0, lterm = 0;
    if (entry.path().extension() != ".incoming" ||
        std::sscanf(name.c_str(), "snapshot-%llu-%llu.incoming", &last, &lterm) != 2) {
      continue;
    }
    found.push_back({Incoming{last, lterm, fs::file_size(entry.path())}, entry.path()});
  }
  std::sort(found.begin(), found.end(),
            [](const auto& a, const auto& b) { return a.first.last_index > b.first.last_index; });
  for (size_t i = 0; i < found.size(); ++i) {
    if (i == 0 && found[i].first.last_index > commit_index_) {
      incoming_ = found[i].first;
    } else {
      fs::remove(found[i].second);
    }
  }
}

void RaftNode::handle(NodeId from, const InstallSnapshot& m, TimeMs now) {
  if (m.term < term()) {
    send(from, InstallReply{term(), m.last_index, 0, false});
    return;
  }
  observe_term(m.term, now);
  if (role_ == Role::kLeader) return;
  set_role(Role::kFollower, now);
  leader_ = m.leader;
  reset_election_timer(now);

  if (m.last_index <= commit_index_) {
    send(from, InstallReply{term(), m.last_index, m.total_size, true});
    return;
  }
  // Our log already holds the snapshot's last entry, and possibly entries
  // after it that we acknowledged: keep them rather than installing.
  if (m.last_index <= storage_->last_log_index() && storage_->term_at(m.last_index) == m.last_term) {
    if (incoming_) fs::remove(incoming_path(incoming_->last_index, incoming_->last_term));
    incoming_.reset();
    after_sync_.push_back({options_.id, from, InstallReply{term(), m.last_index, m.total_size, true}});
    return;
  }
  if (!incoming_ || incoming_->last_index != m.last_index || incoming_->last_term != m.last_term) {
    if (incoming_) fs::remove(incoming_path(incoming_->last_index, incoming_->last_term));
    incoming_.reset();
    if (m.offset != 0) {
      send(from, InstallReply{term(), m.last_index, 0, false});
      return;
    }
    incoming_ = Incoming{m.last_index, m.last_term, 0};
    File::open_rw(incoming_path(m.last_index, m.last_term), true).truncate(0);
  }
  if (m.offset != incoming_->size) {
    send(from, InstallReply{term(), m.last_index, incoming_->size, false});
    return;
  }
  const fs::path path = incoming_path(m.last_index, m.last_term);
  {
    File f = File::open_rw(path, false);
    f.write_at(m.offset, m.data);
    if (storage_->options().sync_mode == SyncMode::kPhysical) f.sync();
  }
  incoming_->size += m.data.size();
  if (incoming_->size < m.total_size) {
    send(from, InstallReply{term(), m.last_index, incoming_->size, false});
    return;
  }

  auto footer = read_run_footer(path);
  if (!footer || footer->last_index != m.last_index || footer->last_term != m.last_term) {
    fs::remove(path);
    incoming_.reset();
    send(from, InstallReply{term(), m.last_index, 0, false});
    return;
  }
  storage_->install_snapshot(path);
  incoming_.reset();
  cache_.clear();
  cache_bytes_ = 0;
  commit_index_ = std::max(commit_index_, m.last_index);
  last_applied_ = m.last_index;
  durable_index_ = storage_->last_log_index();
  emit(TraceEvent{.kind = TraceKind::kSnapshotInstall, .term = m.last_term, .index = m.last_index});
  send(from, InstallReply{term(), m.last_index, m.total_size, true});
}

void RaftNode::receive(const Envelope& env, TimeMs now) {
  now_ = now;
  std::visit([&](const auto& m) { handle(env.from, m, now); }, env.msg);
}

// ---- client side -----------------------------------------------------------

Proposal RaftNode::propose(std::string key, std::string value, TimeMs now) {
  now_ = now;
  if (role_ != Role::kLeader) {
    throw Error(ErrorCode::kNotLeader, "leader hint " + std::to_string(leader_));
  }
  const uint64_t index = storage_->last_log_index() + 1;
  append_local(LogRecord{term(), index, OpKind::kPut, std::move(key), std::move(value)});
  return Proposal{index, term()};
}

uint64_t RaftNode::begin_read(TimeMs now) {
  now_ = now;
  if (role_ != Role::kLeader) {
    throw Error(ErrorCode::kNotLeader, "leader hint " + std::to_string(leader_));
  }
  PendingRead r{++next_read_id_, 0, std::nullopt};
  if (!peers_.empty()) {
    r.seq = ++hb_seq_;
    confirm_round_due_ = true;
  }
  if (storage_->term_at(commit_index_) == term()) r.read_index = commit_index_;
  reads_.push_back(r);
  return r.id;
}

void RaftNode::advance_commit() {
  std::vector<uint64_t> matches{durable_index_};
  for (const auto& [id, peer] : peers_) matches.push_back(peer.match_index);
  std::sort(matches.begin(), matches.end(), std::greater<>());
  const uint64_t n = matches[majority() - 1];
  if (n > commit_index_ && storage_->term_at(n) == term()) {
    commit_index_ = n;
    emit(TraceEvent{.kind = TraceKind::kCommit, .term = term(), .index = n});
  }
}

void RaftNode::apply_committed(TimeMs now) {
  while (last_applied_ < commit_index_) {
    AppliedRecord rec = storage_->apply(last_applied_ + 1);
    last_applied_ = rec.index;
    emit(TraceEvent{.kind = TraceKind::kApply, .term = rec.term, .index = rec.index, .crc = rec.crc});
    applied_.push_back(std::move(rec));
  }
}

void RaftNode::process_reads() {
  if (role_ != Role::kLeader) {
    fail_reads();
    return;
  }
  const bool committed_in_term = storage_->term_at(commit_index_) == term();
  for (auto it = reads_.begin(); it != reads_.end();) {
    if (!it->read_index && committed_in_term) it->read_index = commit_index_;
    size_t acks = 1;
    for (const auto& [id, peer] : peers_) acks += peer.acked_seq >= it->seq;
    if (it->read_index && acks >= majority() && last_applied_ >= *it->read_index) {
      read_results_.push_back(ReadResult{it->id, true});
      it = reads_.erase(it);
    } else {
      ++it;
    }
  }
}

void RaftNode::fail_reads() {
  for (const auto& r : reads_) read_results_.push_back(ReadResult{r.id, false});
  reads_.clear();
}

void RaftNode::flush(TimeMs now) {
  now_ = now;
  if (dirty_) {
    storage_->sync();
    durable_index_ = storage_->last_log_index();
    dirty_ = false;
  }
  for (auto& env : after_sync_) outbox_.push_back(std::move(env));
  after_sync_.clear();
  if (role_ == Role::kLeader) {
    advance_commit();
    const bool round = confirm_round_due_;
    confirm_round_due_ = false;
    for (auto& [id, peer] : peers_) replicate(id, peer, now, round);
    if (round) next_heartbeat_ = now + options_.heartbeat_interval_ms;
  }
  apply_committed(now);
  process_reads();
}

std::vector<Envelope> RaftNode::take_messages() { return std::exchange(outbox_, {}); }
std::vector<AppliedRecord> RaftNode::take_applied() { return std::exchange(applied_, {}); }
std::vector<ReadResult> RaftNode::take_reads() { return std::exchange(read_results_, {}); }

}  // namespace nezha
