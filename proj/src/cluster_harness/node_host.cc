#include "nezha/node_host.h"

#include <json.hpp>

namespace nezha {

NodeHost::NodeHost(NodeHostOptions options, IoCounters* counters, TimeMs now, TraceSink* trace,
                   CrashHook hook)
    : options_(std::move(options)), counters_(counters), trace_(trace) {
  storage_ = std::make_unique<GcController>(options_.dir, options_.storage, counters_, std::move(hook));
  RaftOptions ro = options_.raft;
  ro.id = options_.id;
  ro.members = options_.members;
  raft_ = std::make_unique<RaftNode>(ro, storage_.get(), now, trace_);
  engine_ = std::make_unique<RequestEngine>(raft_.get(), storage_.get(), options_.engine);
  last_phase_ = storage_->phase();
  last_checkpoint_ = storage_->applied_floor();
  rate_window_start_ = now;
}

void NodeHost::tick(TimeMs now) { raft_->tick(now); }

void NodeHost::receive(const Envelope& env, TimeMs now) { raft_->receive(env, now); }

void NodeHost::submit(ReplyTo to, ClientRequest request, TimeMs now) {
  if (std::holds_alternative<StatusOp>(request.op)) {
    ClientResponse r;
    r.id = request.id;
    r.status = Status::kValue;
    r.value = status_json();
    extra_.push_back({to, std::move(r)});
    return;
  }
  engine_->submit(to, std::move(request), now);
}

void NodeHost::step(TimeMs now) {
  raft_->flush(now);
  auto applied = raft_->take_applied();
  if (observer_ && !applied.empty()) {
    observer_->on_applied(applied, *storage_);
    observer_->sync();
  }
  applied_since_rate_ += applied.size();
  if (now - rate_window_start_ >= 1000) {
    load_ = applied_since_rate_ * 1000.0 / static_cast<double>(now - rate_window_start_);
    applied_since_rate_ = 0;
    rate_window_start_ = now;
  }
  engine_->poll(now, applied);

  storage_->gc_tick(now, raft_->last_applied(), load_);
  if (options_.checkpoint_interval != 0 && storage_->phase() == GcPhase::kPreGc &&
      raft_->last_applied() >= last_checkpoint_ + options_.checkpoint_interval) {
    storage_->checkpoint(raft_->last_applied());
    last_checkpoint_ = raft_->last_applied();
  }
  const GcPhase phase = storage_->phase();
  if (phase != last_phase_) {
    last_phase_ = phase;
    transitions_.emplace_back(now, phase);
    if (transitions_.size() > 16) transitions_.pop_front();
    if (trace_) {
      trace_->record(TraceEvent{.time = now,
                                .node = options_.id,
                                .kind = TraceKind::kGcPhase,
                                .index = storage_->flags().seal_index,
                                .aux = static_cast<uint64_t>(phase)});
    }
  }
}

std::vector<OutgoingResponse> NodeHost::take_responses() {
  auto out = engine_->take_responses();
  for (auto& r : extra_) out.push_back(std::move(r));
  extra_.clear();
  return out;
}

std::string NodeHost::status_json() const {
  const RaftStatus s = raft_->status();
  const IoCountersSnapshot c = counters_->snapshot();
  const GcStats& g = storage_->gc_stats();
  nlohmann::json transitions = nlohmann::json::array();
  for (const auto& [t, p] : transitions_) transitions.push_back({{"time_ms", t}, {"phase", gc_phase_name(p)}});
  nlohmann::json j = {
      {"id", s.id},
      {"role", role_name(s.role)},
      {"term", s.term},
      {"leader", s.leader},
      {"commit_index", s.commit_index},
      {"last_applied", s.last_applied},
      {"first_log_index", s.first_log_index},
      {"last_log_index", s.last_log_index},
      {"snapshot_index", s.snapshot_index},
      {"gc_phase", gc_phase_name(storage_->phase())},
      {"gc_transitions", transitions},
      {"gc_cycles", g.cycles_completed},
      {"gc_last_during_ms", g.last_during_ms},
      {"gc_last_post_ms", g.last_post_ms},
      {"counters",
       {{"value_bytes_valuelog", c.value_bytes_valuelog},
        {"value_bytes_wal_emulated", c.value_bytes_wal_emulated},
        {"value_bytes_flush_emulated", c.value_bytes_flush_emulated},
        {"value_bytes_compaction_emulated", c.value_bytes_compaction_emulated},
        {"index_bytes", c.index_bytes},
        {"run_bytes_written", c.run_bytes_written},
        {"fsync_count", c.fsync_count},
        {"replay_bytes", c.replay_bytes},
        {"run_index_bytes", c.run_index_bytes}}},
  };
  return j.dump();
}

std::map<std::string, std::string> NodeHost::state() const {
  std::map<std::string, std::string> out;
  const ReadView view = storage_->pin();
  for (auto& [k, v] : view_scan(view, std::string_view(), std::string(kMaxKeySize, '\xff'), 0)) {
    out.emplace(std::move(k), std::move(v));
  }
  return out;
}

}  // namespace nezha
