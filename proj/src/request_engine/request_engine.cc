#include "nezha/request_engine.h"

#include <future>

namespace nezha {

namespace {

template <typename F>
auto launch(bool parallel, F&& f) {
  return std::async(parallel ? std::launch::async : std::launch::deferred, std::forward<F>(f));
}

std::optional<RecordLocation> module_location(const StorageModulePtr& m, std::string_view key) {
  if (!m) return std::nullopt;
  return m->index->get_location(key);
}

std::string module_value(const StorageModulePtr& m, const RecordLocation& loc) {
  return m->segment->read_at(loc).value;
}

std::vector<KeyValue> module_scan(const StorageModulePtr& m, std::string_view start,
                                  std::string_view end, size_t limit) {
  std::vector<KeyValue> out;
  if (!m) return out;
  for (auto& e : m->index->range(start, end, limit)) {
    out.emplace_back(std::move(e.key), m->segment->read_at(e.location).value);
  }
  return out;
}

std::vector<KeyValue> run_scan(const SortedRunPtr& run, std::string_view start,
                               std::string_view end, size_t limit) {
  if (!run) return {};
  return run->range_scan_from(start, end, limit);
}

void check_ascending(const std::vector<KeyValue>& v, const char* which) {
  for (size_t i = 1; i < v.size(); ++i) {
    if (!(v[i - 1].first < v[i].first)) {
      throw Error(ErrorCode::kUnsortedInput, std::string(which) + " input not ascending at " +
                                                 std::to_string(i));
    }
  }
}

void truncate_to(std::vector<KeyValue>& v, size_t limit) {
  if (limit != 0 && v.size() > limit) v.resize(limit);
}

}  // namespace

std::vector<KeyValue> merge_results(const std::vector<KeyValue>& newer,
                                    const std::vector<KeyValue>& older) {
  check_ascending(newer, "newer");
  check_ascending(older, "older");
  std::vector<KeyValue> out;
  out.reserve(newer.size() + older.size());
  size_t i = 0, j = 0;
  while (i < newer.size() || j < older.size()) {
    if (j == older.size() || (i < newer.size() && newer[i].first <= older[j].first)) {
      if (j < older.size() && newer[i].first == older[j].first) ++j;
      out.push_back(newer[i++]);
    } else {
      out.push_back(older[j++]);
    }
  }
  return out;
}

std::optional<std::string> view_get(const ReadView& view, std::string_view key,
                                    ReadOptions options, unsigned* consulted) {
  unsigned used = 0;
  std::optional<std::string> result;
  switch (view.phase) {
    case GcPhase::kPreGc: {
      used |= kSourceCurrent;
      if (auto loc = module_location(view.current, key)) {
        result = module_value(view.current, *loc);
      } else if (view.run) {
        used |= kSourceRun;
        result = view.run->point_lookup(key);
      }
      break;
    }
    case GcPhase::kDuringGc: {
      used |= kSourceCurrent | kSourceOld;
      auto old_loc = launch(options.parallel, [&] { return module_location(view.old, key); });
      if (auto loc = module_location(view.current, key)) {
        result = module_value(view.current, *loc);
        old_loc.wait();
        break;
      }
      if (auto loc = old_loc.get()) {
        result = module_value(view.old, *loc);
      } else if (view.run) {
        used |= kSourceRun;
        result = view.run->point_lookup(key);
      }
      break;
    }
    case GcPhase::kPostGc: {
      used |= kSourceCurrent | kSourceRun;
      auto sorted = launch(options.parallel, [&]() -> std::optional<std::string> {
        if (!view.run) return std::nullopt;
        return view.run->point_lookup(key);
      });
      if (auto loc = module_location(view.current, key)) {
        result = module_value(view.current, *loc);
        sorted.wait();
        break;
      }
      result = sorted.get();
      break;
    }
  }
  if (consulted) *consulted = used;
  return result;
}

std::vector<KeyValue> view_scan(const ReadView& view, std::string_view start,
                                std::string_view end, size_t limit, ReadOptions options,
                                unsigned* consulted) {
  if (start > end) throw Error(ErrorCode::kInvalidRange, "scan start > end");
  // Each source is cut at `limit` before merging: the first `limit` keys of
  // the union all lie within the first `limit` keys of some source.
  unsigned used = 0;
  std::vector<KeyValue> out;
  switch (view.phase) {
    case GcPhase::kPreGc: {
      used |= kSourceCurrent;
      if (view.run) {
        used |= kSourceRun;
        auto older = launch(options.parallel, [&] { return run_scan(view.run, start, end, limit); });
        auto newer = module_scan(view.current, start, end, limit);
        out = merge_results(newer, older.get());
      } else {
        out = module_scan(view.current, start, end, limit);
      }
      break;
    }
    case GcPhase::kDuringGc: {
      used |= kSourceCurrent | kSourceOld;
      auto old_part = launch(options.parallel, [&] { return module_scan(view.old, start, end, limit); });
      auto run_part = launch(options.parallel, [&] { return run_scan(view.run, start, end, limit); });
      auto newer = module_scan(view.current, start, end, limit);
      out = merge_results(newer, old_part.get());
      if (view.run) {
        used |= kSourceRun;
        out = merge_results(out, run_part.get());
      } else {
        run_part.wait();
      }
      break;
    }
    case GcPhase::kPostGc: {
      used |= kSourceCurrent | kSourceRun;
      auto sorted = launch(options.parallel, [&] { return run_scan(view.run, start, end, limit); });
      auto newer = module_scan(view.current, start, end, limit);
      out = merge_results(newer, sorted.get());
      break;
    }
  }
  truncate_to(out, limit);
  if (consulted) *consulted = used;
  return out;
}

RequestEngine::RequestEngine(RaftNode* raft, GcController* storage, EngineOptions options)
    : raft_(raft), storage_(storage), options_(options) {}

void RequestEngine::submit(ReplyTo to, ClientRequest request, TimeMs now) {
  if (auto* put = std::get_if<PutOp>(&request.op)) {
    const RequestId id = request.id;
    handle_put(to, id, std::move(*put), now);
  } else if (std::holds_alternative<StatusOp>(request.op)) {
    ClientResponse r;
    r.id = request.id;
    r.status = Status::kError;
    r.value = "status is served by the node host";
    out_.push_back({to, std::move(r)});
  } else {
    handle_read(to, std::move(request), now);
  }
}

void RequestEngine::reply(ReplyTo to, const RequestId& id, Status status) {
  ClientResponse r;
  r.id = id;
  r.status = status;
  out_.push_back({to, std::move(r)});
}

void RequestEngine::reply_not_leader(ReplyTo to, const RequestId& id) {
  ClientResponse r;
  r.id = id;
  r.status = Status::kNotLeader;
  r.leader_hint = raft_->is_leader() ? raft_->id() : raft_->leader_hint();
  out_.push_back({to, std::move(r)});
}

void RequestEngine::handle_put(ReplyTo to, const RequestId& id, PutOp op, TimeMs now) {
  if (!raft_->is_leader()) {
    reply_not_leader(to, id);
    return;
  }
  const bool tracked = id != RequestId{};
  if (tracked) {
    auto it = dedup_.find(id);
    if (it != dedup_.end()) {
      if (it->second.outcome) {
        ++stats_.dedup_hits;
        if (*it->second.outcome == Status::kOk) {
          reply(to, id, Status::kOk);
        } else {
          reply_not_leader(to, id);
        }
        return;
      }
      if (it->second.index) {
        auto p = puts_.find(*it->second.index);
        if (p != puts_.end() && p->second.id == id) {
          ++stats_.dedup_hits;
          p->second.waiters.push_back({to, now + options_.consensus_timeout_ms});
          return;
        }
      }
      // Earlier attempt is undetermined and no longer tracked: propose again.
    }
  }
  Proposal p;
  try {
    p = raft_->propose(std::move(op.key), std::move(op.value), now);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNotLeader) {
      reply_not_leader(to, id);
      return;
    }
    ClientResponse r;
    r.id = id;
    r.status = Status::kError;
    r.value = e.what();
    out_.push_back({to, std::move(r)});
    return;
  }
  puts_[p.index] = PendingPut{id, p.term, {{to, now + options_.consensus_timeout_ms}}};
  if (tracked) {
    const bool fresh = dedup_.find(id) == dedup_.end();
    dedup_[id] = DedupEntry{p.index, std::nullopt};
    if (fresh) remember(id);
  }
}

void RequestEngine::handle_read(ReplyTo to, ClientRequest request, TimeMs now) {
  if (const auto* scan = std::get_if<ScanOp>(&request.op); scan && scan->start > scan->end) {
    ClientResponse r;
    r.id = request.id;
    r.status = Status::kError;
    r.value = "InvalidRange: scan start > end";
    out_.push_back({to, std::move(r)});
    return;
  }
  if (!raft_->is_leader()) {
    reply_not_leader(to, request.id);
    return;
  }
  uint64_t read_id;
  try {
    read_id = raft_->begin_read(now);
  } catch (const Error& e) {
    reply_not_leader(to, request.id);
    return;
  }
  reads_[read_id] = PendingRead{to, std::move(request), now + options_.consensus_timeout_ms};
}

void RequestEngine::serve_read(const PendingRead& read) {
  ClientResponse r;
  r.id = read.request.id;
  try {
    const ReadView view = storage_->pin();
    if (const auto* get = std::get_if<GetOp>(&read.request.op)) {
      auto v = view_get(view, get->key, options_.read);
      if (v) {
        r.status = Status::kValue;
        r.value = std::move(*v);
      } else {
        r.status = Status::kNotFound;
      }
    } else {
      const auto& scan = std::get<ScanOp>(read.request.op);
      r.status = Status::kEntries;
      r.entries = view_scan(view, scan.start, scan.end, scan.limit, options_.read);
    }
  } catch (const Error& e) {
    r.status = Status::kError;
    r.value = e.what();
  }
  ++stats_.reads;
  out_.push_back({read.to, std::move(r)});
}

void RequestEngine::resolve_put(uint64_t index, Status status) {
  auto it = puts_.find(index);
  if (it == puts_.end()) return;
  PendingPut put = std::move(it->second);
  puts_.erase(it);
  if (auto d = dedup_.find(put.id); d != dedup_.end() && d->second.index == index) {
    d->second.index.reset();
    d->second.outcome = status;
  }
  if (status == Status::kOk) {
    ++stats_.puts_ok;
  } else {
    ++stats_.puts_failed;
  }
  for (const auto& w : put.waiters) {
    if (status == Status::kOk) {
      reply(w.to, put.id, Status::kOk);
    } else {
      reply_not_leader(w.to, put.id);
    }
  }
}

void RequestEngine::poll(TimeMs now) { poll(now, raft_->take_applied()); }

void RequestEngine::poll(TimeMs now, const std::vector<AppliedRecord>& applied_records) {
  for (const auto& rec : applied_records) {
    auto it = puts_.find(rec.index);
    if (it == puts_.end()) continue;
    // A different term at our index means another leader's entry replaced
    // ours: the put definitely did not happen.
    resolve_put(rec.index, rec.term == it->second.term ? Status::kOk : Status::kNotLeader);
  }

  for (const auto& r : raft_->take_reads()) {
    auto it = reads_.find(r.id);
    if (it == reads_.end()) continue;
    if (r.ok) {
      serve_read(it->second);
    } else {
      reply_not_leader(it->second.to, it->second.request.id);
    }
    reads_.erase(it);
  }

  const uint64_t applied = raft_->last_applied();
  for (auto it = puts_.begin(); it != puts_.end();) {
    auto& waiters = it->second.waiters;
    for (auto w = waiters.begin(); w != waiters.end();) {
      if (w->deadline <= now) {
        ++stats_.timeouts;
        reply(w->to, it->second.id, Status::kTimeout);
        w = waiters.erase(w);
      } else {
        ++w;
      }
    }
    // Applied past it without our seeing the entry (snapshot install): the
    // outcome can no longer be learned here.
    if (waiters.empty() && it->first <= applied) {
      it = puts_.erase(it);
    } else {
      ++it;
    }
  }

  for (auto it = reads_.begin(); it != reads_.end();) {
    if (it->second.deadline <= now) {
      ++stats_.timeouts;
      reply(it->second.to, it->second.request.id, Status::kTimeout);
      it = reads_.erase(it);
    } else {
      ++it;
    }
  }
}

void RequestEngine::remember(const RequestId& id) {
  dedup_order_.push_back(id);
  while (dedup_order_.size() > options_.dedup_window) {
    dedup_.erase(dedup_order_.front());
    dedup_order_.pop_front();
  }
}

std::vector<OutgoingResponse> RequestEngine::take_responses() {
  std::vector<OutgoingResponse> out;
  out.swap(out_);
  return out;
}

}  // namespace nezha
