#include "nezha/experiments.h"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <json.hpp>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "nezha/local_cluster.h"

namespace nezha {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

uint64_t value_bytes_total(const IoCountersSnapshot& c) {
  return c.value_bytes_valuelog + c.value_bytes_wal_emulated + c.value_bytes_flush_emulated +
         c.value_bytes_compaction_emulated;
}

// Waits until every node applied the leader's whole log.
void settle(LocalCluster& cluster, TimeMs timeout_ms) {
  const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    uint64_t lo = UINT64_MAX, hi = 0;
    for (NodeId id = 1; id <= cluster.size(); ++id) {
      cluster.node(id).with_host([&](NodeHost& h) {
        lo = std::min(lo, h.raft().last_applied());
        hi = std::max(hi, h.storage().last_log_index());
      });
    }
    if (lo == hi) return;
    if (Clock::now() >= deadline) throw Error(ErrorCode::kClusterUnavailable,
                  "nodes did not catch up: applied " + std::to_string(lo) + " of " + std::to_string(hi));
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

double scan_throughput(const std::vector<std::string>& addresses, uint64_t loaded, const WorkloadSpec& spec,
                       uint64_t ops, uint32_t length) {
  KvClientOptions o;
  o.addresses = addresses;
  o.seed = spec.seed + 77;
  KvClient client(o);
  std::mt19937_64 rng(spec.seed + 78);
  const std::string end(spec.key_size, '\xff');
  const auto t0 = Clock::now();
  for (uint64_t i = 0; i < ops; ++i) {
    const auto r = client.scan(workload_key(rng() % loaded, spec.key_size), end, length);
    if (r.status != Status::kEntries) {
      throw Error(ErrorCode::kClusterUnavailable, std::string("scan failed: ") + status_name(r.status));
    }
  }
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  return s > 0 ? static_cast<double>(ops) / s : 0;
}

// Drops the node's files from the page cache so reads go to the device.
void evict_page_cache(const fs::path& dir) {
  std::error_code ec;
  for (const auto& e : fs::recursive_directory_iterator(dir, ec)) {
    if (!e.is_regular_file(ec)) continue;
    const int fd = ::open(e.path().c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) continue;
    ::fdatasync(fd);
    ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
    ::close(fd);
  }
}

// Batches keep the node's loop responsive between them. With cold_cache
// every scan starts with the node's files evicted, which stands in for a
// data set larger than memory.
double storage_scan_throughput(LocalCluster& cluster, uint64_t loaded, const WorkloadSpec& spec, uint64_t ops,
                               uint32_t length, bool cold_cache) {
  const NodeId leader = cluster.wait_leader();
  std::mt19937_64 rng(spec.seed + 79);
  const std::string end(spec.key_size, '\xff');
  double seconds = 0;
  for (uint64_t done = 0; done < ops;) {
    const uint64_t batch = std::min<uint64_t>(10, ops - done);
    cluster.node(leader).with_host([&](NodeHost& h) {
      for (uint64_t i = 0; i < batch; ++i) {
        if (cold_cache) evict_page_cache(h.storage().dir());
        const auto t0 = Clock::now();
        const ReadView view = h.storage().pin();
        view_scan(view, workload_key(rng() % loaded, spec.key_size), end, length);
        seconds += std::chrono::duration<double>(Clock::now() - t0).count();
      }
    });
    done += batch;
  }
  return seconds > 0 ? static_cast<double>(ops) / seconds : 0;
}

void force_gc_cycle(LocalCluster& cluster, TimeMs timeout_ms) {
  std::vector<uint64_t> before(cluster.size() + 1);
  for (NodeId id = 1; id <= cluster.size(); ++id) {
    cluster.node(id).with_host([&](NodeHost& h) {
      before[id] = h.storage().gc_stats().cycles_completed;
      if (h.storage().phase() == GcPhase::kPreGc) h.storage().begin_gc(NodeDaemon::clock_ms());
    });
  }
  const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    bool done = true;
    for (NodeId id = 1; id <= cluster.size(); ++id) {
      cluster.node(id).with_host([&](NodeHost& h) {
        done = done && h.storage().phase() == GcPhase::kPreGc && h.storage().gc_stats().cycles_completed > before[id];
      });
    }
    if (done) return;
    if (Clock::now() >= deadline) throw Error(ErrorCode::kClusterUnavailable, "gc cycle did not finish");
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

ModeResult run_mode(NodeMode mode, const WorkloadSpec& spec, const CompareOptions& options) {
  LocalClusterOptions lo;
  lo.nodes = options.nodes;
  lo.dir = options.dir / node_mode_name(mode);
  fs::remove_all(lo.dir);
  lo.base = options.base;
  lo.base.mode = mode;
  lo.base.gc_enabled = false;
  LocalCluster cluster(lo);
  cluster.wait_leader();

  ModeResult r;
  r.mode = mode;
  r.report = run_workload(spec, cluster.addresses());
  settle(cluster, options.settle_timeout_ms);
  for (NodeId id = 1; id <= cluster.size(); ++id) {
    cluster.node(id).flush_baseline();
    r.counters.push_back(cluster.node(id).counters().snapshot());
    r.value_bytes_written += value_bytes_total(r.counters.back());
  }
  uint64_t puts = 0;
  double latency_sum = 0;
  for (const char* name : {"insert", "update"}) {
    auto it = r.report.latency.find(name);
    if (it == r.report.latency.end()) continue;
    puts += it->second.count;
    latency_sum += it->second.mean_ms * static_cast<double>(it->second.count);
  }
  r.put_throughput_ops = r.report.duration_s > 0 ? static_cast<double>(puts) / r.report.duration_s : 0;
  r.put_mean_latency_ms = puts > 0 ? latency_sum / static_cast<double>(puts) : 0;

  if (options.measure_scans && mode == NodeMode::kNezha) {
    const uint64_t loaded = spec.kind == WorkloadKind::kLoad ? spec.op_count : spec.key_count;
    r.scan_pre_gc_ops = scan_throughput(cluster.addresses(), loaded, spec, options.scan_ops, options.scan_length);
    r.storage_scan_pre_gc_ops = storage_scan_throughput(cluster, loaded, spec, options.scan_ops, options.scan_length,
                                                          options.cold_cache_scans);
    force_gc_cycle(cluster, options.settle_timeout_ms);
    r.scan_post_gc_ops = scan_throughput(cluster.addresses(), loaded, spec, options.scan_ops, options.scan_length);
    r.storage_scan_post_gc_ops = storage_scan_throughput(cluster, loaded, spec, options.scan_ops, options.scan_length,
                                                          options.cold_cache_scans);
  }
  r.report.nodes = collect_node_metrics(cluster.addresses());
  return r;
}

json mode_json(const ModeResult& r) {
  json counters = json::array();
  for (const auto& c : r.counters) {
    counters.push_back({{"value_bytes_valuelog", c.value_bytes_valuelog},
                        {"value_bytes_wal_emulated", c.value_bytes_wal_emulated},
                        {"value_bytes_flush_emulated", c.value_bytes_flush_emulated},
                        {"value_bytes_compaction_emulated", c.value_bytes_compaction_emulated},
                        {"fsync_count", c.fsync_count}});
  }
  return {{"mode", node_mode_name(r.mode)},
          {"value_bytes_written", r.value_bytes_written},
          {"put_throughput_ops", r.put_throughput_ops},
          {"put_mean_latency_ms", r.put_mean_latency_ms},
          {"scan_pre_gc_ops", r.scan_pre_gc_ops},
          {"scan_post_gc_ops", r.scan_post_gc_ops},
          {"storage_scan_pre_gc_ops", r.storage_scan_pre_gc_ops},
          {"storage_scan_post_gc_ops", r.storage_scan_post_gc_ops},
          {"counters", counters},
          {"report", json::parse(r.report.to_json())}};
}

}  // namespace

std::string ComparisonReport::to_json() const {
  return json{{"type", "comparison"},
              {"amplification_ratio", amplification_ratio},
              {"throughput_ratio", throughput_ratio},
              {"latency_ratio", latency_ratio},
              {"cold_cache_scans", cold_cache_scans},
              {"nezha", mode_json(nezha)},
              {"baseline", mode_json(baseline)}}
      .dump();
}

std::string ComparisonReport::summary() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "value bytes written: nezha " << nezha.value_bytes_written << ", baseline " << baseline.value_bytes_written
      << " (ratio " << amplification_ratio << ")\n";
  out << "put throughput: nezha " << nezha.put_throughput_ops << " ops/s, baseline " << baseline.put_throughput_ops
      << " ops/s (ratio " << throughput_ratio << ")\n";
  out << "put mean latency: nezha " << nezha.put_mean_latency_ms << " ms, baseline " << baseline.put_mean_latency_ms
      << " ms (ratio " << latency_ratio << ")\n";
  if (nezha.scan_pre_gc_ops > 0) {
    out << "scan throughput (nezha): before gc " << nezha.scan_pre_gc_ops << " ops/s, after gc "
        << nezha.scan_post_gc_ops << " ops/s\n";
    out << "scan throughput (nezha, leader storage, " << (cold_cache_scans ? "cold" : "warm") << " cache): before gc " << nezha.storage_scan_pre_gc_ops
        << " ops/s, after gc " << nezha.storage_scan_post_gc_ops << " ops/s\n";
  }
  return out.str();
}

ComparisonReport compare_modes(const WorkloadSpec& spec, const CompareOptions& options) {
  spec.validate();
  ComparisonReport c;
  c.cold_cache_scans = options.cold_cache_scans;
  c.nezha = run_mode(NodeMode::kNezha, spec, options);
  c.baseline = run_mode(NodeMode::kBaseline, spec, options);
  if (c.nezha.value_bytes_written > 0) {
    c.amplification_ratio =
        static_cast<double>(c.baseline.value_bytes_written) / static_cast<double>(c.nezha.value_bytes_written);
  }
  if (c.baseline.put_throughput_ops > 0) c.throughput_ratio = c.nezha.put_throughput_ops / c.baseline.put_throughput_ops;
  if (c.nezha.put_mean_latency_ms > 0) c.latency_ratio = c.baseline.put_mean_latency_ms / c.nezha.put_mean_latency_ms;
  return c;
}

const char* kill_phase_name(KillPhase phase) {
  switch (phase) {
    case KillPhase::kPreGc: return "pre";
    case KillPhase::kDuringGc: return "during";
    case KillPhase::kPostGc: return "post";
  }
  return "?";
}

KillPhase parse_kill_phase(std::string_view text) {
  if (text == "pre" || text == "pre_gc") return KillPhase::kPreGc;
  if (text == "during" || text == "during_gc") return KillPhase::kDuringGc;
  if (text == "post" || text == "post_gc") return KillPhase::kPostGc;
  throw Error(ErrorCode::kInvalidArgument, "phase must be pre, during or post");
}

std::string RecoveryReport::to_json() const {
  return json{{"type", "recovery"},
              {"phase", kill_phase_name(phase)},
              {"recovery_ms", recovery_ms},
              {"replay_bytes", replay_bytes},
              {"run_index_bytes", run_index_bytes},
              {"active_segment_bytes", active_segment_bytes},
              {"keys", keys},
              {"gc_resumed", gc_resumed}}
      .dump();
}

namespace {

// One member, driven on a virtual clock so elections cost no wall time.
class SoloDriver {
 public:
  SoloDriver(const RecoveryOptions& o, IoCounters* counters) : rng_(o.seed) {
    NodeHostOptions h;
    h.id = 1;
    h.members = {1};
    h.dir = o.dir;
    h.storage.sync_mode = o.sync_mode;
    h.storage.run.sync_mode = o.sync_mode;
    h.storage.gc_enabled = false;
    h.storage.trigger.size_threshold_bytes = UINT64_MAX;
    h.storage.compaction_batch = o.compaction_batch;
    h.raft.seed = o.seed;
    host_ = std::make_unique<NodeHost>(h, counters, now_);
  }

  NodeHost& host() { return *host_; }
  TimeMs now() const { return now_; }

  void pump() {
    now_ += 5;
    host_->tick(now_);
    host_->step(now_);
    host_->take_messages();
    for (auto& out : host_->take_responses()) responses_[out.to] = std::move(out.response);
  }

  void wait_leader() {
    for (int i = 0; i < 10'000 && !host_->raft().is_leader(); ++i) pump();
    if (!host_->raft().is_leader()) throw Error(ErrorCode::kClusterUnavailable, "single node did not elect itself");
  }

  std::vector<ClientResponse> run(std::vector<ClientOp> ops) {
    std::vector<ReplyTo> tos;
    for (auto& op : ops) {
      RequestId id;
      for (auto& b : id) b = static_cast<uint8_t>(rng_());
      tos.push_back(++next_to_);
      host_->submit(tos.back(), ClientRequest{id, std::move(op)}, now_);
    }
    auto answered = [&] {
      for (ReplyTo t : tos) {
        if (!responses_.count(t)) return false;
      }
      return true;
    };
    for (int i = 0; i < 10'000 && !answered(); ++i) pump();
    std::vector<ClientResponse> out;
    for (ReplyTo t : tos) {
      auto it = responses_.find(t);
      if (it == responses_.end()) throw Error(ErrorCode::kClusterUnavailable, "request never answered");
      out.push_back(std::move(it->second));
      responses_.erase(it);
    }
    return out;
  }

 private:
  std::unique_ptr<NodeHost> host_;
  TimeMs now_ = 1;
  ReplyTo next_to_ = 0;
  std::map<ReplyTo, ClientResponse> responses_;
  std::mt19937_64 rng_;
};

void put_batch(SoloDriver& d, std::mt19937_64& rng, const RecoveryOptions& o, uint64_t n,
               std::map<std::string, std::string>& shadow) {
  std::vector<ClientOp> ops;
  std::vector<std::pair<std::string, std::string>> kv;
  for (uint64_t i = 0; i < n; ++i) {
    std::string key = workload_key(rng() % o.key_count, 10);
    std::string value(o.value_size, '\0');
    for (auto& c : value) c = static_cast<char>('a' + rng() % 26);
    kv.emplace_back(key, value);
    ops.push_back(PutOp{std::move(key), std::move(value)});
  }
  const auto responses = d.run(std::move(ops));
  for (size_t i = 0; i < responses.size(); ++i) {
    if (responses[i].status != Status::kOk) {
      throw Error(ErrorCode::kIntegrityFailure, std::string("put failed: ") + status_name(responses[i].status));
    }
    shadow[kv[i].first] = kv[i].second;
  }
}

void populate(SoloDriver& d, std::mt19937_64& rng, const RecoveryOptions& o, uint64_t n,
              std::map<std::string, std::string>& shadow) {
  for (uint64_t done = 0; done < n;) {
    const uint64_t batch = std::min<uint64_t>(32, n - done);
    put_batch(d, rng, o, batch, shadow);
    done += batch;
  }
}

}  // namespace

RecoveryReport measure_recovery(KillPhase phase, const RecoveryOptions& options) {
  if (options.records == 0 || options.key_count == 0) {
    throw Error(ErrorCode::kInvalidArgument, "recovery needs records");
  }
  fs::remove_all(options.dir);
  fs::create_directories(options.dir);
  RecoveryReport report;
  report.phase = phase;
  std::map<std::string, std::string> shadow;
  std::mt19937_64 rng(options.seed);
  {
    IoCounters counters;
    SoloDriver d(options, &counters);
    d.wait_leader();
    populate(d, rng, options, options.records, shadow);
    switch (phase) {
      case KillPhase::kPreGc:
        break;
      case KillPhase::kDuringGc:
        d.host().storage().begin_gc(d.now());
        for (int i = 0; i < 3; ++i) d.pump();
        put_batch(d, rng, options, std::min<uint64_t>(options.extra_records, 32), shadow);
        if (d.host().storage().phase() != GcPhase::kDuringGc) {
          throw Error(ErrorCode::kInvalidArgument, "gc finished before the kill; use more records");
        }
        break;
      case KillPhase::kPostGc: {
        d.host().storage().begin_gc(d.now());
        for (int i = 0; i < 100'000 && (d.host().storage().phase() != GcPhase::kPreGc ||
                                        d.host().storage().gc_stats().cycles_completed == 0);
             ++i) {
          d.pump();
        }
        if (d.host().storage().phase() != GcPhase::kPreGc) {
          throw Error(ErrorCode::kIntegrityFailure, "gc cycle did not complete");
        }
        populate(d, rng, options, options.extra_records, shadow);
        break;
      }
    }
    report.active_segment_bytes = d.host().storage().active_bytes();
    // Dropped here without syncing or stopping anything.
  }

  IoCounters counters;
  const auto t0 = Clock::now();
  SoloDriver d(options, &counters);
  d.wait_leader();
  const std::string probe = shadow.begin()->first;
  const auto first = d.run({GetOp{probe}});
  report.recovery_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  report.replay_bytes = counters.replay_bytes.load();
  report.run_index_bytes = counters.run_index_bytes.load();
  if (first[0].status != Status::kValue || first[0].value != shadow[probe]) {
    throw Error(ErrorCode::kIntegrityFailure, "first read after restart disagrees for " + probe);
  }
  if (phase == KillPhase::kDuringGc) {
    for (int i = 0; i < 100'000 && d.host().storage().phase() != GcPhase::kPreGc; ++i) d.pump();
    report.gc_resumed = d.host().storage().phase() == GcPhase::kPreGc && d.host().storage().snapshot().last_index > 0;
    if (!report.gc_resumed) throw Error(ErrorCode::kIntegrityFailure, "interrupted gc did not complete");
  }
  const auto state = d.host().state();
  if (state != shadow) {
    size_t diff = 0;
    for (const auto& [k, v] : shadow) {
      auto it = state.find(k);
      if (it == state.end() || it->second != v) ++diff;
    }
    throw Error(ErrorCode::kIntegrityFailure, "state differs from the acknowledged puts on " + std::to_string(diff) +
                                                  " of " + std::to_string(shadow.size()) + " keys (" +
                                                  std::to_string(state.size()) + " present)");
  }
  report.keys = shadow.size();
  return report;
}

}  // namespace nezha
