#include "nezha/workload.h"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

namespace nezha {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

const char* workload_kind_name(WorkloadKind kind) {
  switch (kind) {
    case WorkloadKind::kLoad: return "load";
    case WorkloadKind::kA: return "a";
    case WorkloadKind::kB: return "b";
    case WorkloadKind::kC: return "c";
    case WorkloadKind::kD: return "d";
    case WorkloadKind::kE: return "e";
    case WorkloadKind::kF: return "f";
  }
  return "?";
}

WorkloadKind parse_workload_kind(std::string_view text) {
  for (auto k : {WorkloadKind::kLoad, WorkloadKind::kA, WorkloadKind::kB, WorkloadKind::kC, WorkloadKind::kD,
                 WorkloadKind::kE, WorkloadKind::kF}) {
    if (text == workload_kind_name(k)) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "workload must be one of load, a, b, c, d, e, f");
}

const char* op_type_name(OpType type) {
  switch (type) {
    case OpType::kInsert: return "insert";
    case OpType::kUpdate: return "update";
    case OpType::kRead: return "read";
    case OpType::kScan: return "scan";
    case OpType::kRmw: return "rmw";
  }
  return "?";
}

OpMix workload_mix(WorkloadKind kind) {
  switch (kind) {
    case WorkloadKind::kLoad: return {.insert = 1};
    case WorkloadKind::kA: return {.update = 0.5, .read = 0.5};
    case WorkloadKind::kB: return {.update = 0.05, .read = 0.95};
    case WorkloadKind::kC: return {.read = 1};
    case WorkloadKind::kD: return {.insert = 0.05, .read = 0.95};
    case WorkloadKind::kE: return {.insert = 0.05, .scan = 0.95};
    case WorkloadKind::kF: return {.read = 0.5, .rmw = 0.5};
  }
  return {};
}

void WorkloadSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (key_count == 0) fail("key count must be at least 1");
  if (key_size < 2 || key_size > kMaxKeySize) fail("key size must be in [2, " + std::to_string(kMaxKeySize) + "]");
  if (std::to_string(key_count + op_count).size() > key_size - 1) fail("key size too small for the key space");
  if (value_size == 0) fail("value size must be positive");
  if (zipf_exponent < 0) fail("zipf exponent must be >= 0");
  if (scan_length == 0) fail("scan length must be positive");
  if (concurrency == 0) fail("concurrency must be positive");
}

std::string workload_key(uint64_t id, size_t key_size) {
  std::string digits = std::to_string(id);
  if (digits.size() < key_size - 1) digits.insert(0, key_size - 1 - digits.size(), '0');
  std::reverse(digits.begin(), digits.end());
  return "k" + digits;
}

namespace {

double log1p_over_x(double x) {
  if (std::abs(x) > 1e-8) return std::log1p(x) / x;
  return 1 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x));
}

double expm1_over_x(double x) {
  if (std::abs(x) > 1e-8) return std::expm1(x) / x;
  return 1 + x * 0.5 * (1 + x / 3.0 * (1 + 0.25 * x));
}

}  // namespace

Zipf::Zipf(uint64_t n, double exponent) : n_(n), exponent_(exponent) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "zipf needs at least one rank");
  if (exponent < 0) throw Error(ErrorCode::kInvalidArgument, "zipf exponent must be >= 0");
  h_integral_x1_ = h_integral(1.5) - 1;
  h_integral_n_ = h_integral(static_cast<double>(n) + 0.5);
  s_ = 2 - h_integral_inverse(h_integral(2.5) - h(2));
}

double Zipf::h(double x) const { return std::exp(-exponent_ * std::log(x)); }

double Zipf::h_integral(double x) const {
  const double log_x = std::log(x);
  return expm1_over_x((1 - exponent_) * log_x) * log_x;
}

double Zipf::h_integral_inverse(double x) const {
  double t = x * (1 - exponent_);
  if (t < -1) t = -1;
  return std::exp(log1p_over_x(t) * x);
}

uint64_t Zipf::next(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (;;) {
    const double u = h_integral_n_ + uniform(rng) * (h_integral_x1_ - h_integral_n_);
    const double x = h_integral_inverse(u);
    uint64_t k = static_cast<uint64_t>(x + 0.5);
    k = std::clamp<uint64_t>(k, 1, n_);
    if (static_cast<double>(k) - x <= s_ || u >= h_integral(static_cast<double>(k) + 0.5) - h(static_cast<double>(k))) {
      return k;
    }
  }
}

uint64_t zipf_next(std::mt19937_64& rng, uint64_t key_count, double exponent) {
  return Zipf(key_count, exponent).next(rng);
}

WorkloadGenerator::WorkloadGenerator(const WorkloadSpec& spec, uint64_t stream,
                                     std::shared_ptr<std::atomic<uint64_t>> cursor)
    : spec_(spec),
      mix_(workload_mix(spec.kind)),
      rng_(spec.seed * 0x9e3779b97f4a7c15ull + stream + 1),
      zipf_(spec.key_count, spec.zipf_exponent),
      cursor_(std::move(cursor)) {}

OpType WorkloadGenerator::draw_type() {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  const std::pair<OpType, double> table[] = {{OpType::kInsert, mix_.insert},
                                             {OpType::kUpdate, mix_.update},
                                             {OpType::kRead, mix_.read},
                                             {OpType::kScan, mix_.scan},
                                             {OpType::kRmw, mix_.rmw}};
  OpType last = OpType::kRead;
  for (const auto& [type, p] : table) {
    if (p <= 0) continue;
    last = type;
    if (u < p) return type;
    u -= p;
  }
  return last;
}

std::string WorkloadGenerator::value() {
  std::string v(spec_.value_size, '\0');
  for (size_t i = 0; i < v.size(); i += 8) {
    const uint64_t r = rng_();
    std::memcpy(v.data() + i, &r, std::min<size_t>(8, v.size() - i));
  }
  return v;
}

PlannedOp WorkloadGenerator::next() {
  const OpType type = draw_type();
  PlannedOp op{type, {}};
  auto existing = [&] { return workload_key(zipf_.next(rng_) - 1, spec_.key_size); };
  switch (type) {
    case OpType::kInsert:
      op.steps.push_back(PutOp{workload_key(cursor_->fetch_add(1), spec_.key_size), value()});
      break;
    case OpType::kUpdate:
      op.steps.push_back(PutOp{existing(), value()});
      break;
    case OpType::kRead:
      op.steps.push_back(GetOp{existing()});
      break;
    case OpType::kScan:
      op.steps.push_back(ScanOp{existing(), std::string(spec_.key_size, '\xff'), spec_.scan_length});
      break;
    case OpType::kRmw: {
      std::string key = existing();
      op.steps.push_back(GetOp{key});
      op.steps.push_back(PutOp{std::move(key), value()});
      break;
    }
  }
  return op;
}

LatencyStats summarize_latencies(std::vector<double> samples) {
  LatencyStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  double sum = 0;
  for (double x : samples) sum += x;
  s.mean_ms = sum / static_cast<double>(samples.size());
  auto pct = [&](double p) {
    const size_t rank = static_cast<size_t>(std::ceil(p * static_cast<double>(samples.size())));
    return samples[std::clamp<size_t>(rank, 1, samples.size()) - 1];
  };
  s.p50_ms = pct(0.50);
  s.p99_ms = pct(0.99);
  return s;
}

NodeMetrics parse_node_status(const std::string& text) {
  NodeMetrics m;
  const json j = json::parse(text);
  m.reachable = true;
  m.id = j.value("id", NodeId{0});
  m.role = j.value("role", std::string());
  m.gc_cycles = j.value("gc_cycles", uint64_t{0});
  m.gc_last_during_ms = j.value("gc_last_during_ms", TimeMs{0});
  m.gc_last_post_ms = j.value("gc_last_post_ms", TimeMs{0});
  if (j.contains("counters")) {
    const json& c = j["counters"];
    IoCountersSnapshot& s = m.counters;
    s.value_bytes_valuelog = c.value("value_bytes_valuelog", uint64_t{0});
    s.value_bytes_wal_emulated = c.value("value_bytes_wal_emulated", uint64_t{0});
    s.value_bytes_flush_emulated = c.value("value_bytes_flush_emulated", uint64_t{0});
    s.value_bytes_compaction_emulated = c.value("value_bytes_compaction_emulated", uint64_t{0});
    s.index_bytes = c.value("index_bytes", uint64_t{0});
    s.run_bytes_written = c.value("run_bytes_written", uint64_t{0});
    s.fsync_count = c.value("fsync_count", uint64_t{0});
    s.replay_bytes = c.value("replay_bytes", uint64_t{0});
    s.run_index_bytes = c.value("run_index_bytes", uint64_t{0});
  }
  return m;
}

std::vector<NodeMetrics> collect_node_metrics(const std::vector<std::string>& addresses) {
  KvClientOptions o;
  o.addresses = addresses;
  o.request_timeout_ms = 1000;
  KvClient client(o);
  std::vector<NodeMetrics> out;
  for (size_t i = 0; i < addresses.size(); ++i) {
    NodeMetrics m;
    m.id = i + 1;
    if (auto text = client.status(i)) {
      try {
        m = parse_node_status(*text);
      } catch (const json::exception&) {
      }
    }
    out.push_back(m);
  }
  return out;
}

namespace {

json counters_json(const IoCountersSnapshot& c) {
  return {{"value_bytes_valuelog", c.value_bytes_valuelog},
          {"value_bytes_wal_emulated", c.value_bytes_wal_emulated},
          {"value_bytes_flush_emulated", c.value_bytes_flush_emulated},
          {"value_bytes_compaction_emulated", c.value_bytes_compaction_emulated},
          {"index_bytes", c.index_bytes},
          {"run_bytes_written", c.run_bytes_written},
          {"fsync_count", c.fsync_count},
          {"replay_bytes", c.replay_bytes},
          {"run_index_bytes", c.run_index_bytes}};
}

json counts_json(const OpCounts& c) {
  return {{"issued", c.issued}, {"ok", c.ok}, {"not_found", c.not_found}, {"timeout", c.timeout}, {"error", c.error}};
}

void add_outcome(OpCounts& c, Status status) {
  ++c.issued;
  switch (status) {
    case Status::kOk:
    case Status::kValue:
    case Status::kEntries: ++c.ok; break;
    case Status::kNotFound: ++c.not_found; break;
    case Status::kTimeout: ++c.timeout; break;
    default: ++c.error; break;
  }
}

}  // namespace

std::string MetricsReport::to_json() const {
  json lat = json::object();
  for (const auto& [name, s] : latency) {
    lat[name] = {{"count", s.count}, {"mean_ms", s.mean_ms}, {"p50_ms", s.p50_ms}, {"p99_ms", s.p99_ms}};
  }
  json by_type = json::object();
  for (const auto& [name, c] : counts_by_type) by_type[name] = counts_json(c);
  json nodes_j = json::array();
  for (const auto& n : nodes) {
    nodes_j.push_back({{"id", n.id},
                       {"reachable", n.reachable},
                       {"role", n.role},
                       {"gc_cycles", n.gc_cycles},
                       {"gc_last_during_ms", n.gc_last_during_ms},
                       {"gc_last_post_ms", n.gc_last_post_ms},
                       {"counters", counters_json(n.counters)}});
  }
  json j = {{"type", "summary"},
            {"workload", workload},
            {"duration_s", duration_s},
            {"throughput_ops", throughput_ops},
            {"counts", counts_json(counts)},
            {"counts_by_type", by_type},
            {"latency", lat},
            {"nodes", nodes_j}};
  if (recovery_ms) j["recovery_ms"] = *recovery_ms;
  return j.dump();
}

std::string MetricsReport::summary() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "workload " << workload << ": " << counts.issued << " ops in " << duration_s << " s, " << throughput_ops
      << " ops/s\n";
  out << "  ok " << counts.ok << ", not found " << counts.not_found << ", timeout " << counts.timeout << ", error "
      << counts.error << "\n";
  for (const auto& [name, s] : latency) {
    out << "  " << name << ": n=" << s.count << " mean " << s.mean_ms << " ms, p50 " << s.p50_ms << " ms, p99 "
        << s.p99_ms << " ms\n";
  }
  for (const auto& n : nodes) {
    if (!n.reachable) {
      out << "  node " << n.id << ": unreachable\n";
      continue;
    }
    out << "  node " << n.id << " (" << n.role << "): gc cycles " << n.gc_cycles << ", last during " << n.gc_last_during_ms
        << " ms, last post " << n.gc_last_post_ms << " ms, valuelog value bytes " << n.counters.value_bytes_valuelog
        << ", fsyncs " << n.counters.fsync_count << "\n";
  }
  if (recovery_ms) out << "  recovery " << *recovery_ms << " ms\n";
  return out.str();
}

MetricsReport run_workload(const WorkloadSpec& spec, const std::vector<std::string>& addresses,
                           const WorkloadRunOptions& options) {
  spec.validate();
  {
    const auto deadline = Clock::now() + std::chrono::milliseconds(options.leader_wait_ms);
    bool leader = false;
    while (!leader) {
      for (const auto& n : collect_node_metrics(addresses)) leader = leader || n.role == "Leader";
      if (leader) break;
      if (Clock::now() >= deadline) throw Error(ErrorCode::kClusterUnavailable, "no node reports a leader");
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

  auto cursor = std::make_shared<std::atomic<uint64_t>>(spec.kind == WorkloadKind::kLoad ? 0 : spec.key_count);
  std::atomic<uint64_t> next_op{0};
  std::atomic<uint64_t> completed{0};

  struct ThreadResult {
    std::array<OpCounts, kOpTypeCount> counts{};
    std::array<std::vector<double>, kOpTypeCount> latencies;
  };
  std::vector<ThreadResult> results(spec.concurrency);

  std::mutex snap_mu;
  std::condition_variable snap_cv;
  bool done = false;
  std::vector<json> snapshots;

  const auto start = Clock::now();
  std::thread sampler([&] {
    uint64_t last = 0;
    auto last_t = start;
    std::unique_lock lock(snap_mu);
    while (!snap_cv.wait_for(lock, std::chrono::milliseconds(options.snapshot_interval_ms), [&] { return done; })) {
      const auto now = Clock::now();
      const uint64_t c = completed.load();
      const double dt = std::chrono::duration<double>(now - last_t).count();
      snapshots.push_back({{"type", "snapshot"},
                           {"t_ms", std::chrono::duration_cast<std::chrono::milliseconds>(now - start).count()},
                           {"completed", c},
                           {"ops_per_s", dt > 0 ? static_cast<double>(c - last) / dt : 0.0}});
      last = c;
      last_t = now;
    }
  });

  std::vector<std::thread> workers;
  for (size_t t = 0; t < spec.concurrency; ++t) {
    workers.emplace_back([&, t] {
      KvClientOptions co = options.client;
      co.addresses = addresses;
      co.seed = spec.seed * 1000003 + t + 1;
      KvClient client(co);
      WorkloadGenerator gen(spec, t, cursor);
      ThreadResult& r = results[t];
      while (next_op.fetch_add(1) < spec.op_count) {
        PlannedOp op = gen.next();
        const auto t0 = Clock::now();
        Status status = Status::kOk;
        for (auto& step : op.steps) {
          const Status s = client.call(std::move(step)).status;
          // A failed read ends an RMW; a missing key does not.
          status = s;
          if (s != Status::kOk && s != Status::kValue && s != Status::kNotFound && s != Status::kEntries) break;
        }
        const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        const size_t ti = static_cast<size_t>(op.type);
        add_outcome(r.counts[ti], status);
        r.latencies[ti].push_back(ms);
        completed.fetch_add(1);
      }
    });
  }
  for (auto& w : workers) w.join();
  const auto end = Clock::now();
  {
    std::lock_guard lock(snap_mu);
    done = true;
  }
  snap_cv.notify_all();
  sampler.join();

  MetricsReport report;
  report.workload = workload_kind_name(spec.kind);
  report.duration_s = std::chrono::duration<double>(end - start).count();
  for (size_t ti = 0; ti < kOpTypeCount; ++ti) {
    OpCounts merged;
    std::vector<double> lat;
    for (auto& r : results) {
      const OpCounts& c = r.counts[ti];
      merged.issued += c.issued;
      merged.ok += c.ok;
      merged.not_found += c.not_found;
      merged.timeout += c.timeout;
      merged.error += c.error;
      lat.insert(lat.end(), r.latencies[ti].begin(), r.latencies[ti].end());
    }
    if (merged.issued == 0) continue;
    const std::string name = op_type_name(static_cast<OpType>(ti));
    report.counts_by_type[name] = merged;
    report.latency[name] = summarize_latencies(std::move(lat));
    report.counts.issued += merged.issued;
    report.counts.ok += merged.ok;
    report.counts.not_found += merged.not_found;
    report.counts.timeout += merged.timeout;
    report.counts.error += merged.error;
  }
  report.throughput_ops = report.duration_s > 0 ? static_cast<double>(report.counts.issued) / report.duration_s : 0;
  report.nodes = collect_node_metrics(addresses);

  if (!options.jsonl_path.empty()) {
    std::ofstream out(options.jsonl_path);
    if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + options.jsonl_path);
    for (const auto& s : snapshots) out << s.dump() << "\n";
    out << report.to_json() << "\n";
  }
  return report;
}

}  // namespace nezha
