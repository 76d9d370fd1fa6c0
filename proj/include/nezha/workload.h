#pragma once

// YCSB-style workloads against a running cluster.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nezha/client_protocol.h"
#include "nezha/io_counters.h"
#include "nezha/kv_client.h"

namespace nezha {

enum class WorkloadKind : uint8_t { kLoad, kA, kB, kC, kD, kE, kF };
const char* workload_kind_name(WorkloadKind kind);
WorkloadKind parse_workload_kind(std::string_view text);  // kInvalidArgument

enum class OpType : uint8_t { kInsert, kUpdate, kRead, kScan, kRmw };
inline constexpr size_t kOpTypeCount = 5;
const char* op_type_name(OpType type);

// Fractions of logical ops; they sum to 1.
struct OpMix {
  double insert = 0;
  double update = 0;
  double read = 0;
  double scan = 0;
  double rmw = 0;
};
OpMix workload_mix(WorkloadKind kind);

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::kA;
  uint64_t op_count = 1000;
  uint64_t key_count = 100'000;
  size_t key_size = 10;
  size_t value_size = 1024;
  double zipf_exponent = 0.99;
  uint32_t scan_length = 100;
  size_t concurrency = 4;
  uint64_t seed = 1;

  // Throws kInvalidArgument.
  void validate() const;
};

// Fixed-width key for record id `id`: "k" then the zero-padded digits in
// reverse, so consecutive ids land far apart in key order.
std::string workload_key(uint64_t id, size_t key_size);

// Zipf over ranks 1..n with P(r) proportional to 1/r^s, sampled by rejection
// inversion in O(1) expected time without a table.
class Zipf {
 public:
  Zipf(uint64_t n, double exponent);  // n >= 1, exponent >= 0
  uint64_t next(std::mt19937_64& rng) const;

 private:
  double h(double x) const;
  double h_integral(double x) const;
  double h_integral_inverse(double x) const;

  uint64_t n_;
  double exponent_;
  double h_integral_x1_;
  double h_integral_n_;
  double s_;
};

uint64_t zipf_next(std::mt19937_64& rng, uint64_t key_count, double exponent);

// One logical op: a single request, or read then write for RMW.
struct PlannedOp {
  OpType type;
  std::vector<ClientOp> steps;
};

// Draws the op stream for one client. Inserts take fresh ids from a cursor
// shared by all clients of a run: 0.. for load, key_count.. otherwise. Other
// ops pick keys by Zipf rank (rank r is record r-1) among the loaded records.
class WorkloadGenerator {
 public:
  WorkloadGenerator(const WorkloadSpec& spec, uint64_t stream, std::shared_ptr<std::atomic<uint64_t>> cursor);

  PlannedOp next();

 private:
  OpType draw_type();
  std::string value();

  WorkloadSpec spec_;
  OpMix mix_;
  std::mt19937_64 rng_;
  Zipf zipf_;
  std::shared_ptr<std::atomic<uint64_t>> cursor_;
};

struct OpCounts {
  uint64_t issued = 0;
  uint64_t ok = 0;
  uint64_t not_found = 0;
  uint64_t timeout = 0;
  uint64_t error = 0;
};

struct LatencyStats {
  uint64_t count = 0;
  double mean_ms = 0;
  double p50_ms = 0;
  double p99_ms = 0;
};
LatencyStats summarize_latencies(std::vector<double> samples_ms);

struct NodeMetrics {
  NodeId id = 0;
  bool reachable = false;
  std::string role;
  uint64_t gc_cycles = 0;
  TimeMs gc_last_during_ms = 0;
  TimeMs gc_last_post_ms = 0;
  IoCountersSnapshot counters;
};

struct MetricsReport {
  std::string workload;
  double duration_s = 0;
  double throughput_ops = 0;
  OpCounts counts;
  std::map<std::string, OpCounts> counts_by_type;
  std::map<std::string, LatencyStats> latency;  // by op type name
  std::vector<NodeMetrics> nodes;
  std::optional<double> recovery_ms;

  bool failed() const { return counts.timeout + counts.error > 0; }
  std::string to_json() const;
  std::string summary() const;
};

struct WorkloadRunOptions {
  // Line-delimited records: snapshots, then the summary. Empty: none.
  std::string jsonl_path;
  TimeMs snapshot_interval_ms = 100;
  KvClientOptions client;  // addresses and seed are filled in
  // Wait this long for a leader before failing with kClusterUnavailable.
  TimeMs leader_wait_ms = 5000;
};

NodeMetrics parse_node_status(const std::string& status_json);
std::vector<NodeMetrics> collect_node_metrics(const std::vector<std::string>& addresses);

// Runs the op mix with spec.concurrency clients. Throws kClusterUnavailable
// when no node reports a leader.
MetricsReport run_workload(const WorkloadSpec& spec, const std::vector<std::string>& addresses,
                           const WorkloadRunOptions& options = {});

}  // namespace nezha
