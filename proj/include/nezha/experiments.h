#pragma once

// Comparative and recovery experiments built on the daemon and workloads.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nezha/node_daemon.h"
#include "nezha/workload.h"

namespace nezha {

struct CompareOptions {
  std::filesystem::path dir;  // each mode runs in its own subdirectory
  size_t nodes = 3;
  NodeConfig base;  // gc is disabled during the load either way
  // Scan throughput before and after one forced GC cycle (nezha mode).
  bool measure_scans = true;
  uint64_t scan_ops = 200;
  uint32_t scan_length = 100;
  // Evict the leader's files before each storage-level scan.
  bool cold_cache_scans = true;
  TimeMs settle_timeout_ms = 60'000;
};

struct ModeResult {
  NodeMode mode = NodeMode::kNezha;
  MetricsReport report;
  // Per node, after every node applied everything and baseline memtables
  // were flushed.
  std::vector<IoCountersSnapshot> counters;
  // Sum over nodes of every value byte physically written.
  uint64_t value_bytes_written = 0;
  double put_throughput_ops = 0;
  double put_mean_latency_ms = 0;
  // Through the client protocol.
  double scan_pre_gc_ops = 0;
  double scan_post_gc_ops = 0;
  // The leader's read path alone, without the network and consensus. Values
  // are read from the device when the cache is evicted.
  double storage_scan_pre_gc_ops = 0;
  double storage_scan_post_gc_ops = 0;
};

struct ComparisonReport {
  ModeResult nezha;
  ModeResult baseline;
  double amplification_ratio = 0;  // baseline / nezha value bytes
  double throughput_ratio = 0;     // nezha / baseline puts per second
  double latency_ratio = 0;        // baseline / nezha mean put latency
  bool cold_cache_scans = true;

  std::string to_json() const;
  std::string summary() const;
};

// Runs the same spec under both modes on fresh local clusters.
ComparisonReport compare_modes(const WorkloadSpec& spec, const CompareOptions& options);

enum class KillPhase : uint8_t { kPreGc, kDuringGc, kPostGc };
const char* kill_phase_name(KillPhase phase);
KillPhase parse_kill_phase(std::string_view text);  // "pre", "during", "post"

struct RecoveryOptions {
  std::filesystem::path dir;
  uint64_t records = 4000;
  uint64_t key_count = 1000;
  size_t value_size = 1024;
  size_t compaction_batch = 64;
  // Puts written after the kill-phase GC step (post: into the new segment).
  uint64_t extra_records = 200;
  SyncMode sync_mode = SyncMode::kPhysical;
  uint64_t seed = 1;
};

struct RecoveryReport {
  KillPhase phase = KillPhase::kPreGc;
  double recovery_ms = 0;  // restart until the first read is served
  uint64_t replay_bytes = 0;
  uint64_t run_index_bytes = 0;
  // Active segment size at the kill.
  uint64_t active_segment_bytes = 0;
  uint64_t keys = 0;
  bool gc_resumed = false;  // during: the interrupted cycle completed

  std::string to_json() const;
};

// Populates a single-member node, kills it in `phase` (drops it without a
// clean shutdown), restarts it, and verifies the full state against the
// acknowledged puts. Throws kIntegrityFailure on any divergence.
RecoveryReport measure_recovery(KillPhase phase, const RecoveryOptions& options);

}  // namespace nezha
