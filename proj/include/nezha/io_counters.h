#pragma once

#include <atomic>
#include <cstdint>

namespace nezha {

// Plain copy of the counters at one instant.
struct IoCountersSnapshot {
  uint64_t value_bytes_valuelog = 0;
  uint64_t log_bytes = 0;
  uint64_t value_bytes_wal_emulated = 0;
  uint64_t value_bytes_flush_emulated = 0;
  uint64_t value_bytes_compaction_emulated = 0;
  uint64_t index_bytes = 0;
  uint64_t run_bytes_written = 0;
  uint64_t fsync_count = 0;
  uint64_t replay_bytes = 0;
  uint64_t run_index_bytes = 0;
};

// Monotonic per-node persistence accounting. Every writer of value bytes
// reports here so the single-write and triple-write modes can be compared
// byte for byte.
struct IoCounters {
  std::atomic<uint64_t> value_bytes_valuelog{0};
  std::atomic<uint64_t> log_bytes{0};
  std::atomic<uint64_t> value_bytes_wal_emulated{0};
  std::atomic<uint64_t> value_bytes_flush_emulated{0};
  std::atomic<uint64_t> value_bytes_compaction_emulated{0};
  std::atomic<uint64_t> index_bytes{0};
  // Bytes of compacted run files produced by GC (not a first-write of values).
  std::atomic<uint64_t> run_bytes_written{0};
  std::atomic<uint64_t> fsync_count{0};
  // Log and checkpoint bytes read while reconstructing state on startup.
  std::atomic<uint64_t> replay_bytes{0};
  // Sorted-run bytes read on open to rebuild the run's in-memory indexes.
  std::atomic<uint64_t> run_index_bytes{0};

  IoCountersSnapshot snapshot() const {
    IoCountersSnapshot s;
    s.value_bytes_valuelog = value_bytes_valuelog.load();
    s.log_bytes = log_bytes.load();
    s.value_bytes_wal_emulated = value_bytes_wal_emulated.load();
    s.value_bytes_flush_emulated = value_bytes_flush_emulated.load();
    s.value_bytes_compaction_emulated = value_bytes_compaction_emulated.load();
    s.index_bytes = index_bytes.load();
    s.run_bytes_written = run_bytes_written.load();
    s.fsync_count = fsync_count.load();
    s.replay_bytes = replay_bytes.load();
    s.run_index_bytes = run_index_bytes.load();
    return s;
  }
};

}  // namespace nezha
