#pragma once

// Emulated cost of the conventional Raft + LSM layout, where every value is
// persisted three times: in the Raft log, in the engine's WAL, and again when
// the memtable is flushed to a sorted file. The Raft log write is the node's
// own ValueLog append; this observer adds the other two real, synced writes
// per applied put, and optionally rewrites flushed data to stand in for
// compaction. It stores nothing anyone reads back.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "nezha/file.h"
#include "nezha/node_host.h"

namespace nezha {

struct BaselineOptions {
  size_t memtable_bytes = 4u << 20;
  // Total writes of flushed data, counting the flush itself; 1 disables the
  // compaction emulation.
  double compaction_factor = 1.0;
};

class BaselineEmulator : public ApplyObserver {
 public:
  BaselineEmulator(std::filesystem::path dir, BaselineOptions options, SyncMode sync_mode,
                   IoCounters* counters);

  void on_applied(const std::vector<AppliedRecord>& records, GcController& storage) override;
  void sync() override;
  // Writes out whatever the memtable holds.
  void flush_memtable();

  uint64_t flushes() const { return flushes_; }

 private:
  std::filesystem::path dir_;
  BaselineOptions options_;
  SyncMode sync_mode_;
  IoCounters* counters_;
  File wal_;
  uint64_t wal_size_ = 0;
  bool wal_dirty_ = false;
  // Every version, as a memtable with sequence numbers holds until
  // compaction; a flush writes them all.
  std::multimap<std::string, std::string> memtable_;
  size_t memtable_size_ = 0;
  uint64_t flushes_ = 0;
};

}  // namespace nezha
