#pragma once

// Storage-module lifecycle for one node.
//
//   phase      write target   read path
//   PreGC      active         active index -> active log (-> prior run)
//   DuringGC   new            new -> active (-> prior run)
//   PostGC     new            new -> sorted run
//
// GC seals the active segment at its last index, redirects writes to a new
// segment, folds the sealed segment (and the prior run) into a sorted run once
// everything up to the seal is applied, then deletes the sealed segment and
// relabels the new segment as active. The flags in `gcstate.meta` make every
// step recoverable after a crash.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nezha/common.h"
#include "nezha/compacted_store.h"
#include "nezha/io_counters.h"
#include "nezha/key_index.h"
#include "nezha/valuelog.h"

namespace nezha {

enum class GcPhase : uint8_t { kPreGc = 0, kDuringGc = 1, kPostGc = 2 };

const char* gc_phase_name(GcPhase phase);

// Persisted as `gcstate.meta`: [gc_started:1][gc_completed:1][seal_index:8][crc32:4].
struct GcFlags {
  bool gc_started = false;
  bool gc_completed = false;
  uint64_t seal_index = 0;

  GcPhase phase() const {
    if (!gc_started) return GcPhase::kPreGc;
    return gc_completed ? GcPhase::kPostGc : GcPhase::kDuringGc;
  }
  bool operator==(const GcFlags&) const = default;
};

inline constexpr size_t kGcMetaSize = 14;
std::string encode_gc_flags(const GcFlags& flags);
// Throws kCorruptState when the CRC or length is wrong.
GcFlags decode_gc_flags(std::string_view bytes);

struct GcTrigger {
  uint64_t size_threshold_bytes = 64ull << 20;
  TimeMs timer_interval_ms = 60'000;
  // ops/sec; nullopt disables the load gate so the timer alone suffices.
  std::optional<double> load_low_watermark;

  // true iff active_bytes >= threshold, or the timer elapsed while load is
  // at or below the watermark.
  bool evaluate(uint64_t active_bytes, TimeMs elapsed_ms, double current_load) const;
};

struct StorageOptions {
  SyncMode sync_mode = SyncMode::kPhysical;
  RunOptions run;
  GcTrigger trigger;
  bool gc_enabled = true;
  // Output records per compaction step; steps interleave with request handling.
  size_t compaction_batch = 512;
};

// One key index over one unordered segment (Active or New Storage).
struct StorageModule {
  SegmentPtr segment;
  std::shared_ptr<KeyIndex> index;
};
using StorageModulePtr = std::shared_ptr<const StorageModule>;

// Routing captured at request start. Holding it pins every file it names, so
// a phase change or cleanup racing the request cannot pull data out from
// under it.
struct ReadView {
  GcPhase phase = GcPhase::kPreGc;
  StorageModulePtr current;  // Active in PreGC, New otherwise
  StorageModulePtr old;      // Active during GC
  SortedRunPtr run;          // prior run before PostGC, the fresh run after
};

struct AppliedRecord {
  uint64_t index = 0;
  uint64_t term = 0;
  OpKind op = OpKind::kNoOp;
  std::string key;
  uint32_t crc = 0;
  RecordLocation location;
};

struct GcStats {
  uint64_t cycles_completed = 0;
  TimeMs last_begin_ms = 0;
  TimeMs last_during_ms = 0;  // begin -> run complete
  TimeMs last_post_ms = 0;    // run complete -> cleanup
};

// A file whose durable prefix is shorter than its current size; the
// simulator may tear everything past `durable_size` on a crash.
struct UnsyncedFile {
  std::filesystem::path path;
  uint64_t durable_size = 0;
};

// Named persistence points where tests inject crashes by throwing.
using CrashHook = std::function<void(std::string_view point)>;

class GcController {
 public:
  // Opens or creates a node directory and runs GC recovery. Throws
  // kCorruptState when flags and files disagree.
  GcController(std::filesystem::path dir, StorageOptions options, IoCounters* counters,
               CrashHook hook = {});
  ~GcController();

  GcController(const GcController&) = delete;
  GcController& operator=(const GcController&) = delete;

  const std::filesystem::path& dir() const { return dir_; }
  IoCounters* counters() const { return counters_; }
  const StorageOptions& options() const { return options_; }

  // ---- Raft log over the segments -------------------------------------
  uint64_t first_log_index() const;
  uint64_t last_log_index() const;
  // Known for log entries and for the snapshot boundary.
  std::optional<uint64_t> term_at(uint64_t index) const;
  LogRecord read_entry(uint64_t index) const;
  RecordLocation append(const LogRecord& record);
  void sync();
  // Drops entries >= from_index. Entries at or below the seal abort GC.
  void truncate_suffix(uint64_t from_index);

  // Latest complete run; zero meta when none exists.
  SnapshotMeta snapshot() const;
  SortedRunPtr snapshot_run() const;
  // Highest index whose effect is already in the recovered state machine.
  uint64_t applied_floor() const { return applied_floor_; }

  // ---- State machine -------------------------------------------------
  // Stores the lightweight location of committed entry `index`.
  AppliedRecord apply(uint64_t index);

  // ---- Reads ------------------------------------------------------------
  ReadView pin() const;
  GcPhase phase() const { return phase_.load(std::memory_order_acquire); }
  GcFlags flags() const;

  // ---- GC lifecycle -------------------------------------------------------
  uint64_t active_bytes() const;
  bool evaluate_triggers(TimeMs now, double current_load) const;
  // PreGC -> DuringGC. Throws kAlreadyRunning outside PreGC.
  void begin_gc(TimeMs now);
  // Runs one bounded compaction step; false while blocked on apply or not
  // yet finished. Entering PostGC returns true.
  bool run_compaction_step(uint64_t applied_index, TimeMs now);
  // Runs compaction to completion (applied_index must reach the seal).
  SortedRunPtr run_compaction(uint64_t applied_index, TimeMs now);
  // PostGC -> PreGC. Returns false when readers still pin the old storage.
  // A no-op in PreGC.
  bool finish_gc(TimeMs now);
  // One unit of background work: trigger check, compaction step, or cleanup.
  void gc_tick(TimeMs now, uint64_t applied_index, double current_load);
  const GcStats& gc_stats() const { return stats_; }

  // Writes `index-<applied>.ckpt` for the active index (PreGC only).
  void checkpoint(uint64_t applied_index);

  // Replaces all local state with a received run (InstallSnapshot).
  void install_snapshot(const std::filesystem::path& incoming_run);

  std::vector<UnsyncedFile> unsynced_files() const;

 private:
  void recover();
  void persist_flags(const GcFlags& flags);
  void crash_point(std::string_view point);
  void abort_gc();
  void publish_routing();
  SegmentPtr segment_for(uint64_t index) const;
  std::shared_ptr<StorageModule> make_module(SegmentPtr seg) const;
  void remove_checkpoints();

  std::filesystem::path dir_;
  StorageOptions options_;
  IoCounters* counters_;
  CrashHook hook_;

  GcFlags flags_;
  std::atomic<GcPhase> phase_{GcPhase::kPreGc};
  std::shared_ptr<StorageModule> active_;
  std::shared_ptr<StorageModule> new_;
  SortedRunPtr prior_run_;
  SortedRunPtr current_run_;  // produced by this cycle
  std::unique_ptr<RunBuilder> builder_;
  std::optional<std::string> resume_point_;
  TimeMs cycle_started_ms_ = 0;
  TimeMs run_completed_ms_ = 0;
  mutable std::optional<TimeMs> last_gc_end_ms_;
  uint64_t applied_floor_ = 0;
  GcStats stats_;

  mutable std::mutex routing_mu_;
  ReadView routing_;
};

}  // namespace nezha
