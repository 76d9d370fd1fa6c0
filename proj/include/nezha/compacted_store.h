#pragma once

// Final Compacted Storage: key-sorted runs produced by GC. A run is a record
// stream in ascending unique key order (same codec as the ValueLog) followed
// by a footer:
//   [magic:4][last_index:8][last_term:8][record_count:8][crc32:4]
// The footer's presence is what makes a run complete; a run together with
// its footer's (last_index, last_term) is the Raft snapshot.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nezha/io_counters.h"
#include "nezha/snapshot_meta.h"
#include "nezha/valuelog.h"

namespace nezha {

inline constexpr size_t kRunFooterSize = 32;
inline constexpr uint32_t kRunMagic = 0x4e5a5231;

struct RunOptions {
  size_t block_size = 64 * 1024;
  SyncMode sync_mode = SyncMode::kPhysical;
  // Width of the point-lookup digest. Narrow widths are only for tests.
  unsigned digest_bits = 32;
};

// FNV-1a, truncated to `bits`.
uint32_t key_digest(std::string_view key, unsigned bits);

struct RunFooter {
  uint64_t last_index = 0;
  uint64_t last_term = 0;
  uint64_t record_count = 0;
};

std::string encode_run_footer(const RunFooter& footer);
// Reads the footer of `path`; nullopt for an absent or incomplete run.
std::optional<RunFooter> read_run_footer(const std::filesystem::path& path);

using KeyValue = std::pair<std::string, std::string>;

// An immutable, complete sorted run. Safe for unlimited concurrent readers.
class SortedRun {
 public:
  static std::shared_ptr<SortedRun> open(const std::filesystem::path& path, RunOptions options,
                                         IoCounters* counters = nullptr);

  static std::string file_name(uint64_t last_index);
  static std::optional<uint64_t> parse_file_name(std::string_view name);

  SortedRun(const SortedRun&) = delete;
  SortedRun& operator=(const SortedRun&) = delete;

  const SnapshotMeta& snapshot() const { return snapshot_; }
  const std::filesystem::path& path() const { return file_.path(); }
  uint64_t record_count() const { return record_count_; }
  const std::string& min_key() const { return min_key_; }
  const std::string& max_key() const { return max_key_; }
  uint64_t file_size() const { return file_size_; }
  uint64_t data_size() const { return file_size_ - kRunFooterSize; }
  bool empty() const { return record_count_ == 0; }

  std::optional<std::string> point_lookup(std::string_view key) const;
  std::optional<LogRecord> lookup_record(std::string_view key) const;

  // Inclusive range, ascending. One block-index probe, then sequential reads.
  std::vector<KeyValue> range_scan_from(std::string_view start, std::string_view end,
                                        size_t limit = 0) const;

  // Data-region offset of the block that may contain `key`.
  uint64_t block_offset_for(std::string_view key) const;
  size_t block_count() const { return blocks_.size(); }
  uint64_t block_probes() const { return block_probes_.load(); }

  // Sequential reader over full records, positioned at the first key > after.
  RecordStreamReader reader_after(const std::optional<std::string>& after) const;
  // Raw bytes for snapshot transfer.
  std::string read_bytes(uint64_t offset, size_t n) const { return file_.read_at(offset, n); }

  void remove_file();

 private:
  struct Slot {
    std::string key;
    uint64_t offset;
    uint32_t length;
  };

  SortedRun(File file, RunOptions options);

  File file_;
  RunOptions options_;
  SnapshotMeta snapshot_;
  uint64_t record_count_ = 0;
  uint64_t file_size_ = 0;
  std::string min_key_;
  std::string max_key_;
  std::unordered_map<uint32_t, std::vector<Slot>> hash_;
  std::vector<std::pair<std::string, uint64_t>> blocks_;
  mutable std::atomic<uint64_t> block_probes_{0};
  bool removed_ = false;
};

using SortedRunPtr = std::shared_ptr<const SortedRun>;

struct MergeInput {
  SortedRunPtr prior;                 // existing compacted state, may be null
  std::vector<SegmentPtr> unordered;  // sealed segments to fold in
  uint64_t upto_index = 0;            // records above this index are ignored
  uint64_t committed_index = 0;       // must be >= upto_index
};

// Incremental, crash-resumable merge into `sorted-<upto_index>.run`. For each
// key the record with the highest Raft index <= upto_index wins. Output bytes
// depend only on the inputs, so a resumed build is byte-identical to an
// uninterrupted one.
class RunBuilder {
 public:
  RunBuilder(const std::filesystem::path& dir, MergeInput input,
             std::optional<std::string> resume_after, RunOptions options,
             IoCounters* counters = nullptr);

  // Writes up to max_records records; on exhaustion writes the footer.
  // Returns true once the run is complete.
  bool step(size_t max_records);
  bool done() const { return done_; }

  const std::filesystem::path& path() const { return file_.path(); }
  uint64_t durable_offset() const { return durable_offset_; }
  uint64_t written_records() const { return record_count_; }
  std::shared_ptr<SortedRun> open_result() const;

 private:
  struct Latest {
    SegmentPtr segment;
    RecordLocation location;
    uint64_t index;
  };

  bool advance_prior();
  void flush();

  MergeInput input_;
  RunOptions options_;
  IoCounters* counters_;
  File file_;
  uint64_t last_term_ = 0;
  std::map<std::string, Latest> latest_;
  std::map<std::string, Latest>::const_iterator next_unordered_;
  std::optional<RecordStreamReader> prior_reader_;
  std::optional<LogRecord> prior_head_;
  std::string out_buf_;
  uint64_t write_offset_ = 0;
  uint64_t durable_offset_ = 0;
  uint64_t record_count_ = 0;
  bool done_ = false;
};

std::shared_ptr<SortedRun> build_merge(const std::filesystem::path& dir, MergeInput input,
                                       std::optional<std::string> resume_after,
                                       RunOptions options, IoCounters* counters = nullptr);

// Largest key whose record is fully intact in a (possibly torn) run file.
std::optional<std::string> recover_resume_point(const std::filesystem::path& partial_run);

}  // namespace nezha
