#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "nezha/io_counters.h"
#include "nezha/snapshot_meta.h"
#include "nezha/valuelog.h"

namespace nezha {

// Persisted size of one location: segment id, offset, length.
inline constexpr size_t kLocationSize = 8 + 8 + 4;

struct IndexEntry {
  std::string key;
  RecordLocation location;
  uint64_t applied_index = 0;

  bool operator==(const IndexEntry&) const = default;
};

// Ordered key -> RecordLocation map: the node-local state machine. Values
// never live here, only where to find them.
//
// One apply-path writer, any number of readers. range() copies the matching
// entries under a shared lock, so callers iterate a point-in-time view.
class KeyIndex {
 public:
  explicit KeyIndex(IoCounters* counters = nullptr) : counters_(counters) {}

  KeyIndex(const KeyIndex&) = delete;
  KeyIndex& operator=(const KeyIndex&) = delete;

  // Throws kStaleApply if applied_index regresses for this key.
  void put_mapping(std::string_view key, const RecordLocation& location, uint64_t applied_index);

  std::optional<RecordLocation> get_location(std::string_view key) const;
  std::optional<IndexEntry> get(std::string_view key) const;

  // Inclusive on both ends, ascending byte order. Throws kInvalidRange when
  // start > end. limit == 0 means unbounded.
  std::vector<IndexEntry> range(std::string_view start, std::string_view end,
                                size_t limit = 0) const;

  std::vector<IndexEntry> entries() const;
  size_t size() const;
  uint64_t max_applied_index() const;

  // Replays every Put with index > snapshot->last_index (or from index 1 when
  // there is no snapshot) in index order. Segments must be contiguous.
  static std::unique_ptr<KeyIndex> rebuild(const std::vector<SegmentPtr>& segments,
                                           const SnapshotMeta* snapshot,
                                           IoCounters* counters = nullptr);

  // Checkpoint file `index-<applied_index>.ckpt`:
  //   ([key_len:2][key][segment_id:8][offset:8][length:4])* [crc32:4]
  static std::string checkpoint_name(uint64_t applied_index);
  static std::optional<uint64_t> parse_checkpoint_name(std::string_view name);
  void write_checkpoint(const std::filesystem::path& dir, uint64_t applied_index,
                        SyncMode mode) const;
  // Entries get applied_index from the file name. Throws kChecksumMismatch.
  static std::unique_ptr<KeyIndex> load_checkpoint(const std::filesystem::path& file,
                                                   IoCounters* counters = nullptr);

 private:
  struct Mapping {
    RecordLocation location;
    uint64_t applied_index;
  };

  IoCounters* counters_;
  mutable std::shared_mutex mu_;
  std::map<std::string, Mapping, std::less<>> map_;
  uint64_t max_applied_ = 0;
};

}  // namespace nezha
