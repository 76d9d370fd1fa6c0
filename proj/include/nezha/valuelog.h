#pragma once

// Append-only ValueLog segments. A segment is simultaneously the persisted
// Raft log and the value store: each client value is written here once and
// everything else refers to it by RecordLocation.
//
// Record layout (little-endian, no padding):
//   [crc32:4][kind:1][key_len:2][value_len:4][term:8][index:8][key][value]
// The CRC covers kind through the end of value.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nezha/common.h"
#include "nezha/file.h"
#include "nezha/io_counters.h"

namespace nezha {

enum class OpKind : uint8_t { kNoOp = 0, kPut = 1 };

struct LogRecord {
  uint64_t term = 0;
  uint64_t index = 0;
  OpKind op = OpKind::kPut;
  std::string key;
  std::string value;

  bool operator==(const LogRecord&) const = default;
};

struct RecordLocation {
  uint64_t segment_id = 0;  // base index of the owning segment (or run id)
  uint64_t offset = 0;
  uint32_t length = 0;

  bool operator==(const RecordLocation&) const = default;
};

inline constexpr size_t kRecordHeaderSize = 27;
inline constexpr size_t kMaxKeySize = 65535;
inline constexpr uint64_t kMaxValueSize = (uint64_t{1} << 31) - 1;

struct RecordHeader {
  uint32_t crc = 0;
  OpKind op = OpKind::kNoOp;
  uint16_t key_len = 0;
  uint32_t value_len = 0;
  uint64_t term = 0;
  uint64_t index = 0;

  uint64_t total_size() const { return kRecordHeaderSize + key_len + value_len; }
};

enum class DecodeStatus { kOk, kIncomplete, kCorrupt };

uint64_t encoded_size(size_t key_len, size_t value_len);
inline uint64_t encoded_size(const LogRecord& r) { return encoded_size(r.key.size(), r.value.size()); }

// Appends the encoding of `record` to `out`. Throws kInvalidArgument for
// oversized fields.
void encode_record(const LogRecord& record, std::string* out);
std::string encode_record(const LogRecord& record);

// Parses only the fixed header. kCorrupt means an impossible kind byte.
DecodeStatus decode_header(std::string_view buf, RecordHeader* header);

// Decodes and CRC-checks one record at the front of `buf`.
DecodeStatus decode_record(std::string_view buf, LogRecord* out, size_t* consumed);

// Sequential reader over a record stream in a file. Stops at the first
// incomplete or corrupt record; safe_offset() is then the end of the last
// intact record.
class RecordStreamReader {
 public:
  RecordStreamReader(const File& file, uint64_t from_offset, uint64_t end_offset,
                     bool verify = true);

  struct Item {
    uint64_t offset = 0;
    RecordHeader header;
    LogRecord record;  // value empty when verify == false
  };

  bool next(Item* item);
  uint64_t safe_offset() const { return safe_offset_; }
  bool hit_bad_record() const { return bad_; }
  uint64_t bytes_read() const { return bytes_read_; }

 private:
  bool fill(size_t need);

  const File& file_;
  uint64_t end_;
  bool verify_;
  uint64_t buf_start_;
  std::string buf_;
  size_t pos_ = 0;
  uint64_t safe_offset_;
  bool bad_ = false;
  uint64_t bytes_read_ = 0;
};

struct SegmentOptions {
  SyncMode sync_mode = SyncMode::kPhysical;
};

// One unordered ValueLog segment named `vlog-<base_index>.seg`.
//
// Single writer (append/truncate/seal); read_at() may be called concurrently
// from any thread for any committed location. location_of()/term_of() belong
// to the writer thread.
class Segment {
 public:
  static std::shared_ptr<Segment> create(const std::filesystem::path& dir, uint64_t base_index,
                                         SegmentOptions options, IoCounters* counters);
  // Opens an existing file, rebuilds the per-index table and drops a torn tail.
  static std::shared_ptr<Segment> open(const std::filesystem::path& file, SegmentOptions options,
                                       IoCounters* counters);

  static std::string file_name(uint64_t base_index);
  static std::optional<uint64_t> parse_file_name(std::string_view name);

  ~Segment();
  Segment(const Segment&) = delete;
  Segment& operator=(const Segment&) = delete;

  uint64_t base_index() const { return base_index_; }
  uint64_t last_index() const { return base_index_ + entries_.size() - 1; }
  bool empty() const { return entries_.empty(); }
  size_t record_count() const { return entries_.size(); }
  uint64_t next_offset() const { return next_offset_.load(std::memory_order_acquire); }
  uint64_t durable_offset() const { return durable_offset_; }
  bool sealed() const { return sealed_; }
  const std::filesystem::path& path() const { return file_.path(); }

  RecordLocation append(const LogRecord& record, bool durable);
  void sync();

  LogRecord read_at(const RecordLocation& location) const;
  // Header and key only; no CRC check (value not read).
  RecordHeader read_header_at(const RecordLocation& location, std::string* key) const;

  std::optional<RecordLocation> location_of(uint64_t index) const;
  std::optional<uint64_t> term_of(uint64_t index) const;

  RecordStreamReader scan(uint64_t from_offset, bool verify = true) const;

  // `offset` must be a record boundary <= next_offset.
  void truncate_at(uint64_t offset);
  // Removes every record with index >= `index`.
  void truncate_from_index(uint64_t index);

  void seal() { sealed_ = true; }
  void unseal() { sealed_ = false; }

  // Unlinks the file; readers holding this object keep a valid descriptor.
  void remove_file();
  bool removed() const { return removed_; }

 private:
  struct Entry {
    uint64_t offset;
    uint32_t length;
    uint64_t term;
  };

  Segment(File file, uint64_t base_index, SegmentOptions options, IoCounters* counters);

  File file_;
  uint64_t base_index_;
  SegmentOptions options_;
  IoCounters* counters_;
  std::vector<Entry> entries_;
  std::atomic<uint64_t> next_offset_{0};
  uint64_t durable_offset_ = 0;
  bool sealed_ = false;
  bool removed_ = false;
};

using SegmentPtr = std::shared_ptr<Segment>;

}  // namespace nezha
