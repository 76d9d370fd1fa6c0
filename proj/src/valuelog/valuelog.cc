#include "nezha/valuelog.h"

#include <charconv>
#include <system_error>

namespace nezha {

namespace {

constexpr size_t kReadChunk = 256 * 1024;
// Key-only scans read small windows so large values are mostly skipped.
constexpr size_t kKeyScanChunk = 4 * 1024;

}  // namespace

uint64_t encoded_size(size_t key_len, size_t value_len) {
  return kRecordHeaderSize + key_len + value_len;
}

void encode_record(const LogRecord& record, std::string* out) {
  if (record.key.size() > kMaxKeySize) {
    throw Error(ErrorCode::kInvalidArgument, "key longer than 65535 bytes");
  }
  if (record.value.size() > kMaxValueSize) {
    throw Error(ErrorCode::kInvalidArgument, "value longer than 2^31-1 bytes");
  }
  const size_t start = out->size();
  out->reserve(start + encoded_size(record));
  put_le32(*out, 0);
  put_u8(*out, static_cast<uint8_t>(record.op));
  put_le16(*out, static_cast<uint16_t>(record.key.size()));
  put_le32(*out, static_cast<uint32_t>(record.value.size()));
  put_le64(*out, record.term);
  put_le64(*out, record.index);
  out->append(record.key);
  out->append(record.value);
  uint32_t crc = crc32(std::string_view(*out).substr(start + 4));
  std::string crc_bytes;
  put_le32(crc_bytes, crc);
  out->replace(start, 4, crc_bytes);
}

std::string encode_record(const LogRecord& record) {
  std::string out;
  encode_record(record, &out);
  return out;
}

DecodeStatus decode_header(std::string_view buf, RecordHeader* header) {
  if (buf.size() < kRecordHeaderSize) return DecodeStatus::kIncomplete;
  const char* p = buf.data();
  header->crc = get_le32(p);
  uint8_t kind = static_cast<uint8_t>(p[4]);
  if (kind > 1) return DecodeStatus::kCorrupt;
  header->op = static_cast<OpKind>(kind);
  header->key_len = get_le16(p + 5);
  header->value_len = get_le32(p + 7);
  if (header->value_len > kMaxValueSize) return DecodeStatus::kCorrupt;
  header->term = get_le64(p + 11);
  header->index = get_le64(p + 19);
  return DecodeStatus::kOk;
}

DecodeStatus decode_record(std::string_view buf, LogRecord* out, size_t* consumed) {
  RecordHeader h;
  DecodeStatus st = decode_header(buf, &h);
  if (st != DecodeStatus::kOk) return st;
  const uint64_t total = h.total_size();
  if (buf.size() < total) return DecodeStatus::kIncomplete;
  if (crc32(buf.substr(4, total - 4)) != h.crc) return DecodeStatus::kCorrupt;
  out->term = h.term;
  out->index = h.index;
  out->op = h.op;
  out->key.assign(buf.data() + kRecordHeaderSize, h.key_len);
  out->value.assign(buf.data() + kRecordHeaderSize + h.key_len, h.value_len);
  *consumed = total;
  return DecodeStatus::kOk;
}

RecordStreamReader::RecordStreamReader(const File& file, uint64_t from_offset, uint64_t end_offset,
                                       bool verify)
    : file_(file), end_(end_offset), verify_(verify), buf_start_(from_offset),
      safe_offset_(from_offset) {}

bool RecordStreamReader::fill(size_t need) {
  if (buf_.size() - pos_ >= need) return true;
  buf_.erase(0, pos_);
  buf_start_ += pos_;
  pos_ = 0;
  const uint64_t file_pos = buf_start_ + buf_.size();
  if (file_pos >= end_) return buf_.size() >= need;
  size_t want = std::max(need - buf_.size(), verify_ ? kReadChunk : kKeyScanChunk);
  want = static_cast<size_t>(std::min<uint64_t>(want, end_ - file_pos));
  const size_t old = buf_.size();
  buf_.resize(old + want);
  size_t got = file_.read_into(file_pos, buf_.data() + old, want);
  buf_.resize(old + got);
  bytes_read_ += got;
  return buf_.size() >= need;
}

bool RecordStreamReader::next(Item* item) {
  if (bad_) return false;
  if (!fill(kRecordHeaderSize)) {
    // A partial header past the last record is a torn tail.
    if (buf_.size() - pos_ > 0) bad_ = true;
    return false;
  }
  RecordHeader h;
  if (decode_header(std::string_view(buf_).substr(pos_), &h) != DecodeStatus::kOk) {
    bad_ = true;
    return false;
  }
  const uint64_t total = h.total_size();
  const uint64_t offset = buf_start_ + pos_;
  if (offset + total > end_) {
    bad_ = true;
    return false;
  }
  if (verify_) {
    if (!fill(total)) {
      bad_ = true;
      return false;
    }
    size_t consumed = 0;
    if (decode_record(std::string_view(buf_).substr(pos_, total), &item->record, &consumed) !=
        DecodeStatus::kOk) {
      bad_ = true;
      return false;
    }
    pos_ += total;
  } else {
    if (!fill(kRecordHeaderSize + h.key_len)) {
      bad_ = true;
      return false;
    }
    item->record.term = h.term;
    item->record.index = h.index;
    item->record.op = h.op;
    item->record.key.assign(buf_.data() + pos_ + kRecordHeaderSize, h.key_len);
    item->record.value.clear();
    // Skip the value without reading it when it is not buffered.
    const size_t buffered = buf_.size() - pos_;
    if (buffered >= total) {
      pos_ += total;
    } else {
      buf_start_ = offset + total;
      buf_.clear();
      pos_ = 0;
    }
  }
  item->offset = offset;
  item->header = h;
  safe_offset_ = offset + total;
  return true;
}

Segment::Segment(File file, uint64_t base_index, SegmentOptions options, IoCounters* counters)
    : file_(std::move(file)), base_index_(base_index), options_(options), counters_(counters) {}

Segment::~Segment() = default;

std::string Segment::file_name(uint64_t base_index) {
  return "vlog-" + std::to_string(base_index) + ".seg";
}

std::optional<uint64_t> Segment::parse_file_name(std::string_view name) {
  constexpr std::string_view kPrefix = "vlog-";
  constexpr std::string_view kSuffix = ".seg";
  if (name.size() <= kPrefix.size() + kSuffix.size()) return std::nullopt;
  if (name.substr(0, kPrefix.size()) != kPrefix) return std::nullopt;
  if (name.substr(name.size() - kSuffix.size()) != kSuffix) return std::nullopt;
  auto digits = name.substr(kPrefix.size(), name.size() - kPrefix.size() - kSuffix.size());
  uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return v;
}

std::shared_ptr<Segment> Segment::create(const std::filesystem::path& dir, uint64_t base_index,
                                         SegmentOptions options, IoCounters* counters) {
  if (base_index == 0) throw Error(ErrorCode::kInvalidArgument, "segment base index must be > 0");
  File f = File::open_rw(dir / file_name(base_index), true);
  f.truncate(0);
  return std::shared_ptr<Segment>(new Segment(std::move(f), base_index, options, counters));
}

std::shared_ptr<Segment> Segment::open(const std::filesystem::path& file, SegmentOptions options,
                                       IoCounters* counters) {
  auto base = parse_file_name(file.filename().string());
  if (!base) throw Error(ErrorCode::kInvalidArgument, "not a segment file: " + file.string());
  File f = File::open_rw(file, false);
  auto seg = std::shared_ptr<Segment>(new Segment(std::move(f), *base, options, counters));
  const uint64_t size = seg->file_.size();
  RecordStreamReader reader(seg->file_, 0, size, true);
  RecordStreamReader::Item item;
  while (reader.next(&item)) {
    if (item.record.index != seg->base_index_ + seg->entries_.size()) {
      throw Error(ErrorCode::kCorruptState, "index sequence broken in " + file.string());
    }
    seg->entries_.push_back({item.offset, static_cast<uint32_t>(item.header.total_size()),
                             item.record.term});
  }
  if (counters) counters->replay_bytes += reader.bytes_read();
  const uint64_t safe = reader.safe_offset();
  if (safe < size) seg->file_.truncate(safe);
  seg->next_offset_.store(safe, std::memory_order_release);
  seg->durable_offset_ = safe;
  return seg;
}

RecordLocation Segment::append(const LogRecord& record, bool durable) {
  if (sealed_) throw Error(ErrorCode::kSegmentSealed, path().string());
  const uint64_t expected = base_index_ + entries_.size();
  if (record.index != expected) {
    throw Error(ErrorCode::kIndexGap, "expected index " + std::to_string(expected) + ", got " +
                                          std::to_string(record.index));
  }
  std::string buf;
  encode_record(record, &buf);
  const uint64_t offset = next_offset();
  file_.write_at(offset, buf);
  entries_.push_back({offset, static_cast<uint32_t>(buf.size()), record.term});
  next_offset_.store(offset + buf.size(), std::memory_order_release);
  if (counters_) {
    counters_->value_bytes_valuelog += record.value.size();
    counters_->log_bytes += buf.size();
  }
  if (durable) sync();
  return RecordLocation{base_index_, offset, static_cast<uint32_t>(buf.size())};
}

void Segment::sync() {
  const uint64_t end = next_offset();
  if (durable_offset_ == end) return;
  if (options_.sync_mode == SyncMode::kPhysical) {
    file_.sync();
    if (counters_) counters_->fsync_count++;
  }
  durable_offset_ = end;
}

LogRecord Segment::read_at(const RecordLocation& location) const {
  if (location.segment_id != base_index_) {
    throw Error(ErrorCode::kSegmentMissing, "location names segment " +
                                                std::to_string(location.segment_id));
  }
  if (location.length < kRecordHeaderSize || location.offset + location.length > next_offset()) {
    throw Error(ErrorCode::kIoFailure, "location beyond end of " + path().string());
  }
  std::string buf = file_.read_at(location.offset, location.length);
  if (buf.size() != location.length) {
    throw Error(ErrorCode::kIoFailure, "short read in " + path().string());
  }
  LogRecord out;
  size_t consumed = 0;
  DecodeStatus st = decode_record(buf, &out, &consumed);
  if (st != DecodeStatus::kOk || consumed != location.length) {
    throw Error(ErrorCode::kChecksumMismatch, path().string() + " @" +
                                                  std::to_string(location.offset));
  }
  return out;
}

RecordHeader Segment::read_header_at(const RecordLocation& location, std::string* key) const {
  if (location.segment_id != base_index_) {
    throw Error(ErrorCode::kSegmentMissing, "location names segment " +
                                                std::to_string(location.segment_id));
  }
  if (location.offset + location.length > next_offset()) {
    throw Error(ErrorCode::kIoFailure, "location beyond end of " + path().string());
  }
  std::string buf = file_.read_at(location.offset, kRecordHeaderSize);
  RecordHeader h;
  if (decode_header(buf, &h) != DecodeStatus::kOk || h.total_size() != location.length) {
    throw Error(ErrorCode::kChecksumMismatch, path().string());
  }
  if (key) *key = file_.read_at(location.offset + kRecordHeaderSize, h.key_len);
  return h;
}

std::optional<RecordLocation> Segment::location_of(uint64_t index) const {
  if (index < base_index_ || index > last_index() || entries_.empty()) return std::nullopt;
  const Entry& e = entries_[index - base_index_];
  return RecordLocation{base_index_, e.offset, e.length};
}

std::optional<uint64_t> Segment::term_of(uint64_t index) const {
  if (index < base_index_ || entries_.empty() || index > last_index()) return std::nullopt;
  return entries_[index - base_index_].term;
}

RecordStreamReader Segment::scan(uint64_t from_offset, bool verify) const {
  return RecordStreamReader(file_, from_offset, next_offset(), verify);
}

void Segment::truncate_at(uint64_t offset) {
  const uint64_t end = next_offset();
  if (offset == end) return;
  if (offset > end) throw Error(ErrorCode::kNotABoundary, "offset beyond end");
  size_t keep = 0;
  while (keep < entries_.size() && entries_[keep].offset < offset) ++keep;
  if (keep < entries_.size() && entries_[keep].offset != offset) {
    throw Error(ErrorCode::kNotABoundary, std::to_string(offset));
  }
  if (keep == entries_.size() && offset != 0 && offset != end) {
    throw Error(ErrorCode::kNotABoundary, std::to_string(offset));
  }
  file_.truncate(offset);
  entries_.resize(keep);
  next_offset_.store(offset, std::memory_order_release);
  if (durable_offset_ > offset) durable_offset_ = offset;
  if (options_.sync_mode == SyncMode::kPhysical) file_.sync();
}

void Segment::truncate_from_index(uint64_t index) {
  if (index > last_index() || entries_.empty()) return;
  if (index < base_index_) index = base_index_;
  truncate_at(entries_[index - base_index_].offset);
}

void Segment::remove_file() {
  if (removed_) return;
  std::error_code ec;
  std::filesystem::remove(path(), ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "remove " + path().string() + ": " + ec.message());
  removed_ = true;
}

}  // namespace nezha
