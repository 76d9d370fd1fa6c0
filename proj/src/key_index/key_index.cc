#include "nezha/key_index.h"

#include <charconv>
#include <mutex>
#include <system_error>

namespace nezha {

void KeyIndex::put_mapping(std::string_view key, const RecordLocation& location,
                           uint64_t applied_index) {
  std::unique_lock lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) {
    map_.emplace(std::string(key), Mapping{location, applied_index});
  } else {
    if (applied_index < it->second.applied_index) {
      throw Error(ErrorCode::kStaleApply,
                  "key applied at " + std::to_string(it->second.applied_index) +
                      ", got " + std::to_string(applied_index));
    }
    it->second = Mapping{location, applied_index};
  }
  if (applied_index > max_applied_) max_applied_ = applied_index;
  if (counters_) counters_->index_bytes += key.size() + kLocationSize;
}

std::optional<RecordLocation> KeyIndex::get_location(std::string_view key) const {
  std::shared_lock lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) return std::nullopt;
  return it->second.location;
}

std::optional<IndexEntry> KeyIndex::get(std::string_view key) const {
  std::shared_lock lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) return std::nullopt;
  return IndexEntry{it->first, it->second.location, it->second.applied_index};
}

std::vector<IndexEntry> KeyIndex::range(std::string_view start, std::string_view end,
                                        size_t limit) const {
  if (start > end) throw Error(ErrorCode::kInvalidRange, "start > end");
  std::vector<IndexEntry> out;
  std::shared_lock lock(mu_);
  for (auto it = map_.lower_bound(start); it != map_.end() && it->first <= end; ++it) {
    out.push_back(IndexEntry{it->first, it->second.location, it->second.applied_index});
    if (limit != 0 && out.size() >= limit) break;
  }
  return out;
}

std::vector<IndexEntry> KeyIndex::entries() const {
  std::shared_lock lock(mu_);
  std::vector<IndexEntry> out;
  out.reserve(map_.size());
  for (const auto& [k, m] : map_) out.push_back(IndexEntry{k, m.location, m.applied_index});
  return out;
}

size_t KeyIndex::size() const {
  std::shared_lock lock(mu_);
  return map_.size();
}

uint64_t KeyIndex::max_applied_index() const {
  std::shared_lock lock(mu_);
  return max_applied_;
}

std::unique_ptr<KeyIndex> KeyIndex::rebuild(const std::vector<SegmentPtr>& segments,
                                            const SnapshotMeta* snapshot, IoCounters* counters) {
  auto index = std::make_unique<KeyIndex>(counters);
  const uint64_t floor = snapshot ? snapshot->last_index : 0;
  uint64_t expected = floor + 1;
  for (const auto& seg : segments) {
    if (seg->base_index() > expected) {
      throw Error(ErrorCode::kGapDetected, "segment " + std::to_string(seg->base_index()) +
                                               " starts after expected index " +
                                               std::to_string(expected));
    }
    auto reader = seg->scan(0, /*verify=*/false);
    RecordStreamReader::Item item;
    while (reader.next(&item)) {
      const auto& rec = item.record;
      if (rec.index <= floor || rec.index < expected) continue;
      if (rec.index != expected) {
        throw Error(ErrorCode::kGapDetected, "index " + std::to_string(rec.index));
      }
      if (rec.op == OpKind::kPut) {
        index->put_mapping(rec.key,
                           RecordLocation{seg->base_index(), item.offset,
                                          static_cast<uint32_t>(item.header.total_size())},
                           rec.index);
      }
      ++expected;
    }
    if (counters) counters->replay_bytes += reader.bytes_read();
  }
  return index;
}

std::string KeyIndex::checkpoint_name(uint64_t applied_index) {
  return "index-" + std::to_string(applied_index) + ".ckpt";
}

std::optional<uint64_t> KeyIndex::parse_checkpoint_name(std::string_view name) {
  constexpr std::string_view kPrefix = "index-";
  constexpr std::string_view kSuffix = ".ckpt";
  if (name.size() <= kPrefix.size() + kSuffix.size()) return std::nullopt;
  if (name.substr(0, kPrefix.size()) != kPrefix) return std::nullopt;
  if (name.substr(name.size() - kSuffix.size()) != kSuffix) return std::nullopt;
  auto digits = name.substr(kPrefix.size(), name.size() - kPrefix.size() - kSuffix.size());
  uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return v;
}

void KeyIndex::write_checkpoint(const std::filesystem::path& dir, uint64_t applied_index,
                                SyncMode mode) const {
  std::string buf;
  {
    std::shared_lock lock(mu_);
    for (const auto& [k, m] : map_) {
      put_le16(buf, static_cast<uint16_t>(k.size()));
      buf.append(k);
      put_le64(buf, m.location.segment_id);
      put_le64(buf, m.location.offset);
      put_le32(buf, m.location.length);
    }
  }
  put_le32(buf, crc32(buf));
  atomic_write_file(dir / checkpoint_name(applied_index), buf, mode);
}

std::unique_ptr<KeyIndex> KeyIndex::load_checkpoint(const std::filesystem::path& file,
                                                    IoCounters* counters) {
  auto applied = parse_checkpoint_name(file.filename().string());
  if (!applied) throw Error(ErrorCode::kInvalidArgument, "not a checkpoint: " + file.string());
  std::string buf = read_file(file);
  if (counters) counters->replay_bytes += buf.size();
  if (buf.size() < 4 || crc32(std::string_view(buf).substr(0, buf.size() - 4)) !=
                            get_le32(buf.data() + buf.size() - 4)) {
    throw Error(ErrorCode::kChecksumMismatch, file.string());
  }
  auto index = std::make_unique<KeyIndex>(counters);
  size_t pos = 0;
  const size_t end = buf.size() - 4;
  while (pos < end) {
    if (end - pos < 2) throw Error(ErrorCode::kChecksumMismatch, file.string());
    uint16_t klen = get_le16(buf.data() + pos);
    pos += 2;
    if (end - pos < klen + kLocationSize) throw Error(ErrorCode::kChecksumMismatch, file.string());
    std::string key = buf.substr(pos, klen);
    pos += klen;
    RecordLocation loc{get_le64(buf.data() + pos), get_le64(buf.data() + pos + 8),
                       get_le32(buf.data() + pos + 16)};
    pos += kLocationSize;
    index->map_.emplace(std::move(key), Mapping{loc, *applied});
  }
  index->max_applied_ = *applied;
  return index;
}

}  // namespace nezha
