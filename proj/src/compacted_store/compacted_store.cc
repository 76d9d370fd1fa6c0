#include "nezha/compacted_store.h"

#include <algorithm>
#include <charconv>
#include <system_error>

namespace nezha {

namespace {

constexpr size_t kFlushBytes = 1 << 20;

}  // namespace

uint32_t key_digest(std::string_view key, unsigned bits) {
  uint32_t h = 2166136261u;
  for (unsigned char c : key) {
    h ^= c;
    h *= 16777619u;
  }
  if (bits >= 32) return h;
  return h & ((1u << bits) - 1);
}

std::string encode_run_footer(const RunFooter& footer) {
  std::string out;
  put_le32(out, kRunMagic);
  put_le64(out, footer.last_index);
  put_le64(out, footer.last_term);
  put_le64(out, footer.record_count);
  put_le32(out, crc32(out));
  return out;
}

namespace {

std::optional<RunFooter> parse_footer(std::string_view buf) {
  if (buf.size() != kRunFooterSize) return std::nullopt;
  if (get_le32(buf.data()) != kRunMagic) return std::nullopt;
  if (crc32(buf.substr(0, kRunFooterSize - 4)) != get_le32(buf.data() + kRunFooterSize - 4)) {
    return std::nullopt;
  }
  return RunFooter{get_le64(buf.data() + 4), get_le64(buf.data() + 12), get_le64(buf.data() + 20)};
}

std::optional<RunFooter> footer_of(const File& f, uint64_t size) {
  if (size < kRunFooterSize) return std::nullopt;
  return parse_footer(f.read_at(size - kRunFooterSize, kRunFooterSize));
}

}  // namespace

std::optional<RunFooter> read_run_footer(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  File f = File::open_ro(path);
  return footer_of(f, f.size());
}

SortedRun::SortedRun(File file, RunOptions options) : file_(std::move(file)), options_(options) {}

std::string SortedRun::file_name(uint64_t last_index) {
  return "sorted-" + std::to_string(last_index) + ".run";
}

std::optional<uint64_t> SortedRun::parse_file_name(std::string_view name) {
  constexpr std::string_view kPrefix = "sorted-";
  constexpr std::string_view kSuffix = ".run";
  if (name.size() <= kPrefix.size() + kSuffix.size()) return std::nullopt;
  if (name.substr(0, kPrefix.size()) != kPrefix) return std::nullopt;
  if (name.substr(name.size() - kSuffix.size()) != kSuffix) return std::nullopt;
  auto digits = name.substr(kPrefix.size(), name.size() - kPrefix.size() - kSuffix.size());
  uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return v;
}

std::shared_ptr<SortedRun> SortedRun::open(const std::filesystem::path& path, RunOptions options,
                                           IoCounters* counters) {
  File f = File::open_ro(path);
  const uint64_t size = f.size();
  auto footer = footer_of(f, size);
  if (!footer) throw Error(ErrorCode::kCorruptState, "run has no valid footer: " + path.string());
  auto run = std::shared_ptr<SortedRun>(new SortedRun(std::move(f), options));
  run->file_size_ = size;
  run->snapshot_ = SnapshotMeta{footer->last_index, footer->last_term, path.string(), true};

  // One sequential key-only pass rebuilds the hash and block indexes.
  RecordStreamReader reader(run->file_, 0, size - kRunFooterSize, /*verify=*/false);
  RecordStreamReader::Item item;
  uint64_t block_start = 0;
  std::string prev;
  while (reader.next(&item)) {
    const std::string& key = item.record.key;
    if (run->record_count_ > 0 && key <= prev) {
      throw Error(ErrorCode::kCorruptState, "run keys not strictly ascending: " + path.string());
    }
    if (run->blocks_.empty() || item.offset - block_start >= options.block_size) {
      run->blocks_.emplace_back(key, item.offset);
      block_start = item.offset;
    }
    run->hash_[key_digest(key, options.digest_bits)].push_back(
        Slot{key, item.offset, static_cast<uint32_t>(item.header.total_size())});
    if (run->record_count_ == 0) run->min_key_ = key;
    prev = key;
    ++run->record_count_;
  }
  if (counters) counters->run_index_bytes += reader.bytes_read() + kRunFooterSize;
  if (reader.hit_bad_record() || reader.safe_offset() != size - kRunFooterSize ||
      run->record_count_ != footer->record_count) {
    throw Error(ErrorCode::kCorruptState, "run body does not match footer: " + path.string());
  }
  run->max_key_ = prev;
  return run;
}

std::optional<LogRecord> SortedRun::lookup_record(std::string_view key) const {
  if (record_count_ == 0 || key < min_key_ || key > max_key_) return std::nullopt;
  auto it = hash_.find(key_digest(key, options_.digest_bits));
  if (it == hash_.end()) return std::nullopt;
  for (const Slot& slot : it->second) {
    if (slot.key != key) continue;
    std::string buf = file_.read_at(slot.offset, slot.length);
    LogRecord rec;
    size_t consumed = 0;
    if (decode_record(buf, &rec, &consumed) != DecodeStatus::kOk || rec.key != key) {
      throw Error(ErrorCode::kChecksumMismatch, path().string() + " @" +
                                                    std::to_string(slot.offset));
    }
    return rec;
  }
  return std::nullopt;
}

std::optional<std::string> SortedRun::point_lookup(std::string_view key) const {
  auto rec = lookup_record(key);
  if (!rec) return std::nullopt;
  return std::move(rec->value);
}

uint64_t SortedRun::block_offset_for(std::string_view key) const {
  block_probes_++;
  // Last block whose first key <= key.
  auto it = std::upper_bound(blocks_.begin(), blocks_.end(), key,
                             [](std::string_view k, const auto& b) { return k < b.first; });
  if (it == blocks_.begin()) return 0;
  return std::prev(it)->second;
}

std::vector<KeyValue> SortedRun::range_scan_from(std::string_view start, std::string_view end,
                                                 size_t limit) const {
  if (start > end) throw Error(ErrorCode::kInvalidRange, "start > end");
  std::vector<KeyValue> out;
  if (record_count_ == 0 || end < min_key_ || start > max_key_) return out;
  RecordStreamReader reader(file_, block_offset_for(start), data_size(), true);
  RecordStreamReader::Item item;
  while (reader.next(&item)) {
    if (item.record.key < start) continue;
    if (item.record.key > end) break;
    out.emplace_back(std::move(item.record.key), std::move(item.record.value));
    if (limit != 0 && out.size() >= limit) break;
  }
  if (reader.hit_bad_record()) throw Error(ErrorCode::kChecksumMismatch, path().string());
  return out;
}

RecordStreamReader SortedRun::reader_after(const std::optional<std::string>& after) const {
  uint64_t from = 0;
  if (after && !blocks_.empty()) from = block_offset_for(*after);
  return RecordStreamReader(file_, from, data_size(), true);
}

void SortedRun::remove_file() {
  if (removed_) return;
  std::error_code ec;
  std::filesystem::remove(path(), ec);
  removed_ = true;
}

RunBuilder::RunBuilder(const std::filesystem::path& dir, MergeInput input,
                       std::optional<std::string> resume_after, RunOptions options,
                       IoCounters* counters)
    : input_(std::move(input)), options_(options), counters_(counters) {
  if (input_.upto_index > input_.committed_index) {
    throw Error(ErrorCode::kUncommittedInput,
                "upto " + std::to_string(input_.upto_index) + " > committed " +
                    std::to_string(input_.committed_index));
  }

  // Latest version per key among the unordered inputs; values stay on disk.
  bool have_term = false;
  for (const auto& seg : input_.unordered) {
    if (auto t = seg->term_of(input_.upto_index)) {
      last_term_ = *t;
      have_term = true;
    }
    auto reader = seg->scan(0, /*verify=*/false);
    RecordStreamReader::Item item;
    while (reader.next(&item)) {
      const auto& rec = item.record;
      if (rec.index > input_.upto_index || rec.op != OpKind::kPut) continue;
      Latest latest{seg,
                    RecordLocation{seg->base_index(), item.offset,
                                   static_cast<uint32_t>(item.header.total_size())},
                    rec.index};
      auto [it, inserted] = latest_.try_emplace(rec.key, latest);
      if (!inserted && it->second.index < rec.index) it->second = latest;
    }
  }
  if (!have_term) {
    if (input_.prior && input_.prior->snapshot().last_index == input_.upto_index) {
      last_term_ = input_.prior->snapshot().last_term;
    } else if (input_.upto_index != 0) {
      throw Error(ErrorCode::kGapDetected,
                  "no term known for index " + std::to_string(input_.upto_index));
    }
  }

  file_ = File::open_rw(dir / SortedRun::file_name(input_.upto_index), true);
  if (resume_after) {
    const uint64_t size = file_.size();
    if (footer_of(file_, size)) {
      // Already complete; nothing left to do.
      done_ = true;
      auto footer = footer_of(file_, size);
      record_count_ = footer->record_count;
      write_offset_ = durable_offset_ = size;
      return;
    }
    RecordStreamReader reader(file_, 0, size, true);
    RecordStreamReader::Item item;
    bool found = false;
    uint64_t cut = 0;
    uint64_t count = 0;
    while (reader.next(&item)) {
      ++count;
      if (item.record.key == *resume_after) {
        found = true;
        cut = reader.safe_offset();
        break;
      }
    }
    if (!found) {
      throw Error(ErrorCode::kCorruptState, "resume key not present in " + path().string());
    }
    file_.truncate(cut);
    write_offset_ = durable_offset_ = cut;
    record_count_ = count;
    next_unordered_ = latest_.upper_bound(*resume_after);
  } else {
    file_.truncate(0);
    next_unordered_ = latest_.begin();
  }

  if (input_.prior && !input_.prior->empty()) {
    prior_reader_.emplace(input_.prior->reader_after(resume_after));
    while (advance_prior() && resume_after && prior_head_->key <= *resume_after) {
    }
  }
}

bool RunBuilder::advance_prior() {
  prior_head_.reset();
  if (!prior_reader_) return false;
  RecordStreamReader::Item item;
  if (!prior_reader_->next(&item)) {
    if (prior_reader_->hit_bad_record()) {
      throw Error(ErrorCode::kChecksumMismatch, "prior run " + input_.prior->path().string());
    }
    prior_reader_.reset();
    return false;
  }
  prior_head_ = std::move(item.record);
  return true;
}

void RunBuilder::flush() {
  if (!out_buf_.empty()) {
    file_.write_at(write_offset_, out_buf_);
    write_offset_ += out_buf_.size();
    if (counters_) counters_->run_bytes_written += out_buf_.size();
    out_buf_.clear();
  }
  if (durable_offset_ != write_offset_) {
    if (options_.sync_mode == SyncMode::kPhysical) {
      file_.sync();
      if (counters_) counters_->fsync_count++;
    }
    durable_offset_ = write_offset_;
  }
}

bool RunBuilder::step(size_t max_records) {
  if (done_) return true;
  for (size_t n = 0; n < max_records; ++n) {
    const bool have_unordered = next_unordered_ != latest_.end();
    const bool have_prior = prior_head_.has_value();
    if (!have_unordered && !have_prior) {
      out_buf_ += encode_run_footer(RunFooter{input_.upto_index, last_term_, record_count_});
      flush();
      done_ = true;
      return true;
    }
    int cmp;
    if (!have_prior) {
      cmp = 1;
    } else if (!have_unordered) {
      cmp = -1;
    } else {
      cmp = prior_head_->key.compare(next_unordered_->first);
      cmp = cmp < 0 ? -1 : (cmp > 0 ? 1 : 0);
    }
    if (cmp < 0) {
      encode_record(*prior_head_, &out_buf_);
      advance_prior();
    } else if (cmp > 0) {
      const Latest& l = next_unordered_->second;
      encode_record(l.segment->read_at(l.location), &out_buf_);
      ++next_unordered_;
    } else {
      const Latest& l = next_unordered_->second;
      if (l.index >= prior_head_->index) {
        encode_record(l.segment->read_at(l.location), &out_buf_);
      } else {
        encode_record(*prior_head_, &out_buf_);
      }
      ++next_unordered_;
      advance_prior();
    }
    ++record_count_;
    if (out_buf_.size() >= kFlushBytes) flush();
  }
  flush();
  return false;
}

std::shared_ptr<SortedRun> RunBuilder::open_result() const {
  if (!done_) throw Error(ErrorCode::kInvalidArgument, "run not complete");
  return SortedRun::open(path(), options_, counters_);
}

std::shared_ptr<SortedRun> build_merge(const std::filesystem::path& dir, MergeInput input,
                                       std::optional<std::string> resume_after,
                                       RunOptions options, IoCounters* counters) {
  RunBuilder builder(dir, std::move(input), std::move(resume_after), options, counters);
  while (!builder.step(4096)) {
  }
  return builder.open_result();
}

std::optional<std::string> recover_resume_point(const std::filesystem::path& partial_run) {
  std::error_code ec;
  if (!std::filesystem::exists(partial_run, ec)) return std::nullopt;
  File f = File::open_ro(partial_run);
  uint64_t end = f.size();
  if (footer_of(f, end)) end -= kRunFooterSize;
  RecordStreamReader reader(f, 0, end, true);
  RecordStreamReader::Item item;
  std::optional<std::string> last;
  while (reader.next(&item)) last = std::move(item.record.key);
  return last;
}

}  // namespace nezha
