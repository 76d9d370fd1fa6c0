#include "nezha/baseline.h"

#include <cmath>

namespace nezha {

namespace fs = std::filesystem;

namespace {

void append_kv(std::string& out, const std::string& key, const std::string& value) {
  put_le16(out, static_cast<uint16_t>(key.size()));
  out += key;
  put_le32(out, static_cast<uint32_t>(value.size()));
  out += value;
}

}  // namespace

BaselineEmulator::BaselineEmulator(fs::path dir, BaselineOptions options, SyncMode sync_mode,
                                   IoCounters* counters)
    : dir_(std::move(dir)), options_(options), sync_mode_(sync_mode), counters_(counters) {
  if (options_.compaction_factor < 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "compaction factor must be at least 1");
  }
  fs::create_directories(dir_);
  // The emulated engine is volatile across restarts; start from a clean slate.
  wal_ = File::open_rw(dir_ / "wal.log", true);
  wal_.truncate(0);
}

void BaselineEmulator::on_applied(const std::vector<AppliedRecord>& records, GcController& storage) {
  std::string batch;
  uint64_t value_bytes = 0;
  for (const auto& r : records) {
    if (r.op != OpKind::kPut) continue;
    LogRecord rec = storage.read_entry(r.index);
    append_kv(batch, rec.key, rec.value);
    value_bytes += rec.value.size();
    memtable_size_ += rec.key.size() + rec.value.size();
    memtable_.emplace(std::move(rec.key), std::move(rec.value));
  }
  if (batch.empty()) return;
  wal_.write_at(wal_size_, batch);
  wal_size_ += batch.size();
  wal_dirty_ = true;
  counters_->value_bytes_wal_emulated += value_bytes;
  if (memtable_size_ >= options_.memtable_bytes) {
    sync();
    flush_memtable();
  }
}

void BaselineEmulator::sync() {
  if (!wal_dirty_) return;
  if (sync_mode_ == SyncMode::kPhysical) {
    wal_.sync();
    ++counters_->fsync_count;
  }
  wal_dirty_ = false;
}

void BaselineEmulator::flush_memtable() {
  if (memtable_.empty()) return;
  std::string sst;
  uint64_t value_bytes = 0;
  for (const auto& [k, v] : memtable_) {
    append_kv(sst, k, v);
    value_bytes += v.size();
  }
  const fs::path path = dir_ / ("flush-" + std::to_string(flushes_ % 2) + ".sst");
  {
    File f = File::open_rw(path, true);
    f.truncate(0);
    f.write_at(0, sst);
    if (sync_mode_ == SyncMode::kPhysical) {
      f.sync();
      ++counters_->fsync_count;
    }
  }
  counters_->value_bytes_flush_emulated += value_bytes;
  ++flushes_;

  const double extra = options_.compaction_factor - 1.0;
  if (extra > 0) {
    // Rewrite the flushed bytes `extra` times over, as compaction would.
    const auto whole = static_cast<uint64_t>(std::floor(extra));
    const auto part = static_cast<uint64_t>(std::llround((extra - std::floor(extra)) * sst.size()));
    File c = File::open_rw(dir_ / "compaction.sst", true);
    uint64_t written = 0;
    for (uint64_t i = 0; i < whole; ++i) {
      c.write_at(0, sst);
      written += value_bytes;
    }
    if (part > 0) {
      c.write_at(0, std::string_view(sst).substr(0, part));
      written += static_cast<uint64_t>(std::llround((extra - std::floor(extra)) * value_bytes));
    }
    if (sync_mode_ == SyncMode::kPhysical) {
      c.sync();
      ++counters_->fsync_count;
    }
    counters_->value_bytes_compaction_emulated += written;
  }

  memtable_.clear();
  memtable_size_ = 0;
  // Flushed data no longer needs the log.
  wal_.truncate(0);
  wal_size_ = 0;
}

}  // namespace nezha
