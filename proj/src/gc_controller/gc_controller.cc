#include "nezha/gc_controller.h"

#include <algorithm>
#include <map>

#include "nezha/file.h"

namespace nezha {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMetaName = "gcstate.meta";

struct DirListing {
  std::map<uint64_t, fs::path> segments;
  std::map<uint64_t, fs::path> runs;
  std::map<uint64_t, fs::path> checkpoints;
};

DirListing list_dir(const fs::path& dir) {
  DirListing out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (auto base = Segment::parse_file_name(name)) {
      out.segments[*base] = entry.path();
    } else if (auto last = SortedRun::parse_file_name(name)) {
      out.runs[*last] = entry.path();
    } else if (auto applied = KeyIndex::parse_checkpoint_name(name)) {
      out.checkpoints[*applied] = entry.path();
    } else if (entry.path().extension() == ".tmp") {
      fs::remove(entry.path());
    }
  }
  return out;
}

void remove_quietly(const fs::path& path) {
  std::error_code ec;
  fs::remove(path, ec);
}

}  // namespace

const char* gc_phase_name(GcPhase phase) {
  switch (phase) {
    case GcPhase::kPreGc: return "PreGC";
    case GcPhase::kDuringGc: return "DuringGC";
    case GcPhase::kPostGc: return "PostGC";
  }
  return "?";
}

std::string encode_gc_flags(const GcFlags& flags) {
  std::string out;
  put_u8(out, flags.gc_started ? 1 : 0);
  put_u8(out, flags.gc_completed ? 1 : 0);
  put_le64(out, flags.seal_index);
  put_le32(out, crc32(out));
  return out;
}

GcFlags decode_gc_flags(std::string_view bytes) {
  if (bytes.size() != kGcMetaSize) {
    throw Error(ErrorCode::kCorruptState, "gcstate.meta has wrong size");
  }
  if (get_le32(bytes.data() + 10) != crc32(bytes.substr(0, 10))) {
    throw Error(ErrorCode::kCorruptState, "gcstate.meta checksum mismatch");
  }
  const auto b0 = static_cast<uint8_t>(bytes[0]);
  const auto b1 = static_cast<uint8_t>(bytes[1]);
  if (b0 > 1 || b1 > 1 || (b0 == 0 && b1 == 1)) {
    throw Error(ErrorCode::kCorruptState, "gcstate.meta has impossible flags");
  }
  return GcFlags{b0 == 1, b1 == 1, get_le64(bytes.data() + 2)};
}

bool GcTrigger::evaluate(uint64_t active_bytes, TimeMs elapsed_ms, double current_load) const {
  if (active_bytes >= size_threshold_bytes) return true;
  if (elapsed_ms < timer_interval_ms) return false;
  return !load_low_watermark || current_load <= *load_low_watermark;
}

GcController::GcController(fs::path dir, StorageOptions options, IoCounters* counters,
                           CrashHook hook)
    : dir_(std::move(dir)), options_(options), counters_(counters), hook_(std::move(hook)) {
  options_.run.sync_mode = options_.sync_mode;
  fs::create_directories(dir_);
  recover();
}

GcController::~GcController() = default;

void GcController::crash_point(std::string_view point) {
  if (hook_) hook_(point);
}

void GcController::persist_flags(const GcFlags& flags) {
  atomic_write_file(dir_ / kMetaName, encode_gc_flags(flags), options_.sync_mode);
  flags_ = flags;
}

std::shared_ptr<StorageModule> GcController::make_module(SegmentPtr seg) const {
  auto module = std::make_shared<StorageModule>();
  module->segment = std::move(seg);
  module->index = std::make_shared<KeyIndex>(counters_);
  return module;
}

void GcController::remove_checkpoints() {
  for (const auto& [applied, path] : list_dir(dir_).checkpoints) remove_quietly(path);
}

void GcController::publish_routing() {
  ReadView view;
  view.phase = flags_.phase();
  switch (view.phase) {
    case GcPhase::kPreGc:
      view.current = active_;
      view.run = prior_run_;
      break;
    case GcPhase::kDuringGc:
      view.current = new_;
      view.old = active_;
      view.run = prior_run_;
      break;
    case GcPhase::kPostGc:
      view.current = new_;
      view.run = current_run_;
      break;
  }
  {
    std::lock_guard lock(routing_mu_);
    routing_ = std::move(view);
  }
  phase_.store(flags_.phase(), std::memory_order_release);
}

ReadView GcController::pin() const {
  std::lock_guard lock(routing_mu_);
  return routing_;
}

GcFlags GcController::flags() const { return flags_; }

void GcController::recover() {
  const SegmentOptions seg_opts{options_.sync_mode};
  const std::string meta = read_file(dir_ / kMetaName);
  flags_ = meta.empty() ? GcFlags{} : decode_gc_flags(meta);
  DirListing files = list_dir(dir_);

  auto complete = [&](uint64_t last) { return read_run_footer(files.runs.at(last)).has_value(); };

  // A run that finished before its flag reached disk only needs the flag.
  if (flags_.phase() == GcPhase::kDuringGc && files.runs.count(flags_.seal_index) &&
      complete(flags_.seal_index)) {
    persist_flags(GcFlags{true, true, flags_.seal_index});
  }

  if (flags_.phase() == GcPhase::kPostGc) {
    // Redo the idempotent cleanup, then continue as PreGC.
    const uint64_t seal = flags_.seal_index;
    if (!files.runs.count(seal) || !complete(seal)) {
      throw Error(ErrorCode::kCorruptState, "PostGC without a complete sorted-" +
                                                std::to_string(seal) + ".run");
    }
    for (const auto& [base, path] : files.segments) {
      if (base != seal + 1) remove_quietly(path);
    }
    for (const auto& [last, path] : files.runs) {
      if (last != seal) remove_quietly(path);
    }
    remove_checkpoints();
    persist_flags(GcFlags{});
    files = list_dir(dir_);
  }

  if (flags_.phase() == GcPhase::kDuringGc) {
    const uint64_t seal = flags_.seal_index;
    std::optional<uint64_t> prior;
    for (const auto& [last, path] : files.runs) {
      if (last < seal && complete(last)) prior = last;
    }
    for (const auto& [last, path] : files.runs) {
      if (last != seal && last != prior) remove_quietly(path);
    }
    if (prior) prior_run_ = SortedRun::open(files.runs.at(*prior), options_.run, counters_);
    const uint64_t active_base = prior ? *prior + 1 : 1;
    if (!files.segments.count(active_base)) {
      throw Error(ErrorCode::kCorruptState,
                  "DuringGC without active segment " + std::to_string(active_base));
    }
    active_ = make_module(Segment::open(files.segments.at(active_base), seg_opts, counters_));
    if (active_->segment->last_index() != seal) {
      throw Error(ErrorCode::kCorruptState,
                  "active segment ends at " + std::to_string(active_->segment->last_index()) +
                      " but seal index is " + std::to_string(seal));
    }
    active_->segment->seal();
    for (const auto& [base, path] : files.segments) {
      if (base != active_base && base != seal + 1) remove_quietly(path);
    }
    SegmentPtr fresh = files.segments.count(seal + 1)
                           ? Segment::open(files.segments.at(seal + 1), seg_opts, counters_)
                           : Segment::create(dir_, seal + 1, seg_opts, counters_);
    new_ = make_module(std::move(fresh));
    if (files.runs.count(seal)) resume_point_ = recover_resume_point(files.runs.at(seal));
    remove_checkpoints();
    applied_floor_ = prior ? *prior : 0;
    publish_routing();
    return;
  }

  // PreGC: the newest complete run is the snapshot; anything else is a
  // leftover of an aborted cycle or an interrupted install.
  std::optional<uint64_t> prior;
  for (const auto& [last, path] : files.runs) {
    if (complete(last)) prior = last;
  }
  for (const auto& [last, path] : files.runs) {
    if (last != prior) remove_quietly(path);
  }
  if (prior) prior_run_ = SortedRun::open(files.runs.at(*prior), options_.run, counters_);
  applied_floor_ = prior ? *prior : 0;
  const uint64_t base = applied_floor_ + 1;
  for (const auto& [b, path] : files.segments) {
    if (b != base) remove_quietly(path);
  }
  SegmentPtr seg = files.segments.count(base)
                       ? Segment::open(files.segments.at(base), seg_opts, counters_)
                       : Segment::create(dir_, base, seg_opts, counters_);
  active_ = make_module(std::move(seg));

  // Newest usable checkpoint; it must describe a prefix of this segment.
  for (auto it = files.checkpoints.rbegin(); it != files.checkpoints.rend(); ++it) {
    const auto [applied, path] = *it;
    if (applied < applied_floor_ || applied > active_->segment->last_index()) continue;
    std::unique_ptr<KeyIndex> loaded;
    try {
      loaded = KeyIndex::load_checkpoint(path, counters_);
    } catch (const Error&) {
      continue;
    }
    const auto entries = loaded->entries();
    const bool fits = std::all_of(entries.begin(), entries.end(), [&](const IndexEntry& e) {
      return e.location.segment_id == base &&
             e.location.offset + e.location.length <= active_->segment->next_offset();
    });
    if (!fits) continue;
    active_->index = std::shared_ptr<KeyIndex>(std::move(loaded));
    applied_floor_ = applied;
    break;
  }
  for (const auto& [applied, path] : files.checkpoints) {
    if (applied != applied_floor_) remove_quietly(path);
  }
  publish_routing();
}

uint64_t GcController::first_log_index() const { return active_->segment->base_index(); }

uint64_t GcController::last_log_index() const {
  return (new_ ? new_ : active_)->segment->last_index();
}

SegmentPtr GcController::segment_for(uint64_t index) const {
  if (new_ && index >= new_->segment->base_index()) return new_->segment;
  if (index >= active_->segment->base_index() && index <= active_->segment->last_index()) {
    return active_->segment;
  }
  return nullptr;
}

std::optional<uint64_t> GcController::term_at(uint64_t index) const {
  if (index == 0) return 0;
  if (auto seg = segment_for(index)) {
    if (auto t = seg->term_of(index)) return t;
  }
  // Both run boundaries are known in PostGC: the prior run's ends where the
  // old segment begins, the new run's at the seal.
  for (const auto& run : {prior_run_, current_run_}) {
    if (run && index == run->snapshot().last_index) return run->snapshot().last_term;
  }
  return std::nullopt;
}

LogRecord GcController::read_entry(uint64_t index) const {
  auto seg = segment_for(index);
  std::optional<RecordLocation> loc;
  if (seg) loc = seg->location_of(index);
  if (!loc) {
    throw Error(ErrorCode::kSegmentMissing, "no log entry at index " + std::to_string(index));
  }
  return seg->read_at(*loc);
}

RecordLocation GcController::append(const LogRecord& record) {
  auto& target = flags_.phase() == GcPhase::kPreGc ? active_ : new_;
  return target->segment->append(record, false);
}

void GcController::sync() {
  (new_ ? new_ : active_)->segment->sync();
}

void GcController::truncate_suffix(uint64_t from_index) {
  if (from_index > last_log_index()) return;
  if (from_index < first_log_index()) {
    throw Error(ErrorCode::kCorruptState,
                "truncation below the log start at " + std::to_string(from_index));
  }
  switch (flags_.phase()) {
    case GcPhase::kPreGc:
      active_->segment->truncate_from_index(from_index);
      break;
    case GcPhase::kDuringGc:
      if (from_index > flags_.seal_index) {
        new_->segment->truncate_from_index(from_index);
      } else {
        // The sealed prefix was never committed past from_index; give up on
        // this cycle and let the active segment take writes again.
        abort_gc();
        active_->segment->truncate_from_index(from_index);
      }
      break;
    case GcPhase::kPostGc:
      if (from_index <= flags_.seal_index) {
        throw Error(ErrorCode::kCorruptState, "truncation into the compacted prefix");
      }
      new_->segment->truncate_from_index(from_index);
      break;
  }
}

void GcController::abort_gc() {
  const uint64_t seal = flags_.seal_index;
  persist_flags(GcFlags{});
  crash_point("gc_aborted");
  builder_.reset();
  resume_point_.reset();
  remove_quietly(dir_ / SortedRun::file_name(seal));
  if (new_) new_->segment->remove_file();
  new_.reset();
  active_->segment->unseal();
  publish_routing();
}

SnapshotMeta GcController::snapshot() const {
  if (current_run_) return current_run_->snapshot();
  if (prior_run_) return prior_run_->snapshot();
  return SnapshotMeta{};
}

SortedRunPtr GcController::snapshot_run() const {
  return current_run_ ? current_run_ : prior_run_;
}

AppliedRecord GcController::apply(uint64_t index) {
  auto seg = segment_for(index);
  std::optional<RecordLocation> loc;
  if (seg) loc = seg->location_of(index);
  if (!loc) {
    throw Error(ErrorCode::kIndexGap, "apply of missing entry " + std::to_string(index));
  }
  AppliedRecord out;
  const RecordHeader header = seg->read_header_at(*loc, &out.key);
  out.index = index;
  out.term = header.term;
  out.op = header.op;
  out.crc = header.crc;
  out.location = *loc;
  if (header.op == OpKind::kPut) {
    auto& module = (new_ && seg == new_->segment) ? new_ : active_;
    module->index->put_mapping(out.key, *loc, index);
  }
  return out;
}

uint64_t GcController::active_bytes() const {
  return flags_.phase() == GcPhase::kPreGc ? active_->segment->next_offset() : 0;
}

bool GcController::evaluate_triggers(TimeMs now, double current_load) const {
  if (!last_gc_end_ms_) last_gc_end_ms_ = now;
  return options_.trigger.evaluate(active_bytes(), now - *last_gc_end_ms_, current_load);
}

void GcController::begin_gc(TimeMs now) {
  if (flags_.phase() != GcPhase::kPreGc) {
    throw Error(ErrorCode::kAlreadyRunning, "GC already in " +
                                                std::string(gc_phase_name(flags_.phase())));
  }
  if (active_->segment->empty()) {
    // Nothing to fold in. The first cycle still produces the empty run so a
    // snapshot exists; later cycles would reproduce the prior run verbatim.
    if (!prior_run_) {
      prior_run_ = build_merge(dir_, MergeInput{}, std::nullopt, options_.run, counters_);
      stats_.cycles_completed++;
    }
    last_gc_end_ms_ = now;
    return;
  }
  active_->segment->sync();
  const uint64_t seal = active_->segment->last_index();
  persist_flags(GcFlags{true, false, seal});
  crash_point("gc_started");
  new_ = make_module(Segment::create(dir_, seal + 1, SegmentOptions{options_.sync_mode}, counters_));
  crash_point("new_segment");
  active_->segment->seal();
  cycle_started_ms_ = now;
  stats_.last_begin_ms = now;
  publish_routing();
}

bool GcController::run_compaction_step(uint64_t applied_index, TimeMs now) {
  if (flags_.phase() != GcPhase::kDuringGc) return flags_.phase() == GcPhase::kPostGc;
  const uint64_t seal = flags_.seal_index;
  if (applied_index < seal) return false;
  if (!builder_) {
    MergeInput input{prior_run_, {active_->segment}, seal, applied_index};
    builder_ = std::make_unique<RunBuilder>(dir_, std::move(input), resume_point_, options_.run,
                                            counters_);
    resume_point_.reset();
  }
  const bool done = builder_->step(options_.compaction_batch);
  crash_point("compaction_step");
  if (!done) return false;
  current_run_ = builder_->open_result();
  builder_.reset();
  crash_point("run_complete");
  persist_flags(GcFlags{true, true, seal});
  crash_point("gc_completed");
  run_completed_ms_ = now;
  stats_.last_during_ms = now - cycle_started_ms_;
  publish_routing();
  return true;
}

SortedRunPtr GcController::run_compaction(uint64_t applied_index, TimeMs now) {
  if (flags_.phase() == GcPhase::kDuringGc && applied_index < flags_.seal_index) {
    throw Error(ErrorCode::kUncommittedInput, "compaction needs apply through the seal index");
  }
  while (!run_compaction_step(applied_index, now)) {
  }
  return current_run_;
}

bool GcController::finish_gc(TimeMs now) {
  if (flags_.phase() == GcPhase::kPreGc) return true;
  if (flags_.phase() != GcPhase::kPostGc) return false;
  // Readers that captured DuringGC routing still hold the sealed segment.
  if (active_.use_count() > 1) return false;

  active_->segment->remove_file();
  crash_point("deleted_segment");
  if (prior_run_) remove_quietly(prior_run_->path());
  remove_checkpoints();
  crash_point("deleted_old");
  persist_flags(GcFlags{});
  crash_point("flags_reset");

  active_ = std::move(new_);
  new_.reset();
  prior_run_ = std::move(current_run_);
  current_run_.reset();
  stats_.cycles_completed++;
  stats_.last_post_ms = now - run_completed_ms_;
  last_gc_end_ms_ = now;
  publish_routing();
  return true;
}

void GcController::gc_tick(TimeMs now, uint64_t applied_index, double current_load) {
  switch (flags_.phase()) {
    case GcPhase::kPreGc:
      if (options_.gc_enabled && evaluate_triggers(now, current_load)) begin_gc(now);
      break;
    case GcPhase::kDuringGc:
      run_compaction_step(applied_index, now);
      break;
    case GcPhase::kPostGc:
      finish_gc(now);
      break;
  }
}

void GcController::checkpoint(uint64_t applied_index) {
  if (flags_.phase() != GcPhase::kPreGc) return;
  if (applied_index < active_->segment->base_index() - 1) return;
  if (applied_index > active_->segment->last_index()) return;
  active_->index->write_checkpoint(dir_, applied_index, options_.sync_mode);
  for (const auto& [applied, path] : list_dir(dir_).checkpoints) {
    if (applied != applied_index) remove_quietly(path);
  }
}

void GcController::install_snapshot(const fs::path& incoming_run) {
  auto footer = read_run_footer(incoming_run);
  if (!footer) throw Error(ErrorCode::kCorruptState, "incomplete snapshot " + incoming_run.string());
  const uint64_t last = footer->last_index;
  builder_.reset();
  resume_point_.reset();

  const fs::path target = dir_ / SortedRun::file_name(last);
  fs::rename(incoming_run, target);
  crash_point("snapshot_renamed");
  persist_flags(GcFlags{});
  crash_point("snapshot_flags");

  if (new_) new_->segment->remove_file();
  active_->segment->remove_file();
  new_.reset();
  current_run_.reset();
  const DirListing files = list_dir(dir_);
  for (const auto& [l, path] : files.runs) {
    if (l != last) remove_quietly(path);
  }
  for (const auto& [b, path] : files.segments) remove_quietly(path);
  remove_checkpoints();

  prior_run_ = SortedRun::open(target, options_.run, counters_);
  active_ = make_module(Segment::create(dir_, last + 1, SegmentOptions{options_.sync_mode}, counters_));
  applied_floor_ = last;
  publish_routing();
}

std::vector<UnsyncedFile> GcController::unsynced_files() const {
  std::vector<UnsyncedFile> out;
  for (const auto* module : {active_.get(), new_.get()}) {
    if (module && module->segment->next_offset() > module->segment->durable_offset()) {
      out.push_back({module->segment->path(), module->segment->durable_offset()});
    }
  }
  if (builder_) out.push_back({builder_->path(), builder_->durable_offset()});
  return out;
}

}  // namespace nezha
