#include "nezha/gc_controller.h"

#include <gtest/gtest.h>

#include <map>
#include <random>

#include "test_util.h"

namespace nezha {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Crash {
  std::string point;
};

// A node directory plus a model of everything appended to it.
class Node {
 public:
  explicit Node(SyncMode mode = SyncMode::kLogical) {
    opts.sync_mode = mode;
    opts.compaction_batch = 7;
    opts.trigger.size_threshold_bytes = 1ull << 40;
  }

  void open(CrashHook hook = {}) {
    gc.reset();
    gc = std::make_unique<GcController>(dir.path(), opts, &counters, std::move(hook));
    applied = gc->applied_floor();
    log.resize(gc->last_log_index());
  }

  // Simulated power loss: keep only what was synced.
  void tear(const std::vector<UnsyncedFile>& files) {
    for (const auto& f : files) {
      if (fs::exists(f.path)) fs::resize_file(f.path, f.durable_size);
    }
  }

  void put(const std::string& key, const std::string& value, uint64_t term = 1) {
    LogRecord r{term, gc->last_log_index() + 1, OpKind::kPut, key, value};
    gc->append(r);
    log.resize(r.index - 1);
    log.push_back(r);
  }

  void noop(uint64_t term = 1) {
    LogRecord r{term, gc->last_log_index() + 1, OpKind::kNoOp, "", ""};
    gc->append(r);
    log.resize(r.index - 1);
    log.push_back(r);
  }

  void apply_all() {
    for (uint64_t i = applied + 1; i <= gc->last_log_index(); ++i) gc->apply(i);
    applied = gc->last_log_index();
  }

  void drive_to_pre(TimeMs now = 0) {
    for (int guard = 0; gc->phase() != GcPhase::kPreGc; ++guard) {
      ASSERT_LT(guard, 100000);
      gc->gc_tick(now, applied, 0);
    }
  }

  std::map<std::string, std::string> expected(uint64_t upto) const {
    std::map<std::string, std::string> m;
    for (const auto& r : log) {
      if (r.index > upto) break;
      if (r.op == OpKind::kPut) m[r.key] = r.value;
    }
    return m;
  }
  std::map<std::string, std::string> expected() const { return expected(applied); }

  // Reads every storage module of the current routing, newest last.
  std::map<std::string, std::string> materialize() const {
    const ReadView v = gc->pin();
    std::map<std::string, std::string> m;
    if (v.run) {
      for (auto& [k, val] : v.run->range_scan_from("", std::string(8, '\xff'))) m[k] = val;
    }
    for (const auto& module : {v.old, v.current}) {
      if (!module) continue;
      for (const auto& e : module->index->entries()) {
        m[e.key] = module->segment->read_at(e.location).value;
      }
    }
    return m;
  }

  TempDir dir;
  IoCounters counters;
  StorageOptions opts;
  std::unique_ptr<GcController> gc;
  std::vector<LogRecord> log;
  uint64_t applied = 0;
};

std::string key_of(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "k%03d", i);
  return buf;
}

TEST(GcFlagsTest, RoundTripAndCorruption) {
  for (const GcFlags f : {GcFlags{}, GcFlags{true, false, 77}, GcFlags{true, true, 1ull << 40}}) {
    const std::string bytes = encode_gc_flags(f);
    EXPECT_EQ(bytes.size(), 1u + 1u + 8u + 4u);
    EXPECT_EQ(decode_gc_flags(bytes), f);
  }
  EXPECT_EQ((GcFlags{}.phase()), GcPhase::kPreGc);
  EXPECT_EQ((GcFlags{true, false, 0}.phase()), GcPhase::kDuringGc);
  EXPECT_EQ((GcFlags{true, true, 0}.phase()), GcPhase::kPostGc);

  std::string bad = encode_gc_flags(GcFlags{true, false, 5});
  bad[3] ^= 1;
  try {
    decode_gc_flags(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCorruptState);
  }
  EXPECT_THROW(decode_gc_flags("short"), Error);
}

TEST(GcTriggerTest, SizeThreshold) {
  GcTrigger t;
  EXPECT_EQ(t.size_threshold_bytes, 64ull * 1024 * 1024);
  EXPECT_TRUE(t.evaluate(64ull * 1024 * 1024, 0, 1e9));
  EXPECT_FALSE(t.evaluate(64ull * 1024 * 1024 - 1, 0, 0));
  t.size_threshold_bytes = 100;
  EXPECT_TRUE(t.evaluate(100, 0, 0));
  EXPECT_FALSE(t.evaluate(99, 0, 0));
}

TEST(GcTriggerTest, TimerWithLoadGate) {
  GcTrigger t;
  t.size_threshold_bytes = 1 << 30;
  t.timer_interval_ms = 1000;
  // No watermark: the timer alone fires.
  EXPECT_FALSE(t.evaluate(0, 999, 5000));
  EXPECT_TRUE(t.evaluate(0, 1000, 5000));
  t.load_low_watermark = 100;
  EXPECT_FALSE(t.evaluate(0, 5000, 101));
  EXPECT_TRUE(t.evaluate(0, 5000, 100));
  EXPECT_FALSE(t.evaluate(0, 500, 0));
}

TEST(GcControllerTest, ControllerFiresOnSegmentSize) {
  Node n;
  n.opts.trigger.size_threshold_bytes = 2000;
  n.open();
  int i = 0;
  while (n.gc->active_bytes() < 2000) {
    EXPECT_FALSE(n.gc->evaluate_triggers(0, 0));
    n.put(key_of(i++ % 10), std::string(100, 'v'));
  }
  EXPECT_TRUE(n.gc->evaluate_triggers(0, 0));
  n.apply_all();
  n.gc->gc_tick(0, n.applied, 0);
  EXPECT_EQ(n.gc->phase(), GcPhase::kDuringGc);
}

TEST(GcControllerTest, FullCycleRoutingAndFiles) {
  Node n;
  n.open();
  for (int i = 0; i < 40; ++i) n.put(key_of(i % 15), "a" + std::to_string(i));
  n.noop();
  n.apply_all();
  EXPECT_EQ(n.materialize(), n.expected());

  n.gc->begin_gc(10);
  const uint64_t seal = 41;
  EXPECT_EQ(n.gc->phase(), GcPhase::kDuringGc);
  EXPECT_EQ(n.gc->flags(), (GcFlags{true, false, seal}));
  EXPECT_TRUE(fs::exists(n.dir.path() / Segment::file_name(seal + 1)));
  EXPECT_THROW(n.gc->begin_gc(11), Error);

  // Writes continue into the new segment while compaction is pending.
  for (int i = 0; i < 10; ++i) n.put(key_of(i), "b" + std::to_string(i));
  n.apply_all();
  EXPECT_EQ(n.gc->pin().current->segment->base_index(), seal + 1);
  EXPECT_EQ(n.materialize(), n.expected());

  while (!n.gc->run_compaction_step(n.applied, 20)) {
    EXPECT_EQ(n.materialize(), n.expected());
  }
  EXPECT_EQ(n.gc->phase(), GcPhase::kPostGc);
  EXPECT_EQ(n.materialize(), n.expected());
  EXPECT_EQ(n.gc->snapshot().last_index, seal);
  EXPECT_TRUE(n.gc->snapshot().complete);
  // The run holds exactly the state at the seal.
  auto run = n.gc->snapshot_run();
  std::map<std::string, std::string> in_run;
  for (auto& [k, v] : run->range_scan_from("", "\xff")) in_run[k] = v;
  EXPECT_EQ(in_run, n.expected(seal));

  EXPECT_TRUE(n.gc->finish_gc(30));
  EXPECT_TRUE(n.gc->finish_gc(31));  // second call is a no-op
  EXPECT_EQ(n.gc->phase(), GcPhase::kPreGc);
  EXPECT_FALSE(fs::exists(n.dir.path() / Segment::file_name(1)));
  EXPECT_EQ(n.gc->first_log_index(), seal + 1);
  EXPECT_EQ(n.gc->term_at(seal), 1u);
  EXPECT_EQ(n.materialize(), n.expected());
  EXPECT_EQ(n.gc->gc_stats().cycles_completed, 1u);
  EXPECT_EQ(n.gc->gc_stats().last_during_ms, 10);
  EXPECT_EQ(n.gc->gc_stats().last_post_ms, 10);

  // Reopen: state comes back from the run plus replay of the new segment.
  n.open();
  EXPECT_EQ(n.gc->applied_floor(), seal);
  n.apply_all();
  EXPECT_EQ(n.materialize(), n.expected());
}

TEST(GcControllerTest, CompactionWaitsForApply) {
  Node n;
  n.open();
  for (int i = 0; i < 20; ++i) n.put(key_of(i), "v");
  n.gc->begin_gc(0);
  EXPECT_FALSE(n.gc->run_compaction_step(19, 0));
  EXPECT_FALSE(fs::exists(n.dir.path() / SortedRun::file_name(20)));
  try {
    n.gc->run_compaction(19, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUncommittedInput);
  }
  n.apply_all();
  EXPECT_TRUE(n.gc->run_compaction(n.applied, 0) != nullptr);
  EXPECT_EQ(n.gc->phase(), GcPhase::kPostGc);
}

TEST(GcControllerTest, TwoCyclesCarryPriorRun) {
  Node n;
  n.open();
  for (int cycle = 0; cycle < 3; ++cycle) {
    for (int i = 0; i < 30; ++i) n.put(key_of((i * 7 + cycle) % 25), std::to_string(cycle * 100 + i));
    n.apply_all();
    n.gc->begin_gc(0);
    for (int i = 0; i < 5; ++i) n.put(key_of(i + 40), "during" + std::to_string(cycle));
    n.apply_all();
    n.drive_to_pre();
    EXPECT_EQ(n.materialize(), n.expected());
    // Exactly one run and one segment remain.
    int runs = 0, segs = 0;
    for (auto& e : fs::directory_iterator(n.dir.path())) {
      const auto name = e.path().filename().string();
      runs += SortedRun::parse_file_name(name).has_value();
      segs += Segment::parse_file_name(name).has_value();
    }
    EXPECT_EQ(runs, 1);
    EXPECT_EQ(segs, 1);
  }
  EXPECT_EQ(n.gc->gc_stats().cycles_completed, 3u);
}

TEST(GcControllerTest, EmptyActiveGivesTrivialRun) {
  Node n;
  n.open();
  n.gc->begin_gc(0);
  EXPECT_EQ(n.gc->phase(), GcPhase::kPreGc);
  auto run = n.gc->snapshot_run();
  ASSERT_TRUE(run);
  EXPECT_TRUE(run->empty());
  EXPECT_EQ(run->snapshot().last_index, 0u);
  // Writes after the trivial cycle work normally.
  n.put("a", "1");
  n.apply_all();
  EXPECT_EQ(n.materialize(), n.expected());
  n.open();
  n.apply_all();
  EXPECT_EQ(n.materialize(), n.expected());
}

TEST(GcControllerTest, ConflictingTruncationAbortsGc) {
  Node n;
  n.open();
  for (int i = 0; i < 20; ++i) n.put(key_of(i), "old");
  n.apply_all();
  for (int i = 0; i < 10; ++i) n.put(key_of(i), "uncommitted");
  n.gc->begin_gc(0);
  const uint64_t seal = n.gc->flags().seal_index;
  EXPECT_EQ(seal, 30u);
  n.put("x", "after-seal");

  // Truncating above the seal stays in the new segment.
  n.gc->truncate_suffix(31);
  EXPECT_EQ(n.gc->phase(), GcPhase::kDuringGc);
  EXPECT_EQ(n.gc->last_log_index(), 30u);

  n.gc->truncate_suffix(25);
  EXPECT_EQ(n.gc->phase(), GcPhase::kPreGc);
  EXPECT_EQ(n.gc->flags(), GcFlags{});
  EXPECT_EQ(n.gc->last_log_index(), 24u);
  EXPECT_FALSE(fs::exists(n.dir.path() / Segment::file_name(31)));
  n.log.resize(24);
  n.put("y", "new-term", 2);
  n.apply_all();
  EXPECT_EQ(n.materialize(), n.expected());
  n.open();
  EXPECT_EQ(n.gc->last_log_index(), 25u);
}

TEST(GcControllerTest, FinishWaitsForPinnedReaders) {
  Node n;
  n.open();
  for (int i = 0; i < 10; ++i) n.put(key_of(i), "v");
  n.apply_all();
  n.gc->begin_gc(0);
  ReadView during = n.gc->pin();
  n.gc->run_compaction(n.applied, 0);
  EXPECT_FALSE(n.gc->finish_gc(0));
  EXPECT_EQ(n.gc->phase(), GcPhase::kPostGc);
  // The pinned view still reads the sealed segment.
  auto loc = during.old->index->get_location(key_of(3));
  ASSERT_TRUE(loc);
  EXPECT_EQ(during.old->segment->read_at(*loc).value, "v");
  during = ReadView{};
  EXPECT_TRUE(n.gc->finish_gc(0));
  EXPECT_EQ(n.gc->phase(), GcPhase::kPreGc);
}

TEST(GcControllerTest, DuringGcWithShortActiveIsCorrupt) {
  Node n;
  n.open();
  for (int i = 0; i < 5; ++i) n.put(key_of(i), "v");
  n.gc->sync();
  n.gc.reset();
  atomic_write_file(n.dir.path() / "gcstate.meta", encode_gc_flags(GcFlags{true, false, 50}),
                    SyncMode::kLogical);
  try {
    n.open();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCorruptState);
  }
}

TEST(GcControllerTest, PostGcWithoutRunIsCorrupt) {
  Node n;
  n.open();
  n.put("a", "b");
  n.gc->sync();
  n.gc.reset();
  atomic_write_file(n.dir.path() / "gcstate.meta", encode_gc_flags(GcFlags{true, true, 1}),
                    SyncMode::kLogical);
  EXPECT_THROW(n.open(), Error);
}

TEST(GcControllerTest, CheckpointShortensReplay) {
  Node n;
  n.open();
  for (int i = 0; i < 50; ++i) n.put(key_of(i % 20), std::to_string(i));
  n.apply_all();
  n.gc->sync();
  n.gc->checkpoint(n.applied);
  n.open();
  EXPECT_EQ(n.gc->applied_floor(), 50u);
  EXPECT_EQ(n.applied, 50u);
  EXPECT_EQ(n.materialize(), n.expected());
  n.put("late", "x");
  n.apply_all();
  EXPECT_EQ(n.materialize(), n.expected());
}

TEST(GcControllerTest, InstallSnapshotReplacesEverything) {
  // Build a run on a "leader".
  Node leader;
  leader.open();
  for (int i = 0; i < 30; ++i) leader.put(key_of(i), "L" + std::to_string(i), 3);
  leader.apply_all();
  leader.gc->begin_gc(0);
  leader.gc->run_compaction(leader.applied, 0);
  leader.gc->finish_gc(0);
  auto run = leader.gc->snapshot_run();

  Node follower;
  follower.open();
  for (int i = 0; i < 8; ++i) follower.put(key_of(i), "stale");
  follower.apply_all();
  follower.gc->begin_gc(0);
  follower.put("z", "new-seg");

  const fs::path incoming = follower.dir.path() / "snapshot.incoming";
  fs::copy_file(run->path(), incoming);
  follower.gc->install_snapshot(incoming);
  EXPECT_EQ(follower.gc->phase(), GcPhase::kPreGc);
  EXPECT_EQ(follower.gc->snapshot().last_index, 30u);
  EXPECT_EQ(follower.gc->term_at(30), 3u);
  EXPECT_EQ(follower.gc->first_log_index(), 31u);
  EXPECT_EQ(follower.gc->last_log_index(), 30u);
  EXPECT_EQ(follower.gc->applied_floor(), 30u);
  EXPECT_EQ(follower.materialize(), leader.expected(30));
  follower.open();
  EXPECT_EQ(follower.materialize(), leader.expected(30));
}

const char* const kCrashPoints[] = {"gc_started",   "new_segment",     "compaction_step",
                                    "run_complete", "gc_completed",    "deleted_segment",
                                    "deleted_old",  "flags_reset"};

TEST(GcControllerTest, CrashAtEveryPersistencePointRecovers) {
  int crashes = 0;
  for (const char* point : kCrashPoints) {
    for (int hit = 0; hit < 3; ++hit) {
      SCOPED_TRACE(std::string(point) + "#" + std::to_string(hit));
      Node n;
      int seen = 0;
      std::vector<UnsyncedFile> unsynced;
      n.open([&](std::string_view p) {
        if (p == point && seen++ == hit) {
          unsynced = n.gc->unsynced_files();
          throw Crash{std::string(p)};
        }
      });
      for (int i = 0; i < 60; ++i) n.put(key_of(i % 23), "pre" + std::to_string(i));
      n.apply_all();
      bool crashed = false;
      try {
        n.gc->begin_gc(0);
        for (int i = 0; i < 10; ++i) n.put(key_of(i), "during" + std::to_string(i));
        n.apply_all();
        n.gc->sync();
        n.drive_to_pre();
      } catch (const Crash&) {
        crashed = true;
      }
      if (!crashed) continue;  // point reached fewer than hit+1 times
      ++crashes;
      n.tear(unsynced);
      n.open();
      EXPECT_GE(n.gc->last_log_index(), 60u);
      n.apply_all();
      EXPECT_EQ(n.materialize(), n.expected());
      n.drive_to_pre();
      EXPECT_EQ(n.materialize(), n.expected());
      n.open();
      n.apply_all();
      EXPECT_EQ(n.materialize(), n.expected());
    }
  }
  // Every point fires at least once; compaction_step fires repeatedly.
  EXPECT_GE(crashes, static_cast<int>(std::size(kCrashPoints)) + 2);
}

// Property: with random writes, GC steps, truncations of uncommitted tails
// and crashes that drop unsynced bytes, the visible state always equals the
// fold of the applied log prefix.
TEST(GcControllerTest, RandomisedCrashRecoveryMatchesLogFold) {
  std::mt19937_64 rng(20261014);
  uint64_t cycles = 0, reopens = 0, aborts = 0;
  for (int trial = 0; trial < 40; ++trial) {
    SCOPED_TRACE(trial);
    Node n;
    n.opts.trigger.size_threshold_bytes = 1500 + rng() % 3000;
    n.opts.compaction_batch = 1 + rng() % 10;
    n.open();
    uint64_t term = 1;
    for (int step = 0; step < 400; ++step) {
      const int action = static_cast<int>(rng() % 100);
      if (action < 55) {
        n.put(key_of(static_cast<int>(rng() % 40)), testing::random_bytes(rng, rng() % 120), term);
      } else if (action < 70) {
        // Commit and apply a random prefix of what is appended.
        const uint64_t last = n.gc->last_log_index();
        if (last > n.applied) {
          const uint64_t upto = n.applied + 1 + rng() % (last - n.applied);
          for (uint64_t i = n.applied + 1; i <= upto; ++i) n.gc->apply(i);
          n.applied = upto;
        }
      } else if (action < 85) {
        n.gc->gc_tick(step, n.applied, 0);
      } else if (action < 90) {
        n.gc->sync();
      } else if (action < 94) {
        // Leader change drops part of the uncommitted tail.
        const uint64_t last = n.gc->last_log_index();
        if (last > n.applied) {
          const uint64_t from = n.applied + 1 + rng() % (last - n.applied);
          const bool during = n.gc->phase() == GcPhase::kDuringGc;
          n.gc->truncate_suffix(from);
          aborts += during && n.gc->phase() == GcPhase::kPreGc;
          n.log.resize(from - 1);
          ++term;
        }
      } else if (action < 97) {
        n.tear(n.gc->unsynced_files());
        cycles += n.gc->gc_stats().cycles_completed;
        ++reopens;
        n.open();
        ASSERT_GE(n.gc->last_log_index(), n.gc->applied_floor());
        ++term;
      } else {
        EXPECT_EQ(n.materialize(), n.expected());
      }
    }
    n.apply_all();
    EXPECT_EQ(n.materialize(), n.expected());
    n.drive_to_pre();
    EXPECT_EQ(n.materialize(), n.expected());
    cycles += n.gc->gc_stats().cycles_completed;
  }
  EXPECT_GT(cycles, 50u);
  EXPECT_GT(reopens, 50u);
  EXPECT_GT(aborts, 0u);
  std::printf("cycles=%llu reopens=%llu aborts=%llu\n", (unsigned long long)cycles,
              (unsigned long long)reopens, (unsigned long long)aborts);
}

}  // namespace
}  // namespace nezha
