#include "nezha/raft.h"

#include <gtest/gtest.h>

#include <deque>
#include <map>
#include <random>
#include <set>

#include "nezha/file.h"
#include "test_util.h"

namespace nezha {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

// Just enough network to drive RaftNodes deterministically: messages are
// delivered in FIFO order at the current time unless a link is cut.
class TestCluster {
 public:
  explicit TestCluster(size_t n, uint64_t seed = 7, size_t chunk = 1 << 20)
      : chunk_bytes(chunk), seed_(seed) {
    for (NodeId id = 1; id <= n; ++id) members_.push_back(id);
    for (NodeId id : members_) {
      dirs_.emplace(id, std::make_unique<TempDir>());
      start(id);
    }
  }

  void start(NodeId id) {
    StorageOptions so;
    so.sync_mode = SyncMode::kLogical;
    so.trigger.size_threshold_bytes = 1ull << 40;
    so.compaction_batch = 1 << 20;
    auto& slot = nodes_[id];
    slot.raft.reset();
    slot.storage.reset();
    slot.storage = std::make_unique<GcController>(dirs_.at(id)->path(), so, &slot.counters);
    RaftOptions ro;
    ro.id = id;
    ro.members = members_;
    ro.seed = seed_;
    ro.snapshot_chunk_bytes = chunk_bytes;
    slot.raft = std::make_unique<RaftNode>(ro, slot.storage.get(), now, &trace);
    slot.up = true;
  }

  void crash(NodeId id) {
    auto& slot = nodes_.at(id);
    slot.raft.reset();
    slot.storage.reset();
    slot.up = false;
  }

  RaftNode& raft(NodeId id) { return *nodes_.at(id).raft; }
  GcController& storage(NodeId id) { return *nodes_.at(id).storage; }
  IoCounters& counters(NodeId id) { return nodes_.at(id).counters; }
  bool up(NodeId id) const { return nodes_.at(id).up; }

  void cut(NodeId a, NodeId b) {
    cut_.insert({a, b});
    cut_.insert({b, a});
  }
  void isolate(NodeId a) {
    for (NodeId b : members_) {
      if (b != a) cut(a, b);
    }
  }
  void heal() { cut_.clear(); }

  // Optional filter: return false to drop.
  std::function<bool(const Envelope&)> filter;

  void step() {
    for (auto& [id, slot] : nodes_) {
      if (!slot.up) continue;
      slot.raft->tick(now);
    }
    for (int round = 0; round < 1000; ++round) {
      bool any = false;
      for (auto& [id, slot] : nodes_) {
        if (!slot.up) continue;
        slot.raft->flush(now);
        for (auto& env : slot.raft->take_messages()) queue_.push_back(std::move(env));
        for (auto& a : slot.raft->take_applied()) applied[id].push_back(a);
        for (auto& r : slot.raft->take_reads()) reads[id].push_back(r);
      }
      while (!queue_.empty()) {
        Envelope env = std::move(queue_.front());
        queue_.pop_front();
        if (cut_.count({env.from, env.to}) || !nodes_.at(env.to).up) continue;
        if (filter && !filter(env)) continue;
        nodes_.at(env.to).raft->receive(env, now);
        any = true;
      }
      if (!any) break;
    }
  }

  void run_for(TimeMs ms, TimeMs dt = 5) {
    const TimeMs end = now + ms;
    while (now < end) {
      now += dt;
      step();
    }
  }

  std::optional<NodeId> leader() {
    std::optional<NodeId> out;
    uint64_t best = 0;
    for (auto& [id, slot] : nodes_) {
      if (slot.up && slot.raft->is_leader() && slot.raft->term() >= best) {
        best = slot.raft->term();
        out = id;
      }
    }
    return out;
  }

  NodeId wait_leader(TimeMs limit = 5000) {
    for (TimeMs t = 0; t < limit; t += 5) {
      run_for(5);
      if (auto l = leader()) return *l;
    }
    ADD_FAILURE() << "no leader";
    return 0;
  }

  // Key -> value through the node's storage modules.
  std::map<std::string, std::string> state(NodeId id) {
    const ReadView v = storage(id).pin();
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

  size_t chunk_bytes;
  TimeMs now = 0;
  VectorTraceSink trace;
  std::map<NodeId, std::vector<AppliedRecord>> applied;
  std::map<NodeId, std::vector<ReadResult>> reads;

 private:
  struct Slot {
    IoCounters counters;
    std::unique_ptr<GcController> storage;
    std::unique_ptr<RaftNode> raft;
    bool up = false;
  };

  uint64_t seed_;
  std::vector<NodeId> members_;
  std::map<NodeId, std::unique_ptr<TempDir>> dirs_;
  std::map<NodeId, Slot> nodes_;
  std::set<std::pair<NodeId, NodeId>> cut_;
  std::deque<Envelope> queue_;
};

// A lone node harness that lets tests hand-craft messages.
struct Solo {
  explicit Solo(std::vector<NodeId> members = {1, 2, 3}) {
    so.sync_mode = SyncMode::kLogical;
    storage = std::make_unique<GcController>(dir.path(), so, &counters);
    RaftOptions ro;
    ro.id = 1;
    ro.members = std::move(members);
    raft = std::make_unique<RaftNode>(ro, storage.get(), 0);
  }

  template <typename Reply>
  Reply deliver(NodeId from, RaftMessage msg) {
    raft->receive(Envelope{from, 1, std::move(msg)}, 0);
    raft->flush(0);
    auto out = raft->take_messages();
    EXPECT_EQ(out.size(), 1u);
    return std::get<Reply>(out.at(0).msg);
  }

  TempDir dir;
  IoCounters counters;
  StorageOptions so;
  std::unique_ptr<GcController> storage;
  std::unique_ptr<RaftNode> raft;
};

LogRecord put(uint64_t term, uint64_t index, std::string k, std::string v) {
  return LogRecord{term, index, OpKind::kPut, std::move(k), std::move(v)};
}

TEST(RaftCodecTest, EveryMessageRoundTrips) {
  std::vector<RaftMessage> msgs = {
      RequestVote{5, 2, 100, 4},
      VoteReply{5, true},
      AppendEntries{7, 3, 10, 6, {put(7, 11, "a", "1"), put(7, 12, "bb", std::string(3000, 'x'))}, 9, 44},
      AppendEntries{7, 3, 10, 6, {}, 9, 0},
      AppendReply{7, false, 0, 8, 44},
      InstallSnapshot{8, 1, 500, 7, 4096, 1024, std::string(1024, 'z')},
      InstallReply{8, 500, 2048, false},
  };
  for (const auto& m : msgs) {
    const Envelope env{1, 2, m};
    const std::string bytes = encode_envelope(env);
    EXPECT_EQ(decode_envelope(bytes), env) << message_name(m);
    EXPECT_THROW(decode_envelope(bytes.substr(0, bytes.size() - 1)), Error);
    EXPECT_THROW(decode_envelope(bytes + "x"), Error);
  }
  std::string bad = encode_envelope(Envelope{1, 2, VoteReply{}});
  bad[0] = 9;
  EXPECT_THROW(decode_envelope(bad), Error);
}

TEST(RaftCodecTest, NonContiguousEntriesRejected) {
  AppendEntries ae{1, 1, 0, 0, {put(1, 1, "a", ""), put(1, 3, "b", "")}, 0, 0};
  EXPECT_THROW(decode_envelope(encode_envelope(Envelope{1, 2, ae})), Error);
}

TEST(RaftCodecTest, TermStateFile) {
  const TermState s{42, 3};
  const std::string bytes = encode_term_state(s);
  EXPECT_EQ(bytes.size(), 8u + 8u + 4u);
  EXPECT_EQ(decode_term_state(bytes), s);
  std::string bad = bytes;
  bad[0] ^= 1;
  EXPECT_THROW(decode_term_state(bad), Error);
}

TEST(RaftVoteTest, ShorterLogSameTermDenied) {
  Solo s;
  s.raft->receive(Envelope{2, 1, AppendEntries{1, 2, 0, 0, {put(1, 1, "a", "1"), put(1, 2, "b", "2")}, 0, 0}}, 0);
  s.raft->flush(0);
  s.raft->take_messages();
  auto r = s.deliver<VoteReply>(3, RequestVote{2, 3, 1, 1});
  EXPECT_FALSE(r.granted);
  EXPECT_EQ(r.term, 2u);
}

TEST(RaftVoteTest, HigherLastTermGranted) {
  Solo s;
  s.raft->receive(Envelope{2, 1, AppendEntries{1, 2, 0, 0, {put(1, 1, "a", "1"), put(1, 2, "b", "2")}, 0, 0}}, 0);
  s.raft->flush(0);
  s.raft->take_messages();
  auto r = s.deliver<VoteReply>(3, RequestVote{3, 3, 1, 2});
  EXPECT_TRUE(r.granted);
  EXPECT_EQ(s.raft->voted_for(), 3u);
}

TEST(RaftVoteTest, SecondCandidateSameTermDeniedAndVotePersists) {
  Solo s;
  EXPECT_TRUE(s.deliver<VoteReply>(2, RequestVote{4, 2, 0, 0}).granted);
  EXPECT_FALSE(s.deliver<VoteReply>(3, RequestVote{4, 3, 0, 0}).granted);
  EXPECT_TRUE(s.deliver<VoteReply>(2, RequestVote{4, 2, 0, 0}).granted);  // retry is fine
  // The grant reached raft.meta before the reply.
  EXPECT_EQ(decode_term_state(read_file(s.dir.path() / "raft.meta")), (TermState{4, 2}));
  s.raft = std::make_unique<RaftNode>(RaftOptions{.id = 1, .members = {1, 2, 3}}, s.storage.get(), 0);
  EXPECT_EQ(s.raft->term(), 4u);
  EXPECT_FALSE(s.deliver<VoteReply>(3, RequestVote{4, 3, 0, 0}).granted);
}

TEST(RaftAppendTest, StaleTermRejected) {
  Solo s;
  s.deliver<VoteReply>(2, RequestVote{5, 2, 0, 0});
  auto r = s.deliver<AppendReply>(3, AppendEntries{4, 3, 0, 0, {put(4, 1, "a", "1")}, 0, 0});
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.term, 5u);
  EXPECT_EQ(s.storage->last_log_index(), 0u);
}

TEST(RaftAppendTest, PrevMismatchGivesConflictIndex) {
  Solo s;
  s.deliver<AppendReply>(2, AppendEntries{1, 2, 0, 0, {put(1, 1, "a", ""), put(1, 2, "b", ""), put(1, 3, "c", "")}, 0, 0});
  // Leader of term 3 believes index 3 has term 2.
  auto r = s.deliver<AppendReply>(2, AppendEntries{3, 2, 3, 2, {put(3, 4, "d", "")}, 0, 0});
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.conflict_index, 1u);  // whole term-1 run is suspect
  // Beyond our log: retry right after our last entry.
  r = s.deliver<AppendReply>(2, AppendEntries{3, 2, 9, 3, {}, 0, 0});
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.conflict_index, 4u);
}

TEST(RaftAppendTest, ConflictingSuffixIsTruncated) {
  Solo s;
  s.deliver<AppendReply>(2, AppendEntries{1, 2, 0, 0, {put(1, 1, "a", "x"), put(1, 2, "b", "y"), put(1, 3, "c", "z")}, 1, 0});
  auto r = s.deliver<AppendReply>(3, AppendEntries{2, 3, 1, 1, {put(2, 2, "b", "NEW")}, 2, 0});
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.match_index, 2u);
  EXPECT_EQ(s.storage->last_log_index(), 2u);
  EXPECT_EQ(s.storage->read_entry(2).value, "NEW");
  EXPECT_EQ(s.raft->commit_index(), 2u);
  auto applied = s.raft->take_applied();
  ASSERT_EQ(applied.size(), 2u);
  EXPECT_EQ(applied[1].term, 2u);
}

TEST(RaftAppendTest, DuplicateDeliveryIsIdempotent) {
  Solo s;
  const AppendEntries ae{1, 2, 0, 0, {put(1, 1, "a", "1"), put(1, 2, "b", "2"), put(1, 3, "c", "3")}, 2, 0};
  s.deliver<AppendReply>(2, ae);
  const std::string before = read_file(s.dir.path() / Segment::file_name(1));
  const uint64_t bytes_before = s.counters.value_bytes_valuelog;
  auto r = s.deliver<AppendReply>(2, ae);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(read_file(s.dir.path() / Segment::file_name(1)), before);
  EXPECT_EQ(s.counters.value_bytes_valuelog, bytes_before);
  // An older, shorter copy does not cut the log either.
  r = s.deliver<AppendReply>(2, AppendEntries{1, 2, 0, 0, {put(1, 1, "a", "1")}, 2, 0});
  EXPECT_TRUE(r.success);
  EXPECT_EQ(s.storage->last_log_index(), 3u);
  EXPECT_EQ(read_file(s.dir.path() / Segment::file_name(1)), before);
}

TEST(RaftNodeTest, SingleNodeElectsItselfAndCommits) {
  TestCluster c(1);
  const NodeId l = c.wait_leader();
  EXPECT_EQ(l, 1u);
  uint64_t prev = c.raft(l).propose("k0", "v0", c.now).index;
  uint64_t value_bytes = 2;
  for (int i = 1; i < 5; ++i) {
    const std::string v = "value" + std::to_string(i);
    const uint64_t idx = c.raft(l).propose("k" + std::to_string(i), v, c.now).index;
    EXPECT_EQ(idx, prev + 1);
    prev = idx;
    value_bytes += v.size();
  }
  c.run_for(10);
  EXPECT_EQ(c.raft(l).commit_index(), prev);
  EXPECT_EQ(c.raft(l).last_applied(), prev);
  EXPECT_EQ(c.state(l).at("k3"), "value3");
  // Each value reached the disk once, in the log append; apply added none.
  EXPECT_EQ(c.counters(l).value_bytes_valuelog, value_bytes);
}

TEST(RaftNodeTest, LeaderWithinTimeoutBounds) {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    TestCluster c(3, seed);
    c.run_for(300);
    // Split votes are possible but rare with these timeouts.
    c.run_for(700);
    EXPECT_TRUE(c.leader().has_value()) << seed;
  }
}

TEST(RaftNodeTest, MajorityCommitsMinorityDoesNot) {
  TestCluster c(3);
  const NodeId l = c.wait_leader();
  const NodeId f1 = l % 3 + 1, f2 = f1 % 3 + 1;
  c.cut(l, f1);
  const uint64_t idx = c.raft(l).propose("a", "1", c.now).index;
  c.run_for(20);
  EXPECT_GE(c.raft(l).commit_index(), idx);  // leader + f2 is 2 of 3

  c.cut(l, f2);
  const uint64_t idx2 = c.raft(l).propose("b", "2", c.now).index;
  c.run_for(100);
  EXPECT_LT(c.raft(l).commit_index(), idx2);
  EXPECT_EQ(c.raft(l).last_applied(), idx2 - 1);
}

TEST(RaftNodeTest, NotLeaderCarriesHint) {
  TestCluster c(3);
  const NodeId l = c.wait_leader();
  c.run_for(100);
  const NodeId f = l % 3 + 1;
  try {
    c.raft(f).propose("a", "b", c.now);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotLeader);
  }
  EXPECT_EQ(c.raft(f).leader_hint(), l);
  EXPECT_THROW(c.raft(f).begin_read(c.now), Error);
}

TEST(RaftNodeTest, ReplicatesAndAllNodesAgree) {
  TestCluster c(3);
  const NodeId l = c.wait_leader();
  std::map<std::string, std::string> shadow;
  for (int i = 0; i < 200; ++i) {
    const std::string k = "k" + std::to_string(i % 37), v = std::to_string(i);
    c.raft(l).propose(k, v, c.now);
    shadow[k] = v;
    if (i % 10 == 0) c.run_for(5);
  }
  c.run_for(200);
  for (NodeId id = 1; id <= 3; ++id) {
    EXPECT_EQ(c.state(id), shadow) << id;
    EXPECT_EQ(c.raft(id).last_applied(), c.raft(l).commit_index());
  }
  // Offset agreement: every node's index decodes to the same tuple.
  for (const auto& [k, v] : shadow) {
    std::optional<LogRecord> first;
    for (NodeId id = 1; id <= 3; ++id) {
      const ReadView view = c.storage(id).pin();
      auto loc = view.current->index->get_location(k);
      ASSERT_TRUE(loc);
      LogRecord r = view.current->segment->read_at(*loc);
      if (!first) first = r;
      EXPECT_EQ(r, *first);
    }
  }
}

TEST(RaftNodeTest, NewLeaderOverwritesStaleSuffix) {
  TestCluster c(3);
  const NodeId old = c.wait_leader();
  c.run_for(50);
  c.isolate(old);
  // These never reach a majority.
  for (int i = 0; i < 5; ++i) c.raft(old).propose("lost" + std::to_string(i), "x", c.now);
  c.run_for(20);
  NodeId fresh = 0;
  for (TimeMs t = 0; t < 3000 && !fresh; t += 5) {
    c.run_for(5);
    for (NodeId id = 1; id <= 3; ++id) {
      if (id != old && c.raft(id).is_leader()) fresh = id;
    }
  }
  ASSERT_NE(fresh, 0u);
  c.raft(fresh).propose("kept", "y", c.now);
  c.run_for(50);
  c.heal();
  c.run_for(500);
  EXPECT_FALSE(c.raft(old).is_leader());
  EXPECT_EQ(c.state(old), c.state(fresh));
  EXPECT_FALSE(c.state(old).count("lost0"));
  bool truncated = false;
  for (const auto& e : c.trace.events) truncated |= e.kind == TraceKind::kTruncate && e.node == old;
  EXPECT_TRUE(truncated);
}

TEST(RaftNodeTest, LaggingFollowerCatchesUpViaSnapshot) {
  TestCluster c(3, 7, 700);
  const NodeId l = c.wait_leader();
  const NodeId lag = l % 3 + 1;
  c.run_for(50);
  c.isolate(lag);
  std::map<std::string, std::string> shadow;
  for (int i = 0; i < 120; ++i) {
    const std::string k = "k" + std::to_string(i % 30), v = std::string(40, 'a' + i % 26);
    c.raft(l).propose(k, v, c.now);
    shadow[k] = v;
  }
  c.run_for(50);
  // Leader compacts everything it has applied.
  GcController& gc = c.storage(l);
  gc.begin_gc(c.now);
  gc.run_compaction(c.raft(l).last_applied(), c.now);
  ASSERT_TRUE(gc.finish_gc(c.now));
  ASSERT_GT(gc.first_log_index(), 1u);
  ASSERT_GT(gc.snapshot_run()->file_size(), 3 * c.chunk_bytes);  // several chunks
  for (int i = 0; i < 10; ++i) {
    c.raft(l).propose("after" + std::to_string(i), "z", c.now);
    shadow["after" + std::to_string(i)] = "z";
  }
  c.run_for(50);
  c.heal();
  c.run_for(1000);
  EXPECT_EQ(c.state(lag), shadow);
  EXPECT_EQ(c.storage(lag).snapshot().last_index, gc.snapshot().last_index);
  EXPECT_EQ(c.raft(lag).last_applied(), c.raft(l).commit_index());
  // Normal replication continues afterwards.
  c.raft(l).propose("later", "w", c.now);
  c.run_for(150);
  EXPECT_EQ(c.state(lag).at("later"), "w");
}

TEST(RaftNodeTest, SnapshotBelowCommitIgnored) {
  Solo s;
  s.deliver<AppendReply>(2, AppendEntries{1, 2, 0, 0, {put(1, 1, "a", ""), put(1, 2, "b", ""), put(1, 3, "c", "")}, 3, 0});
  auto r = s.deliver<InstallReply>(2, InstallSnapshot{1, 2, 2, 1, 100, 0, "garbage"});
  EXPECT_TRUE(r.installed);
  EXPECT_EQ(s.storage->last_log_index(), 3u);
  EXPECT_EQ(s.storage->snapshot().last_index, 0u);
  EXPECT_EQ(s.raft->commit_index(), 3u);
}

TEST(RaftNodeTest, SnapshotCoveredByLogKeepsAcknowledgedSuffix) {
  Solo s;
  auto ack = s.deliver<AppendReply>(
      2, AppendEntries{1, 2, 0, 0, {put(1, 1, "a", ""), put(1, 2, "b", ""), put(1, 3, "c", "")}, 1, 0});
  ASSERT_EQ(ack.match_index, 3u);
  // Snapshot ends at 2, which we hold with the same term; 3 was acknowledged.
  auto r = s.deliver<InstallReply>(2, InstallSnapshot{1, 2, 2, 1, 100, 0, "garbage"});
  EXPECT_TRUE(r.installed);
  EXPECT_EQ(r.last_index, 2u);
  EXPECT_EQ(s.storage->last_log_index(), 3u);
  EXPECT_EQ(s.storage->snapshot().last_index, 0u);
  EXPECT_EQ(s.storage->read_entry(3).key, "c");
}

TEST(RaftNodeTest, StaleRejectionsDoNotMultiplyProbes) {
  Solo s({1, 2});
  s.deliver<AppendReply>(2, AppendEntries{1, 2, 0, 0, {put(1, 1, "a", ""), put(1, 2, "b", ""), put(1, 3, "c", "")}, 0, 0});
  s.raft->tick(10'000);
  s.raft->receive(Envelope{2, 1, VoteReply{2, true}}, 10'000);
  ASSERT_EQ(s.raft->role(), Role::kLeader);
  s.raft->tick(10'000);
  s.raft->flush(10'000);
  s.raft->take_messages();
  auto appends_after = [&](int copies) {
    for (int i = 0; i < copies; ++i) s.raft->receive(Envelope{2, 1, AppendReply{2, false, 0, 2, 0}}, 10'001);
    s.raft->flush(10'001);
    size_t n = 0;
    for (const auto& env : s.raft->take_messages()) {
      if (auto* ae = std::get_if<AppendEntries>(&env.msg)) {
        EXPECT_EQ(ae->prev_index, 1u);
        ++n;
      }
    }
    return n;
  };
  // The follower's rejection arrives four times; only the first moves next_index.
  EXPECT_EQ(appends_after(4), 1u);
  EXPECT_EQ(appends_after(3), 0u);
}

TEST(RaftNodeTest, CrashMidInstallResumesFromPersistedChunk) {
  TestCluster c(3, 7, 512);
  const NodeId l = c.wait_leader();
  const NodeId lag = l % 3 + 1;
  c.run_for(50);
  c.isolate(lag);
  std::map<std::string, std::string> shadow;
  for (int i = 0; i < 100; ++i) {
    const std::string k = "k" + std::to_string(i), v = std::string(60, 'q');
    c.raft(l).propose(k, v, c.now);
    shadow[k] = v;
  }
  c.run_for(50);
  c.storage(l).begin_gc(c.now);
  c.storage(l).run_compaction(c.raft(l).last_applied(), c.now);
  c.storage(l).finish_gc(c.now);

  // Let three chunks through, then crash the follower.
  int chunks = 0;
  std::vector<uint64_t> requested_offsets;
  c.filter = [&](const Envelope& env) {
    if (std::holds_alternative<InstallSnapshot>(env.msg) && env.to == lag) {
      const auto& m = std::get<InstallSnapshot>(env.msg);
          if (chunks >= 3) return false;
      if (m.offset == uint64_t(chunks) * 512) ++chunks;
    }
    if (std::holds_alternative<InstallReply>(env.msg) && env.from == lag) {
      requested_offsets.push_back(std::get<InstallReply>(env.msg).next_offset);
    }
    return true;
  };
  c.heal();
  c.run_for(200);
  ASSERT_EQ(chunks, 3);
  c.crash(lag);
  c.start(lag);
  requested_offsets.clear();
  std::vector<uint64_t> sent_offsets;
  c.filter = [&](const Envelope& env) {
    if (std::holds_alternative<InstallSnapshot>(env.msg) && env.to == lag) {
      sent_offsets.push_back(std::get<InstallSnapshot>(env.msg).offset);
    }
    if (std::holds_alternative<InstallReply>(env.msg) && env.from == lag) {
      requested_offsets.push_back(std::get<InstallReply>(env.msg).next_offset);
    }
    return true;
  };
  c.run_for(1000);
  // The three persisted chunks survived the crash: nothing before them was
  // sent again, and the first acknowledgement already counts the fourth.
  ASSERT_FALSE(requested_offsets.empty());
  ASSERT_FALSE(sent_offsets.empty());
  EXPECT_EQ(*std::min_element(sent_offsets.begin(), sent_offsets.end()), 3u * 512);
  EXPECT_EQ(requested_offsets.front(), 4u * 512);
  EXPECT_EQ(c.state(lag), shadow);
}

TEST(RaftReadTest, SingleNodeReadCompletesAfterOwnTermCommit) {
  TestCluster c(1);
  const NodeId l = c.wait_leader();
  c.run_for(10);
  const uint64_t id = c.raft(l).begin_read(c.now);
  c.run_for(5);
  ASSERT_EQ(c.reads[l].size(), 1u);
  EXPECT_EQ(c.reads[l][0].id, id);
  EXPECT_TRUE(c.reads[l][0].ok);
}

TEST(RaftReadTest, IsolatedLeaderNeverServesRead) {
  TestCluster c(3);
  const NodeId l = c.wait_leader();
  c.run_for(100);
  c.isolate(l);
  c.raft(l).begin_read(c.now);
  c.run_for(150);
  EXPECT_TRUE(c.reads[l].empty());  // no majority confirmation
  c.heal();
  c.run_for(1000);
  // Either it confirmed after healing, or it lost leadership and failed it.
  ASSERT_EQ(c.reads[l].size(), 1u);
}

TEST(RaftReadTest, ReadWaitsForApplyOfObservedCommit) {
  TestCluster c(3);
  const NodeId l = c.wait_leader();
  c.run_for(100);
  c.raft(l).propose("a", "1", c.now);
  c.run_for(10);
  const uint64_t commit = c.raft(l).commit_index();
  c.raft(l).begin_read(c.now);
  c.run_for(10);
  ASSERT_EQ(c.reads[l].size(), 1u);
  EXPECT_TRUE(c.reads[l][0].ok);
  EXPECT_GE(c.raft(l).last_applied(), commit);
}

TEST(RaftNodeTest, RestartReappliesToSameState) {
  TestCluster c(3);
  const NodeId l = c.wait_leader();
  for (int i = 0; i < 50; ++i) c.raft(l).propose("k" + std::to_string(i % 7), std::to_string(i), c.now);
  c.run_for(100);
  const auto before = c.state(l);
  for (NodeId id = 1; id <= 3; ++id) c.crash(id);
  for (NodeId id = 1; id <= 3; ++id) c.start(id);
  c.wait_leader();
  c.run_for(200);
  for (NodeId id = 1; id <= 3; ++id) EXPECT_EQ(c.state(id), before);
}

}  // namespace
}  // namespace nezha
