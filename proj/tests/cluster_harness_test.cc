#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "nezha/checker.h"
#include "nezha/raft.h"
#include "nezha/sim.h"
#include "lin_oracle.h"

namespace nezha {
namespace {

SimConfig small_config(uint64_t seed) {
  SimConfig c;
  c.faults.seed = seed;
  c.workload.clients = 3;
  c.workload.ops_per_client = 15;
  c.max_time_ms = 20'000;
  c.settle_ms = 2000;
  return c;
}

void expect_clean(const SimResult& r) {
  const SafetyReport safety = check_safety(r.trace);
  for (const auto& v : safety.violations) ADD_FAILURE() << v.property << ": " << v.detail;
  const LinearizabilityResult lin = check_linearizable(r.history);
  EXPECT_TRUE(lin.ok) << lin.detail;
  EXPECT_TRUE(r.converged);
}

TEST(Sim, SameSeedSameTrace) {
  SimConfig c = small_config(7);
  c.faults = random_fault_plan(7, 3, 8000);
  const SimResult a = run_simulation(c);
  const SimResult b = run_simulation(c);
  EXPECT_EQ(trace_to_tsv(a.trace), trace_to_tsv(b.trace));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(describe(a.history[i]), describe(b.history[i]));
  SimConfig other = c;
  other.faults.seed = 8;
  EXPECT_NE(trace_to_tsv(run_simulation(other).trace), trace_to_tsv(a.trace));
}

TEST(Sim, TraceTsvShape) {
  SimConfig c = small_config(3);
  c.workload.ops_per_client = 2;
  const SimResult r = run_simulation(c);
  const std::string tsv = trace_to_tsv(r.trace);
  ASSERT_FALSE(tsv.empty());
  const std::string first = tsv.substr(0, tsv.find('\n'));
  EXPECT_EQ(std::count(first.begin(), first.end(), '\t'), 3);
  EXPECT_NE(first.find("\t{\"aux\""), std::string::npos);
}

TEST(Sim, FaultFreeRunCompletesEverything) {
  SimConfig c = small_config(1);
  c.workload.ops_per_client = 30;
  c.workload.put_fraction = 0.7;
  c.workload.value_size = 64;
  const SimResult r = run_simulation(c);
  EXPECT_EQ(r.ops_ok, 90u);
  EXPECT_EQ(r.ops_unknown, 0u);
  EXPECT_EQ(r.history.size(), 90u);
  EXPECT_GT(r.gc_cycles, 0u);
  expect_clean(r);
}

// Highest index a node traced as committed during [from, to).
uint64_t max_commit_between(const SimResult& r, TimeMs from, TimeMs to) {
  uint64_t best = 0;
  for (const auto& e : r.trace) {
    if (e.kind == TraceKind::kCommit && e.time >= from && e.time < to) best = std::max(best, e.index);
  }
  return best;
}

uint64_t max_commit_before(const SimResult& r, TimeMs t) { return max_commit_between(r, 0, t); }

TEST(Sim, MinorityCrashKeepsCommitting) {
  SimConfig c = small_config(11);
  c.workload.ops_per_client = 60;
  c.workload.think_min_ms = 80;
  c.workload.think_max_ms = 120;
  c.faults.crashes = {{1, 1500, -1}};
  const SimResult r = run_simulation(c);
  EXPECT_GT(max_commit_between(r, 4000, 20'000), max_commit_before(r, 1500));
  expect_clean(r);
}

TEST(Sim, MajorityCrashStopsCommits) {
  SimConfig c = small_config(12);
  c.workload.ops_per_client = 200;
  c.workload.think_min_ms = 10;
  c.workload.think_max_ms = 20;
  c.max_time_ms = 8000;
  c.faults.crashes = {{1, 2000, 6000}, {2, 2000, 6000}};
  const SimResult r = run_simulation(c);
  const uint64_t before = max_commit_before(r, 2001);
  EXPECT_GT(before, 0u);
  EXPECT_LE(max_commit_between(r, 2001, 6000), before);
  EXPECT_GT(max_commit_between(r, 6000, 20'000), before);
  expect_clean(r);
}

TEST(Sim, PartitionedLeaderIsReplaced) {
  SimConfig c = small_config(13);
  c.workload.ops_per_client = 80;
  c.workload.think_min_ms = 100;
  c.workload.think_max_ms = 150;
  c.faults.partitions = {{1500, 5000, {1}}, {5000, 8000, {2}}, {8000, 11000, {3}}};
  const SimResult r = run_simulation(c);
  std::set<uint64_t> leaders;
  for (const auto& e : r.trace) {
    if (e.kind == TraceKind::kRoleChange && static_cast<Role>(e.aux) == Role::kLeader) leaders.insert(e.node);
  }
  EXPECT_GE(leaders.size(), 2u);
  expect_clean(r);
}

TEST(Sim, RandomFaultPlansStaySafe) {
  for (uint64_t seed = 100; seed < 115; ++seed) {
    SCOPED_TRACE(seed);
    SimConfig c = small_config(seed);
    c.nodes = seed % 2 ? 3 : 5;
    c.trace_messages = false;
    c.faults = random_fault_plan(seed, c.nodes, 8000);
    const SimResult r = run_simulation(c);
    expect_clean(r);
  }
}

TEST(FaultPlan, NeverExceedsMinority) {
  for (uint64_t seed = 0; seed < 300; ++seed) {
    for (size_t n : {3u, 5u}) {
      const FaultPlan p = random_fault_plan(seed, n, 10'000);
      p.validate(n);
      const size_t f = (n - 1) / 2;
      std::set<TimeMs> points = {0};
      for (const auto& w : p.partitions) points.insert(w.start_ms);
      for (const auto& k : p.crashes) points.insert(k.at_ms);
      for (TimeMs t : points) {
        std::set<NodeId> hit;
        for (const auto& w : p.partitions) {
          if (w.start_ms <= t && t < w.end_ms) hit.insert(w.side.begin(), w.side.end());
        }
        for (const auto& k : p.crashes) {
          if (k.at_ms <= t && (k.restart_ms < 0 || t < k.restart_ms)) hit.insert(k.node);
        }
        ASSERT_LE(hit.size(), f) << "seed " << seed << " n " << n << " t " << t;
      }
    }
  }
}

TEST(Scenario, ParsesAndValidates) {
  const SimConfig c = parse_scenario(R"({
    "nodes": 5, "settle_ms": 100,
    "workload": {"clients": 2, "keys": 9},
    "faults": {"seed": 42, "drop_prob": 0.1,
               "partitions": [{"start_ms": 1, "end_ms": 2, "side": [4, 5]}],
               "crashes": [{"node": 2, "at_ms": 10}]}
  })");
  EXPECT_EQ(c.nodes, 5u);
  EXPECT_EQ(c.settle_ms, 100);
  EXPECT_EQ(c.workload.clients, 2u);
  EXPECT_EQ(c.workload.keys, 9u);
  EXPECT_EQ(c.faults.seed, 42u);
  ASSERT_EQ(c.faults.partitions.size(), 1u);
  EXPECT_EQ(c.faults.partitions[0].side, (std::vector<NodeId>{4, 5}));
  ASSERT_EQ(c.faults.crashes.size(), 1u);
  EXPECT_EQ(c.faults.crashes[0].restart_ms, -1);

  auto code = [](std::string_view text) -> std::optional<ErrorCode> {
    try {
      parse_scenario(text);
    } catch (const Error& e) {
      return e.code();
    }
    return std::nullopt;
  };
  EXPECT_EQ(code(R"({"nodes": 3})"), ErrorCode::kScriptError);
  EXPECT_EQ(code(R"({"faults": {"seed": 1, "crashes": [{"node": 9, "at_ms": 1}]}})"), ErrorCode::kScriptError);
  EXPECT_EQ(code(R"({"faults": {"seed": 1, "drop_prob": 2}})"), ErrorCode::kScriptError);
  EXPECT_EQ(code("{"), ErrorCode::kScriptError);
}

// ---- safety checker on forged traces ----------------------------------------

TraceEvent ev(TraceKind kind, NodeId node, uint64_t term, uint64_t index, uint64_t aux = 0, uint32_t crc = 0) {
  TraceEvent e;
  e.kind = kind;
  e.node = node;
  e.term = term;
  e.index = index;
  e.aux = aux;
  e.crc = crc;
  return e;
}

TraceEvent leader(NodeId node, uint64_t term) {
  return ev(TraceKind::kRoleChange, node, term, 0, static_cast<uint64_t>(Role::kLeader));
}
TraceEvent follower(NodeId node, uint64_t term) {
  return ev(TraceKind::kRoleChange, node, term, 0, static_cast<uint64_t>(Role::kFollower));
}

bool has(const SafetyReport& r, const std::string& property) {
  return std::any_of(r.violations.begin(), r.violations.end(),
                     [&](const Violation& v) { return v.property == property; });
}

TEST(SafetyChecker, CleanTracePasses) {
  const std::vector<TraceEvent> t = {
      leader(1, 1),
      ev(TraceKind::kAppend, 1, 1, 1, 0, 11),
      ev(TraceKind::kAppend, 2, 1, 1, 0, 11),
      ev(TraceKind::kCommit, 1, 0, 1),
      ev(TraceKind::kApply, 1, 1, 1, 0, 11),
      ev(TraceKind::kApply, 2, 1, 1, 0, 11),
      follower(1, 2),
      leader(2, 2),
      ev(TraceKind::kAppend, 2, 2, 2, 1, 22),
  };
  const SafetyReport r = check_safety(t);
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.leaders_seen, 2u);
  EXPECT_EQ(r.entries_applied, 2u);
}

TEST(SafetyChecker, TwoLeadersInOneTerm) {
  const SafetyReport r = check_safety({leader(1, 5), leader(2, 5)});
  EXPECT_TRUE(has(r, "ElectionSafety"));
}

TEST(SafetyChecker, DivergentApply) {
  const SafetyReport r = check_safety({
      ev(TraceKind::kApply, 1, 1, 4, 0, 100),
      ev(TraceKind::kApply, 2, 1, 4, 0, 101),
  });
  EXPECT_TRUE(has(r, "StateMachineSafety"));
}

TEST(SafetyChecker, LeaderTruncatesOwnLog) {
  const SafetyReport r = check_safety({
      leader(1, 1),
      ev(TraceKind::kAppend, 1, 1, 1, 0, 1),
      ev(TraceKind::kAppend, 1, 1, 2, 1, 2),
      ev(TraceKind::kTruncate, 1, 0, 2),
  });
  EXPECT_TRUE(has(r, "LeaderAppendOnly"));
}

TEST(SafetyChecker, LeaderOverwritesEntry) {
  const SafetyReport r = check_safety({
      leader(1, 1),
      ev(TraceKind::kAppend, 1, 1, 1, 0, 1),
      ev(TraceKind::kAppend, 1, 1, 1, 0, 2),
  });
  EXPECT_TRUE(has(r, "LeaderAppendOnly"));
}

TEST(SafetyChecker, SameIndexTermDifferentHistory) {
  // Both logs hold (2, term 3) but disagree at index 1.
  const SafetyReport r = check_safety({
      ev(TraceKind::kAppend, 1, 1, 1, 0, 10),
      ev(TraceKind::kAppend, 1, 3, 2, 1, 30),
      ev(TraceKind::kAppend, 2, 2, 1, 0, 20),
      ev(TraceKind::kAppend, 2, 3, 2, 2, 30),
  });
  EXPECT_TRUE(has(r, "LogMatching"));
}

TEST(SafetyChecker, FollowerTruncationIsFine) {
  const SafetyReport r = check_safety({
      ev(TraceKind::kAppend, 2, 1, 1, 0, 10),
      ev(TraceKind::kAppend, 2, 1, 2, 1, 11),
      ev(TraceKind::kTruncate, 2, 0, 2),
      ev(TraceKind::kAppend, 2, 2, 2, 1, 12),
  });
  EXPECT_TRUE(r.ok());
}

// ---- linearizability --------------------------------------------------------

using testing::get;
using testing::oracle_linearizable;
using testing::put;
using testing::random_history;
using testing::scan;

TEST(Linearizability, SequentialHistory) {
  const std::vector<HistoryOp> h = {
      put(0, "a", "1", 1, 2),
      get(1, "a", "1", 3, 4),
      put(2, "a", "2", 5, 6),
      get(3, "a", "2", 7, 8),
      get(4, "b", std::nullopt, 9, 10),
  };
  const auto r = check_linearizable(h);
  EXPECT_TRUE(r.ok) << r.detail;
  EXPECT_EQ(r.witness.size(), 5u);
}

TEST(Linearizability, StaleReadRejected) {
  const std::vector<HistoryOp> h = {
      put(0, "a", "1", 1, 2),
      put(1, "a", "2", 3, 4),
      get(2, "a", "1", 5, 6),
  };
  const auto r = check_linearizable(h);
  EXPECT_FALSE(r.ok);
  EXPECT_FALSE(r.violating.empty());
}

TEST(Linearizability, ConcurrentOverlapAllowsEitherOrder) {
  const std::vector<HistoryOp> h = {
      put(0, "a", "1", 1, 10),
      put(1, "a", "2", 2, 9),
      get(2, "a", "1", 11, 12),
  };
  EXPECT_TRUE(check_linearizable(h).ok);
}

TEST(Linearizability, UnknownPutMayApplyLateOrNever) {
  EXPECT_TRUE(check_linearizable({put(0, "a", "x", 1, std::nullopt), get(1, "a", std::nullopt, 2, 3),
                                  get(2, "a", "x", 4, 5)})
                  .ok);
  // Once observed it cannot vanish.
  EXPECT_FALSE(check_linearizable({put(0, "a", "x", 1, std::nullopt), get(1, "a", "x", 2, 3),
                                   get(2, "a", std::nullopt, 4, 5)})
                   .ok);
}

TEST(Linearizability, ScanMustBeAtomicAcrossKeys) {
  // Writer sets a then b; a scan seeing b's new value but a's old one is torn.
  const std::vector<HistoryOp> h = {
      put(0, "a", "1", 1, 2),
      put(1, "b", "1", 3, 4),
      put(2, "a", "2", 5, 6),
      put(3, "b", "2", 7, 8),
      scan(4, "a", "b", 0, {{"a", "1"}, {"b", "2"}}, 1, 20),
  };
  EXPECT_FALSE(check_linearizable(h).ok);
  std::vector<HistoryOp> ok = h;
  ok[4].entries = {{"a", "2"}, {"b", "1"}};
  EXPECT_TRUE(check_linearizable(ok).ok);
}

TEST(Linearizability, AgreesWithBruteForceOracle) {
  std::mt19937_64 rng(2024);
  size_t accepted = 0, rejected = 0;
  for (int i = 0; i < 3000; ++i) {
    const auto h = random_history(rng);
    const bool want = oracle_linearizable(h);
    const auto got = check_linearizable(h);
    ASSERT_EQ(got.ok, want) << "case " << i << ": " << got.detail;
    (want ? accepted : rejected)++;
  }
  EXPECT_GT(accepted, 100u);
  EXPECT_GT(rejected, 100u);
}

TEST(Linearizability, WitnessIsAValidOrder) {
  const std::vector<HistoryOp> h = {
      put(0, "a", "1", 1, 5),
      get(1, "a", "1", 2, 6),
      put(2, "b", "7", 3, 4),
      scan(3, "a", "b", 0, {{"a", "1"}, {"b", "7"}}, 7, 8),
  };
  const auto r = check_linearizable(h);
  ASSERT_TRUE(r.ok) << r.detail;
  std::vector<uint64_t> sorted = r.witness;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<uint64_t>{0, 1, 2, 3}));
  const auto pos = [&](uint64_t id) { return std::find(r.witness.begin(), r.witness.end(), id); };
  EXPECT_LT(pos(0), pos(1));
}

TEST(Linearizability, TooLargeIsRefused) {
  std::vector<HistoryOp> h;
  for (uint64_t i = 0; i < 20; ++i) h.push_back(put(i, "a", std::to_string(i), 0, 100));
  LinearizabilityOptions o;
  o.max_ops = 10;
  try {
    check_linearizable(h, o);
    FAIL() << "expected kHistoryTooLarge";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kHistoryTooLarge);
  }
}

}  // namespace
}  // namespace nezha
