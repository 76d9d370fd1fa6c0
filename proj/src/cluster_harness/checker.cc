#include "nezha/checker.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_set>

#include "nezha/raft.h"

namespace nezha {

// ---- safety ----------------------------------------------------------------

namespace {

struct LoggedEntry {
  uint64_t term;
  uint32_t crc;
  bool crc_known;
  size_t event;
};

struct NodeView {
  std::map<uint64_t, LoggedEntry> log;
  uint64_t leader_term = 0;  // nonzero while leader
};

void add(SafetyReport& r, std::string property, std::string detail, std::vector<size_t> events) {
  r.violations.push_back({std::move(property), std::move(detail), std::move(events)});
}

}  // namespace

SafetyReport check_safety(const std::vector<TraceEvent>& trace) {
  SafetyReport report;
  std::map<NodeId, NodeView> nodes;
  std::map<uint64_t, std::pair<NodeId, size_t>> leader_of_term;
  struct Fingerprint {
    uint32_t crc;
    uint64_t prev_term;
    size_t event;
  };
  std::map<std::pair<uint64_t, uint64_t>, Fingerprint> by_index_term;
  struct AppliedAt {
    uint64_t term;
    uint32_t crc;
    size_t event;
  };
  std::map<uint64_t, AppliedAt> applied;

  for (size_t i = 0; i < trace.size(); ++i) {
    const TraceEvent& e = trace[i];
    NodeView& n = nodes[e.node];
    switch (e.kind) {
      case TraceKind::kRoleChange: {
        if (static_cast<Role>(e.aux) == Role::kLeader) {
          ++report.leaders_seen;
          auto [it, fresh] = leader_of_term.emplace(e.term, std::make_pair(e.node, i));
          if (!fresh && it->second.first != e.node) {
            add(report, "ElectionSafety",
                "nodes " + std::to_string(it->second.first) + " and " + std::to_string(e.node) +
                    " both leader in term " + std::to_string(e.term),
                {it->second.second, i});
          }
          n.leader_term = e.term;
        } else {
          n.leader_term = 0;
        }
        break;
      }
      case TraceKind::kCrash:
        n.leader_term = 0;
        break;
      case TraceKind::kAppend: {
        auto existing = n.log.find(e.index);
        if (n.leader_term != 0 && existing != n.log.end()) {
          add(report, "LeaderAppendOnly",
              "leader " + std::to_string(e.node) + " overwrote index " + std::to_string(e.index),
              {existing->second.event, i});
        }
        if (e.index > 1) {
          auto prev = n.log.find(e.index - 1);
          if (prev != n.log.end() && prev->second.term != e.aux) {
            add(report, "LogMatching",
                "node " + std::to_string(e.node) + " appended index " + std::to_string(e.index) +
                    " claiming prev term " + std::to_string(e.aux) + " over prev term " +
                    std::to_string(prev->second.term),
                {prev->second.event, i});
          }
        }
        auto [fp, fresh] = by_index_term.emplace(std::make_pair(e.index, e.term),
                                                 Fingerprint{e.crc, e.aux, i});
        if (!fresh && (fp->second.crc != e.crc || fp->second.prev_term != e.aux)) {
          add(report, "LogMatching",
              "two different entries at index " + std::to_string(e.index) + " term " +
                  std::to_string(e.term),
              {fp->second.event, i});
        }
        n.log[e.index] = LoggedEntry{e.term, e.crc, true, i};
        break;
      }
      case TraceKind::kTruncate: {
        auto from = n.log.lower_bound(e.index);
        if (n.leader_term != 0 && from != n.log.end()) {
          add(report, "LeaderAppendOnly",
              "leader " + std::to_string(e.node) + " removed entries from " +
                  std::to_string(e.index),
              {from->second.event, i});
        }
        n.log.erase(from, n.log.end());
        break;
      }
      case TraceKind::kSnapshotInstall:
        n.log.clear();
        if (e.index != 0) n.log[e.index] = LoggedEntry{e.term, 0, false, i};
        break;
      case TraceKind::kApply: {
        ++report.entries_applied;
        auto [it, fresh] = applied.emplace(e.index, AppliedAt{e.term, e.crc, i});
        if (!fresh && (it->second.term != e.term || it->second.crc != e.crc)) {
          add(report, "StateMachineSafety",
              "index " + std::to_string(e.index) + " applied as term " +
                  std::to_string(it->second.term) + " and term " + std::to_string(e.term),
              {it->second.event, i});
        }
        break;
      }
      default:
        break;
    }
  }

  // Direct comparison of the final logs: below the highest index where two
  // logs agree on the term, they must agree everywhere both are known.
  for (auto a = nodes.begin(); a != nodes.end(); ++a) {
    for (auto b = std::next(a); b != nodes.end(); ++b) {
      const auto& la = a->second.log;
      const auto& lb = b->second.log;
      std::optional<uint64_t> anchor;
      for (auto it = la.rbegin(); it != la.rend(); ++it) {
        auto other = lb.find(it->first);
        if (other != lb.end() && other->second.term == it->second.term) {
          anchor = it->first;
          break;
        }
      }
      if (!anchor) continue;
      for (auto it = la.begin(); it != la.end() && it->first <= *anchor; ++it) {
        auto other = lb.find(it->first);
        if (other == lb.end()) continue;
        const bool crc_differs =
            it->second.crc_known && other->second.crc_known && it->second.crc != other->second.crc;
        if (other->second.term != it->second.term || crc_differs) {
          add(report, "LogMatching",
              "nodes " + std::to_string(a->first) + " and " + std::to_string(b->first) +
                  " agree at index " + std::to_string(*anchor) + " but differ at " +
                  std::to_string(it->first),
              {it->second.event, other->second.event});
          break;
        }
      }
    }
  }
  report.events_checked = trace.size();
  return report;
}

// ---- linearizability ---------------------------------------------------------

std::string describe(const HistoryOp& op) {
  std::string s = "#" + std::to_string(op.id) + " c" + std::to_string(op.client) + " ";
  switch (op.kind) {
    case HistOpKind::kPut:
      s += "put(" + op.key + "," + op.value + ")";
      break;
    case HistOpKind::kGet:
      s += "get(" + op.key + ")=" + (op.read ? *op.read : std::string("<none>"));
      break;
    case HistOpKind::kScan: {
      s += "scan(" + op.start + ".." + op.end + ")=[";
      for (size_t i = 0; i < op.entries.size(); ++i) {
        if (i) s += ",";
        s += op.entries[i].first + ":" + op.entries[i].second;
      }
      s += "]";
      break;
    }
  }
  s += " [" + std::to_string(op.invoke) + "," +
       (op.complete ? std::to_string(*op.complete) : std::string("?")) + "]";
  return s;
}

namespace {

// One independent group: ops touching a connected set of keys.
class GroupChecker {
 public:
  GroupChecker(std::vector<const HistoryOp*> ops, const LinearizabilityOptions& options)
      : ops_(std::move(ops)), options_(options) {
    std::vector<std::string> keys;
    for (const auto* op : ops_) {
      if (op->kind != HistOpKind::kScan) keys.push_back(op->key);
      for (const auto& kv : op->entries) keys.push_back(kv.first);
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    keys_ = keys;
    for (const auto* op : ops_) {
      if (op->kind == HistOpKind::kPut) {
        auto it = std::find(values_.begin(), values_.end(), op->value);
        value_id_.push_back(static_cast<int32_t>(it - values_.begin()));
        if (it == values_.end()) values_.push_back(op->value);
      } else {
        value_id_.push_back(-1);
      }
      key_id_.push_back(op->kind == HistOpKind::kScan ? -1 : key_index(op->key));
    }
  }

  // Returns true if linearizable; fills `order` with positions into ops_.
  bool run(std::vector<size_t>* order) {
    const size_t n = ops_.size();
    // Entry list: a call and (for completed ops) a return per op.
    struct Entry {
      size_t op;
      bool call;
      int64_t time;
    };
    std::vector<Entry> entries;
    for (size_t i = 0; i < n; ++i) {
      entries.push_back({i, true, ops_[i]->invoke});
      if (ops_[i]->complete) entries.push_back({i, false, *ops_[i]->complete});
    }
    // Returns sort before calls at equal times: equal stamps are treated as
    // ordered, the stricter reading.
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.time != b.time) return a.time < b.time;
      return !a.call && b.call;
    });
    const size_t m = entries.size();
    std::vector<long> next(m + 1), prev(m + 1);
    // Node m is the head sentinel.
    const long head = static_cast<long>(m);
    for (size_t i = 0; i < m; ++i) {
      prev[i] = i == 0 ? head : static_cast<long>(i - 1);
      next[i] = i + 1 == m ? -1 : static_cast<long>(i + 1);
    }
    next[head] = m == 0 ? -1 : 0;
    prev[head] = -1;
    std::vector<long> call_pos(n, -1), ret_pos(n, -1);
    for (size_t i = 0; i < m; ++i) (entries[i].call ? call_pos : ret_pos)[entries[i].op] = i;

    auto unlink = [&](long i) {
      next[prev[i]] = next[i];
      if (next[i] != -1) prev[next[i]] = prev[i];
    };
    auto relink = [&](long i) {
      next[prev[i]] = i;
      if (next[i] != -1) prev[next[i]] = i;
    };

    size_t remaining = 0;
    for (size_t i = 0; i < n; ++i) remaining += ops_[i]->complete ? 1 : 0;

    std::vector<int32_t> state(keys_.size(), -1);
    std::vector<uint64_t> bits((n + 63) / 64, 0);
    struct Frame {
      size_t op;
      std::vector<int32_t> state;
    };
    std::vector<Frame> stack;
    std::unordered_set<std::string> cache;

    uint64_t steps = 0;
    long cur = next[head];
    while (remaining > 0) {
      if (++steps > options_.max_steps) {
        throw Error(ErrorCode::kHistoryTooLarge, "search exceeded step budget");
      }
      if (cur == -1) return false;  // unreachable while returns remain
      const Entry& e = entries[cur];
      if (e.call) {
        std::vector<int32_t> after = state;
        if (apply(e.op, after)) {
          bits[e.op / 64] |= uint64_t{1} << (e.op % 64);
          std::string key(reinterpret_cast<const char*>(bits.data()), bits.size() * 8);
          key.append(reinterpret_cast<const char*>(after.data()), after.size() * 4);
          if (cache.insert(std::move(key)).second) {
            stack.push_back({e.op, std::move(state)});
            state = std::move(after);
            unlink(call_pos[e.op]);
            if (ret_pos[e.op] != -1) {
              unlink(ret_pos[e.op]);
              --remaining;
            }
            cur = next[head];
            continue;
          }
          bits[e.op / 64] &= ~(uint64_t{1} << (e.op % 64));
        }
        cur = next[cur];
      } else {
        if (stack.empty()) return false;
        Frame f = std::move(stack.back());
        stack.pop_back();
        state = std::move(f.state);
        bits[f.op / 64] &= ~(uint64_t{1} << (f.op % 64));
        if (ret_pos[f.op] != -1) {
          relink(ret_pos[f.op]);
          ++remaining;
        }
        relink(call_pos[f.op]);
        cur = next[call_pos[f.op]];
      }
    }
    if (order) {
      order->clear();
      for (const auto& f : stack) order->push_back(f.op);
    }
    return true;
  }

 private:
  int32_t key_index(const std::string& k) const {
    return static_cast<int32_t>(std::lower_bound(keys_.begin(), keys_.end(), k) - keys_.begin());
  }

  bool apply(size_t i, std::vector<int32_t>& state) const {
    const HistoryOp& op = *ops_[i];
    switch (op.kind) {
      case HistOpKind::kPut:
        state[key_id_[i]] = value_id_[i];
        return true;
      case HistOpKind::kGet: {
        const int32_t v = state[key_id_[i]];
        if (!op.read) return v == -1;
        return v != -1 && values_[v] == *op.read;
      }
      case HistOpKind::kScan: {
        size_t k = std::lower_bound(keys_.begin(), keys_.end(), op.start) - keys_.begin();
        size_t out = 0;
        for (; k < keys_.size() && keys_[k] <= op.end; ++k) {
          if (state[k] == -1) continue;
          if (op.limit != 0 && out == op.limit) break;
          if (out >= op.entries.size()) return false;
          if (op.entries[out].first != keys_[k] || op.entries[out].second != values_[state[k]]) {
            return false;
          }
          ++out;
        }
        return out == op.entries.size();
      }
    }
    return false;
  }

  std::vector<const HistoryOp*> ops_;
  LinearizabilityOptions options_;
  std::vector<std::string> keys_;
  std::vector<std::string> values_;
  std::vector<int32_t> value_id_;
  std::vector<int32_t> key_id_;
};

struct UnionFind {
  std::vector<size_t> parent;
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  size_t find(size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(size_t a, size_t b) { parent[find(a)] = find(b); }
};

}  // namespace

LinearizabilityResult check_linearizable(const std::vector<HistoryOp>& history,
                                         LinearizabilityOptions options) {
  // Reads that never completed constrain nothing.
  std::vector<const HistoryOp*> ops;
  for (const auto& op : history) {
    if (op.kind != HistOpKind::kPut && !op.complete) continue;
    if (op.complete && *op.complete < op.invoke) {
      throw Error(ErrorCode::kInvalidArgument, "op completes before invocation: " + describe(op));
    }
    ops.push_back(&op);
  }

  // Group ops by connected key sets; a scan joins every key it covers.
  std::vector<std::string> keys;
  for (const auto* op : ops) {
    if (op->kind != HistOpKind::kScan) keys.push_back(op->key);
    for (const auto& kv : op->entries) keys.push_back(kv.first);
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  const size_t nk = keys.size();
  // Node nk + i stands for scan op i, so scans covering no key still form a group.
  UnionFind uf(nk + ops.size());
  auto kid = [&](const std::string& k) {
    return static_cast<size_t>(std::lower_bound(keys.begin(), keys.end(), k) - keys.begin());
  };
  for (size_t i = 0; i < ops.size(); ++i) {
    const auto* op = ops[i];
    if (op->kind != HistOpKind::kScan) {
      uf.unite(nk + i, kid(op->key));
      continue;
    }
    for (size_t k = std::lower_bound(keys.begin(), keys.end(), op->start) - keys.begin();
         k < nk && keys[k] <= op->end; ++k) {
      uf.unite(nk + i, k);
    }
  }
  std::map<size_t, std::vector<const HistoryOp*>> groups;
  for (size_t i = 0; i < ops.size(); ++i) groups[uf.find(nk + i)].push_back(ops[i]);

  LinearizabilityResult result;
  for (auto& [root, group] : groups) {
    if (group.size() > options.max_ops) {
      throw Error(ErrorCode::kHistoryTooLarge,
                  std::to_string(group.size()) + " ops in one key group");
    }
    std::vector<size_t> order;
    GroupChecker checker(group, options);
    if (checker.run(&order)) {
      for (size_t i : order) result.witness.push_back(group[i]->id);
      continue;
    }
    result.ok = false;
    std::vector<const HistoryOp*> failing = group;
    if (options.shrink && failing.size() <= 256) {
      // Greedy: drop any op whose removal keeps the subset failing.
      for (size_t i = 0; i < failing.size();) {
        std::vector<const HistoryOp*> trial = failing;
        trial.erase(trial.begin() + static_cast<long>(i));
        if (!trial.empty() && !GroupChecker(trial, options).run(nullptr)) {
          failing = std::move(trial);
        } else {
          ++i;
        }
      }
    }
    for (const auto* op : failing) {
      result.violating.push_back(op->id);
      result.detail += describe(*op) + "\n";
    }
    return result;
  }
  return result;
}

}  // namespace nezha
