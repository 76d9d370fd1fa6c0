#pragma once

// Linearizability test helpers: history constructors and a brute-force
// permutation oracle for small histories.

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nezha/checker.h"

namespace nezha::testing {

inline HistoryOp put(uint64_t id, std::string key, std::string value, int64_t inv, std::optional<int64_t> done) {
  HistoryOp op;
  op.id = id;
  op.kind = HistOpKind::kPut;
  op.key = std::move(key);
  op.value = std::move(value);
  op.invoke = inv;
  op.complete = done;
  return op;
}

inline HistoryOp get(uint64_t id, std::string key, std::optional<std::string> read, int64_t inv, int64_t done) {
  HistoryOp op;
  op.id = id;
  op.kind = HistOpKind::kGet;
  op.key = std::move(key);
  op.read = std::move(read);
  op.invoke = inv;
  op.complete = done;
  return op;
}

inline HistoryOp scan(uint64_t id, std::string start, std::string end, uint32_t limit, std::vector<KeyValue> entries,
               int64_t inv, int64_t done) {
  HistoryOp op;
  op.id = id;
  op.kind = HistOpKind::kScan;
  op.start = std::move(start);
  op.end = std::move(end);
  op.limit = limit;
  op.entries = std::move(entries);
  op.invoke = inv;
  op.complete = done;
  return op;
}

// Brute force: try every subset of unknown puts and every order of the
// chosen ops, replaying against a std::map.
inline bool oracle_linearizable(const std::vector<HistoryOp>& all) {
  std::vector<HistoryOp> h;
  for (const auto& op : all) {
    if (op.kind != HistOpKind::kPut && !op.complete) continue;
    h.push_back(op);
  }
  std::vector<size_t> unknown;
  for (size_t i = 0; i < h.size(); ++i) {
    if (!h[i].complete) unknown.push_back(i);
  }
  for (uint32_t mask = 0; mask < (1u << unknown.size()); ++mask) {
    std::vector<size_t> chosen;
    for (size_t i = 0; i < h.size(); ++i) {
      const auto u = std::find(unknown.begin(), unknown.end(), i);
      if (u == unknown.end() || (mask >> (u - unknown.begin()) & 1)) chosen.push_back(i);
    }
    std::sort(chosen.begin(), chosen.end());
    do {
      bool good = true;
      for (size_t x = 0; x < chosen.size() && good; ++x) {
        for (size_t y = x + 1; y < chosen.size() && good; ++y) {
          const HistoryOp& later = h[chosen[x]];
          const HistoryOp& earlier = h[chosen[y]];
          if (earlier.complete && *earlier.complete < later.invoke) good = false;
        }
      }
      std::map<std::string, std::string> m;
      for (size_t x = 0; x < chosen.size() && good; ++x) {
        const HistoryOp& op = h[chosen[x]];
        if (op.kind == HistOpKind::kPut) {
          m[op.key] = op.value;
        } else if (op.kind == HistOpKind::kGet) {
          auto it = m.find(op.key);
          const std::optional<std::string> v =
              it == m.end() ? std::nullopt : std::optional<std::string>(it->second);
          good = v == op.read;
        } else {
          std::vector<KeyValue> want;
          for (auto it = m.lower_bound(op.start); it != m.end() && it->first <= op.end; ++it) {
            if (op.limit != 0 && want.size() == op.limit) break;
            want.emplace_back(it->first, it->second);
          }
          good = want == op.entries;
        }
      }
      if (good) return true;
    } while (std::next_permutation(chosen.begin(), chosen.end()));
  }
  return false;
}

inline std::vector<HistoryOp> random_history(std::mt19937_64& rng) {
  const size_t n = 2 + rng() % 5;
  std::vector<HistoryOp> h;
  const char* keys[] = {"a", "b", "c"};
  const char* vals[] = {"1", "2", "3"};
  for (size_t i = 0; i < n; ++i) {
    const int64_t inv = static_cast<int64_t>(rng() % 20);
    const int64_t done = inv + 1 + static_cast<int64_t>(rng() % 8);
    const int kind = static_cast<int>(rng() % 5);
    if (kind < 2) {
      std::optional<int64_t> c = done;
      if (rng() % 5 == 0) c.reset();
      h.push_back(put(i, keys[rng() % 3], vals[rng() % 3], inv, c));
    } else if (kind < 4) {
      std::optional<std::string> r;
      if (rng() % 3 != 0) r = vals[rng() % 3];
      h.push_back(get(i, keys[rng() % 3], r, inv, done));
    } else {
      std::string s = keys[rng() % 3], e = keys[rng() % 3];
      if (s > e) std::swap(s, e);
      std::vector<KeyValue> entries;
      for (const char* k : keys) {
        if (k >= s && k <= e && rng() % 2) entries.emplace_back(k, vals[rng() % 3]);
      }
      h.push_back(scan(i, s, e, static_cast<uint32_t>(rng() % 3), entries, inv, done));
    }
  }
  // Timestamps must be distinct for a clean real-time order.
  std::vector<int64_t*> stamps;
  for (auto& op : h) {
    stamps.push_back(&op.invoke);
    if (op.complete) stamps.push_back(&*op.complete);
  }
  std::vector<std::pair<int64_t, size_t>> order;
  for (size_t i = 0; i < stamps.size(); ++i) order.emplace_back(*stamps[i] * 64 + static_cast<int64_t>(i), i);
  std::sort(order.begin(), order.end());
  // Keep invoke < complete per op: re-rank while preserving each op's order.
  for (size_t r = 0; r < order.size(); ++r) *stamps[order[r].second] = static_cast<int64_t>(r);
  for (auto& op : h) {
    if (op.complete && *op.complete < op.invoke) std::swap(op.invoke, *op.complete);
  }
  return h;
}

}  // namespace nezha::testing
