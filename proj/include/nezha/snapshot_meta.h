#pragma once

#include <cstdint>
#include <string>

namespace nezha {

// Raft snapshot descriptor: a sorted run plus the index/term of the last
// record folded into it.
struct SnapshotMeta {
  uint64_t last_index = 0;
  uint64_t last_term = 0;
  std::string run_path;
  bool complete = false;

  bool operator==(const SnapshotMeta&) const = default;
};

}  // namespace nezha
