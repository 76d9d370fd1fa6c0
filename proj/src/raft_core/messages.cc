#include "nezha/common.h"
#include "nezha/raft.h"

namespace nezha {

namespace {

class Reader {
 public:
  explicit Reader(std::string_view buf) : buf_(buf) {}

  void need(size_t n) const {
    if (buf_.size() - pos_ < n) throw Error(ErrorCode::kInvalidArgument, "truncated raft message");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf_[pos_++]);
  }
  uint32_t u32() {
    need(4);
    const uint32_t v = get_le32(buf_.data() + pos_);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    const uint64_t v = get_le64(buf_.data() + pos_);
    pos_ += 8;
    return v;
  }
  bool flag() {
    const uint8_t v = u8();
    if (v > 1) throw Error(ErrorCode::kInvalidArgument, "bad boolean in raft message");
    return v == 1;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s(buf_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  LogRecord record() {
    LogRecord r;
    size_t consumed = 0;
    if (decode_record(buf_.substr(pos_), &r, &consumed) != DecodeStatus::kOk) {
      throw Error(ErrorCode::kInvalidArgument, "bad log entry in raft message");
    }
    pos_ += consumed;
    return r;
  }
  void finish() const {
    if (pos_ != buf_.size()) throw Error(ErrorCode::kInvalidArgument, "trailing bytes in raft message");
  }

 private:
  std::string_view buf_;
  size_t pos_ = 0;
};

void put_flag(std::string& out, bool b) { put_u8(out, b ? 1 : 0); }

}  // namespace

const char* role_name(Role role) {
  switch (role) {
    case Role::kFollower: return "Follower";
    case Role::kCandidate: return "Candidate";
    case Role::kLeader: return "Leader";
  }
  return "?";
}

const char* message_name(const RaftMessage& msg) {
  static const char* const kNames[] = {"RequestVote",   "VoteReply",      "AppendEntries",
                                       "AppendReply",   "InstallSnapshot", "InstallReply"};
  return kNames[msg.index()];
}

std::string encode_envelope(const Envelope& env) {
  std::string out;
  put_u8(out, static_cast<uint8_t>(env.msg.index()));
  put_le64(out, env.from);
  put_le64(out, env.to);
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, RequestVote>) {
          put_le64(out, m.term);
          put_le64(out, m.candidate);
          put_le64(out, m.last_log_index);
          put_le64(out, m.last_log_term);
        } else if constexpr (std::is_same_v<T, VoteReply>) {
          put_le64(out, m.term);
          put_flag(out, m.granted);
        } else if constexpr (std::is_same_v<T, AppendEntries>) {
          put_le64(out, m.term);
          put_le64(out, m.leader);
          put_le64(out, m.prev_index);
          put_le64(out, m.prev_term);
          put_le64(out, m.leader_commit);
          put_le64(out, m.seq);
          put_le32(out, static_cast<uint32_t>(m.entries.size()));
          for (const auto& e : m.entries) encode_record(e, &out);
        } else if constexpr (std::is_same_v<T, AppendReply>) {
          put_le64(out, m.term);
          put_flag(out, m.success);
          put_le64(out, m.match_index);
          put_le64(out, m.conflict_index);
          put_le64(out, m.seq);
        } else if constexpr (std::is_same_v<T, InstallSnapshot>) {
          put_le64(out, m.term);
          put_le64(out, m.leader);
          put_le64(out, m.last_index);
          put_le64(out, m.last_term);
          put_le64(out, m.total_size);
          put_le64(out, m.offset);
          put_le32(out, static_cast<uint32_t>(m.data.size()));
          out += m.data;
        } else if constexpr (std::is_same_v<T, InstallReply>) {
          put_le64(out, m.term);
          put_le64(out, m.last_index);
          put_le64(out, m.next_offset);
          put_flag(out, m.installed);
        }
      },
      env.msg);
  return out;
}

Envelope decode_envelope(std::string_view bytes) {
  Reader r(bytes);
  Envelope env;
  const uint8_t type = r.u8();
  env.from = r.u64();
  env.to = r.u64();
  switch (type) {
    case 0: {
      RequestVote m;
      m.term = r.u64();
      m.candidate = r.u64();
      m.last_log_index = r.u64();
      m.last_log_term = r.u64();
      env.msg = m;
      break;
    }
    case 1: {
      VoteReply m;
      m.term = r.u64();
      m.granted = r.flag();
      env.msg = m;
      break;
    }
    case 2: {
      AppendEntries m;
      m.term = r.u64();
      m.leader = r.u64();
      m.prev_index = r.u64();
      m.prev_term = r.u64();
      m.leader_commit = r.u64();
      m.seq = r.u64();
      const uint32_t n = r.u32();
      for (uint32_t i = 0; i < n; ++i) {
        m.entries.push_back(r.record());
        if (m.entries.back().index != m.prev_index + 1 + i) {
          throw Error(ErrorCode::kInvalidArgument, "non-contiguous entries in AppendEntries");
        }
      }
      env.msg = std::move(m);
      break;
    }
    case 3: {
      AppendReply m;
      m.term = r.u64();
      m.success = r.flag();
      m.match_index = r.u64();
      m.conflict_index = r.u64();
      m.seq = r.u64();
      env.msg = m;
      break;
    }
    case 4: {
      InstallSnapshot m;
      m.term = r.u64();
      m.leader = r.u64();
      m.last_index = r.u64();
      m.last_term = r.u64();
      m.total_size = r.u64();
      m.offset = r.u64();
      m.data = r.bytes(r.u32());
      env.msg = std::move(m);
      break;
    }
    case 5: {
      InstallReply m;
      m.term = r.u64();
      m.last_index = r.u64();
      m.next_offset = r.u64();
      m.installed = r.flag();
      env.msg = m;
      break;
    }
    default:
      throw Error(ErrorCode::kInvalidArgument, "unknown raft message type " + std::to_string(type));
  }
  r.finish();
  return env;
}

std::string encode_term_state(const TermState& s) {
  std::string out;
  put_le64(out, s.current_term);
  put_le64(out, s.voted_for);
  put_le32(out, crc32(out));
  return out;
}

TermState decode_term_state(std::string_view bytes) {
  if (bytes.size() != 20 || get_le32(bytes.data() + 16) != crc32(bytes.substr(0, 16))) {
    throw Error(ErrorCode::kCorruptState, "raft.meta is damaged");
  }
  return TermState{get_le64(bytes.data()), get_le64(bytes.data() + 8)};
}

}  // namespace nezha
