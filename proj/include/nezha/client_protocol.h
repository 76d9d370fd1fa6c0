#pragma once

// Client wire protocol. Every frame is
//   [len:4 BE][type:1][request_id:16][payload]
// where len counts everything after itself. Multi-byte fields are big-endian.
//
//   1 Put     [key_len:2][key][value]
//   2 Get     [key_len:2][key]
//   3 Scan    [start_len:2][start][end_len:2][end][limit:4]
//   4 Reply   [status:1][body]
//   5 Status  empty; answered by a Reply whose body is the status text
//   16 Peer   a Raft envelope (node to node only; request_id is zero)
//
// Reply bodies by status:
//   Value     the value bytes
//   Entries   [count:4]([key_len:2][key][value_len:4][value])*
//   NotLeader [leader_hint:8]
//   Error     message text
//   others    empty

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nezha/common.h"
#include "nezha/compacted_store.h"

namespace nezha {

using RequestId = std::array<uint8_t, 16>;

std::string request_id_hex(const RequestId& id);

enum class FrameType : uint8_t {
  kPut = 1,
  kGet = 2,
  kScan = 3,
  kReply = 4,
  kStatus = 5,
  kPeer = 16,
};

inline constexpr size_t kFrameHeaderSize = 4 + 1 + 16;
inline constexpr uint32_t kMaxFrameSize = 64u << 20;

struct Frame {
  FrameType type = FrameType::kReply;
  RequestId request_id{};
  std::string payload;
};

std::string encode_frame(const Frame& frame);
// `body` starts at the type byte (the length prefix already stripped).
Frame decode_frame_body(std::string_view body);

// Incremental splitter for a byte stream of frames.
class FrameReader {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }
  // Throws kInvalidArgument on an oversized or malformed frame.
  std::optional<Frame> next();

 private:
  std::string buf_;
};

struct PutOp {
  std::string key;
  std::string value;
  bool operator==(const PutOp&) const = default;
};
struct GetOp {
  std::string key;
  bool operator==(const GetOp&) const = default;
};
struct ScanOp {
  std::string start;
  std::string end;
  uint32_t limit = 0;  // 0 = unbounded
  bool operator==(const ScanOp&) const = default;
};
struct StatusOp {
  bool operator==(const StatusOp&) const = default;
};

using ClientOp = std::variant<PutOp, GetOp, ScanOp, StatusOp>;

struct ClientRequest {
  RequestId id{};
  ClientOp op;
  bool operator==(const ClientRequest&) const = default;
};

enum class Status : uint8_t {
  kOk = 0,
  kValue = 1,
  kNotFound = 2,
  kEntries = 3,
  kTimeout = 4,
  kNotLeader = 5,
  kError = 6,
};

const char* status_name(Status status);

struct ClientResponse {
  RequestId id{};
  Status status = Status::kOk;
  std::string value;             // Value; Error text
  std::vector<KeyValue> entries;  // Entries, ascending
  NodeId leader_hint = 0;         // NotLeader
  bool operator==(const ClientResponse&) const = default;
};

// Validates invariants (non-empty put key, start <= end): kInvalidArgument /
// kInvalidRange.
Frame encode_request(const ClientRequest& request);
ClientRequest decode_request(const Frame& frame);

Frame encode_response(const ClientResponse& response);
ClientResponse decode_response(const Frame& frame);

}  // namespace nezha
