#include "nezha/client_protocol.h"

namespace nezha {

namespace {

class BeReader {
 public:
  explicit BeReader(std::string_view buf) : buf_(buf) {}

  void need(size_t n) const {
    if (buf_.size() - pos_ < n) throw Error(ErrorCode::kInvalidArgument, "truncated client frame");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf_[pos_++]);
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = get_be16(buf_.data() + pos_);
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    const uint32_t v = get_be32(buf_.data() + pos_);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    const uint64_t v = get_be64(buf_.data() + pos_);
    pos_ += 8;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s(buf_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string rest() {
    std::string s(buf_.substr(pos_));
    pos_ = buf_.size();
    return s;
  }
  void finish() const {
    if (pos_ != buf_.size()) throw Error(ErrorCode::kInvalidArgument, "trailing bytes in client frame");
  }

 private:
  std::string_view buf_;
  size_t pos_ = 0;
};

void put_key(std::string& out, std::string_view key) {
  if (key.size() > kMaxKeySize) throw Error(ErrorCode::kInvalidArgument, "key too long");
  put_be16(out, static_cast<uint16_t>(key.size()));
  out += key;
}

}  // namespace

std::string request_id_hex(const RequestId& id) {
  static const char* const kHex = "0123456789abcdef";
  std::string s;
  for (uint8_t b : id) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 15]);
  }
  return s;
}

const char* status_name(Status status) {
  switch (status) {
    case Status::kOk: return "Ok";
    case Status::kValue: return "Value";
    case Status::kNotFound: return "NotFound";
    case Status::kEntries: return "Entries";
    case Status::kTimeout: return "Timeout";
    case Status::kNotLeader: return "NotLeader";
    case Status::kError: return "Error";
  }
  return "?";
}

std::string encode_frame(const Frame& frame) {
  const size_t len = 1 + 16 + frame.payload.size();
  if (len > kMaxFrameSize) throw Error(ErrorCode::kInvalidArgument, "frame too large");
  std::string out;
  out.reserve(4 + len);
  put_be32(out, static_cast<uint32_t>(len));
  put_u8(out, static_cast<uint8_t>(frame.type));
  out.append(reinterpret_cast<const char*>(frame.request_id.data()), 16);
  out += frame.payload;
  return out;
}

Frame decode_frame_body(std::string_view body) {
  if (body.size() < 17) throw Error(ErrorCode::kInvalidArgument, "short client frame");
  Frame f;
  const uint8_t type = static_cast<uint8_t>(body[0]);
  if ((type < 1 || type > 5) && type != 16) {
    throw Error(ErrorCode::kInvalidArgument, "unknown frame type " + std::to_string(type));
  }
  f.type = static_cast<FrameType>(type);
  std::memcpy(f.request_id.data(), body.data() + 1, 16);
  f.payload = std::string(body.substr(17));
  return f;
}

std::optional<Frame> FrameReader::next() {
  if (buf_.size() < 4) return std::nullopt;
  const uint32_t len = get_be32(buf_.data());
  if (len > kMaxFrameSize || len < 17) {
    throw Error(ErrorCode::kInvalidArgument, "bad frame length " + std::to_string(len));
  }
  if (buf_.size() < 4 + static_cast<size_t>(len)) return std::nullopt;
  Frame f = decode_frame_body(std::string_view(buf_).substr(4, len));
  buf_.erase(0, 4 + static_cast<size_t>(len));
  return f;
}

Frame encode_request(const ClientRequest& request) {
  Frame f;
  f.request_id = request.id;
  std::visit(
      [&](const auto& op) {
        using T = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<T, PutOp>) {
          if (op.key.empty()) throw Error(ErrorCode::kInvalidArgument, "empty put key");
          f.type = FrameType::kPut;
          put_key(f.payload, op.key);
          f.payload += op.value;
        } else if constexpr (std::is_same_v<T, GetOp>) {
          f.type = FrameType::kGet;
          put_key(f.payload, op.key);
        } else if constexpr (std::is_same_v<T, ScanOp>) {
          if (op.start > op.end) throw Error(ErrorCode::kInvalidRange, "scan start > end");
          f.type = FrameType::kScan;
          put_key(f.payload, op.start);
          put_key(f.payload, op.end);
          put_be32(f.payload, op.limit);
        } else {
          f.type = FrameType::kStatus;
        }
      },
      request.op);
  return f;
}

ClientRequest decode_request(const Frame& frame) {
  ClientRequest req;
  req.id = frame.request_id;
  BeReader r(frame.payload);
  switch (frame.type) {
    case FrameType::kPut: {
      PutOp op;
      op.key = r.bytes(r.u16());
      if (op.key.empty()) throw Error(ErrorCode::kInvalidArgument, "empty put key");
      op.value = r.rest();
      req.op = std::move(op);
      break;
    }
    case FrameType::kGet: {
      GetOp op;
      op.key = r.bytes(r.u16());
      req.op = std::move(op);
      break;
    }
    case FrameType::kScan: {
      ScanOp op;
      op.start = r.bytes(r.u16());
      op.end = r.bytes(r.u16());
      op.limit = r.u32();
      if (op.start > op.end) throw Error(ErrorCode::kInvalidRange, "scan start > end");
      req.op = std::move(op);
      break;
    }
    case FrameType::kStatus:
      req.op = StatusOp{};
      break;
    default:
      throw Error(ErrorCode::kInvalidArgument, "frame is not a request");
  }
  r.finish();
  return req;
}

Frame encode_response(const ClientResponse& response) {
  Frame f;
  f.type = FrameType::kReply;
  f.request_id = response.id;
  put_u8(f.payload, static_cast<uint8_t>(response.status));
  switch (response.status) {
    case Status::kValue:
    case Status::kError:
      f.payload += response.value;
      break;
    case Status::kEntries:
      put_be32(f.payload, static_cast<uint32_t>(response.entries.size()));
      for (const auto& [k, v] : response.entries) {
        put_key(f.payload, k);
        put_be32(f.payload, static_cast<uint32_t>(v.size()));
        f.payload += v;
      }
      break;
    case Status::kNotLeader:
      put_be64(f.payload, response.leader_hint);
      break;
    default:
      break;
  }
  return f;
}

ClientResponse decode_response(const Frame& frame) {
  if (frame.type != FrameType::kReply) throw Error(ErrorCode::kInvalidArgument, "frame is not a reply");
  ClientResponse resp;
  resp.id = frame.request_id;
  BeReader r(frame.payload);
  const uint8_t status = r.u8();
  if (status > static_cast<uint8_t>(Status::kError)) {
    throw Error(ErrorCode::kInvalidArgument, "unknown status " + std::to_string(status));
  }
  resp.status = static_cast<Status>(status);
  switch (resp.status) {
    case Status::kValue:
    case Status::kError:
      resp.value = r.rest();
      break;
    case Status::kEntries: {
      const uint32_t n = r.u32();
      for (uint32_t i = 0; i < n; ++i) {
        std::string k = r.bytes(r.u16());
        std::string v = r.bytes(r.u32());
        if (!resp.entries.empty() && !(resp.entries.back().first < k)) {
          throw Error(ErrorCode::kInvalidArgument, "reply entries not ascending");
        }
        resp.entries.emplace_back(std::move(k), std::move(v));
      }
      break;
    }
    case Status::kNotLeader:
      resp.leader_hint = r.u64();
      break;
    default:
      break;
  }
  r.finish();
  return resp;
}

}  // namespace nezha
