#include "nezha/file.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>

#include <zlib.h>

#include "nezha/common.h"

namespace nezha {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSegmentSealed: return "SegmentSealed";
    case ErrorCode::kIndexGap: return "IndexGap";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::kSegmentMissing: return "SegmentMissing";
    case ErrorCode::kNotABoundary: return "NotABoundary";
    case ErrorCode::kStaleApply: return "StaleApply";
    case ErrorCode::kInvalidRange: return "InvalidRange";
    case ErrorCode::kGapDetected: return "GapDetected";
    case ErrorCode::kUncommittedInput: return "UncommittedInput";
    case ErrorCode::kAlreadyRunning: return "AlreadyRunning";
    case ErrorCode::kCorruptState: return "CorruptState";
    case ErrorCode::kNotLeader: return "NotLeader";
    case ErrorCode::kChunkGap: return "ChunkGap";
    case ErrorCode::kUnsortedInput: return "UnsortedInput";
    case ErrorCode::kScriptError: return "ScriptError";
    case ErrorCode::kHistoryTooLarge: return "HistoryTooLarge";
    case ErrorCode::kClusterUnavailable: return "ClusterUnavailable";
    case ErrorCode::kIntegrityFailure: return "IntegrityFailure";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

void throw_io_error(const std::string& context) {
  throw Error(ErrorCode::kIoFailure, context + ": " + std::strerror(errno));
}

uint32_t crc32(std::string_view data, uint32_t seed) {
  return static_cast<uint32_t>(
      ::crc32(seed, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

File::~File() {
  if (fd_ >= 0) ::close(fd_);
}

File::File(File&& other) noexcept : fd_(std::exchange(other.fd_, -1)), path_(std::move(other.path_)) {}

File& File::operator=(File&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    path_ = std::move(other.path_);
  }
  return *this;
}

File File::open_rw(const std::filesystem::path& path, bool create) {
  File f;
  f.fd_ = ::open(path.c_str(), O_RDWR | O_CLOEXEC | (create ? O_CREAT : 0), 0644);
  if (f.fd_ < 0) throw_io_error("open " + path.string());
  f.path_ = path;
  return f;
}

File File::open_ro(const std::filesystem::path& path) {
  File f;
  f.fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (f.fd_ < 0) throw_io_error("open " + path.string());
  f.path_ = path;
  return f;
}

void File::write_at(uint64_t offset, std::string_view data) {
  size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::pwrite(fd_, data.data() + done, data.size() - done,
                         static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_io_error("pwrite " + path_.string());
    }
    done += static_cast<size_t>(n);
  }
}

size_t File::read_into(uint64_t offset, char* buf, size_t n) const {
  size_t done = 0;
  while (done < n) {
    ssize_t r = ::pread(fd_, buf + done, n - done, static_cast<off_t>(offset + done));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw_io_error("pread " + path_.string());
    }
    if (r == 0) break;
    done += static_cast<size_t>(r);
  }
  return done;
}

std::string File::read_at(uint64_t offset, size_t n) const {
  std::string out(n, '\0');
  out.resize(read_into(offset, out.data(), n));
  return out;
}

uint64_t File::size() const {
  struct stat st {};
  if (::fstat(fd_, &st) != 0) throw_io_error("fstat " + path_.string());
  return static_cast<uint64_t>(st.st_size);
}

void File::truncate(uint64_t size) {
  if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) throw_io_error("ftruncate " + path_.string());
}

void File::sync() {
  if (::fdatasync(fd_) != 0) throw_io_error("fdatasync " + path_.string());
}

void atomic_write_file(const std::filesystem::path& path, std::string_view data, SyncMode mode) {
  auto tmp = path;
  tmp += ".tmp";
  {
    File f = File::open_rw(tmp, true);
    f.truncate(0);
    f.write_at(0, data);
    if (mode == SyncMode::kPhysical) f.sync();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace nezha
