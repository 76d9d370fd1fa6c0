#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace nezha {

// kPhysical issues fdatasync; kLogical only advances the durable watermark.
// The simulator runs with kLogical and tears unsynced tails itself.
enum class SyncMode { kPhysical, kLogical };

// RAII file descriptor with positional I/O. Reads are safe from many threads;
// writes must be serialized by the owner.
class File {
 public:
  File() = default;
  ~File();
  File(File&& other) noexcept;
  File& operator=(File&& other) noexcept;
  File(const File&) = delete;
  File& operator=(const File&) = delete;

  static File open_rw(const std::filesystem::path& path, bool create);
  static File open_ro(const std::filesystem::path& path);

  bool is_open() const { return fd_ >= 0; }
  const std::filesystem::path& path() const { return path_; }

  void write_at(uint64_t offset, std::string_view data);
  // Reads up to n bytes; returns fewer only at end of file.
  std::string read_at(uint64_t offset, size_t n) const;
  size_t read_into(uint64_t offset, char* buf, size_t n) const;
  uint64_t size() const;
  void truncate(uint64_t size);
  void sync();

 private:
  int fd_ = -1;
  std::filesystem::path path_;
};

// Write-then-rename replacement; the new content is visible all-or-nothing.
void atomic_write_file(const std::filesystem::path& path, std::string_view data, SyncMode mode);

// Empty string when the file does not exist.
std::string read_file(const std::filesystem::path& path);

}  // namespace nezha
