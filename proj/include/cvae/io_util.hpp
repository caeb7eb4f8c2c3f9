#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cvae::io {

// FNV-1a 64-bit content fingerprint (provenance tracking, not cryptographic).
std::uint64_t fnv1a64_file(const std::string& path);
std::string fingerprint_hex(std::uint64_t h);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// Exclusive lock file guarding an artifact directory against concurrent
// writers; released on destruction.
class DirLock {
 public:
  explicit DirLock(const std::string& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
};

}  // namespace cvae::io
