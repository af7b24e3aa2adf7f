#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace restorl {

// FNV-1a 64-bit, used for dataset checksums and schedule/checkpoint hashes.
class Fnv1a {
 public:
  void update(const void* data, std::size_t len);
  void update_doubles(const std::vector<double>& values);
  void update_string(const std::string& s);
  void update_u64(std::uint64_t v);
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a_bytes(const void* data, std::size_t len);
std::string fnv1a_hex(const void* data, std::size_t len);

}  // namespace restorl
