#include "restorl/hash.hpp"

#include <cstdio>

namespace restorl {

void Fnv1a::update(const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    state_ ^= bytes[i];
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update_doubles(const std::vector<double>& values) {
  update(values.data(), values.size() * sizeof(double));
}

void Fnv1a::update_string(const std::string& s) { update(s.data(), s.size()); }

void Fnv1a::update_u64(std::uint64_t v) { update(&v, sizeof(v)); }

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return std::string(buf);
}

std::uint64_t fnv1a_bytes(const void* data, std::size_t len) {
  Fnv1a h;
  h.update(data, len);
  return h.digest();
}

std::string fnv1a_hex(const void* data, std::size_t len) {
  Fnv1a h;
  h.update(data, len);
  return h.hex();
}

}  // namespace restorl
