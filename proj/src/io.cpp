#include "restorl/io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace restorl {

namespace {

constexpr char kGridMagic[4] = {'R', 'G', 'R', 'D'};
constexpr std::uint32_t kGridVersion = 1;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr char kB64Chars[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::vector<unsigned char> grid_to_bytes(const Grid& g) {
  std::vector<unsigned char> out;
  out.reserve(20 + g.size() * sizeof(double));
  out.insert(out.end(), kGridMagic, kGridMagic + 4);
  put_u32(out, kGridVersion);
  put_u32(out, static_cast<std::uint32_t>(g.channels()));
  put_u32(out, static_cast<std::uint32_t>(g.height()));
  put_u32(out, static_cast<std::uint32_t>(g.width()));
  const std::size_t payload = g.size() * sizeof(double);
  const std::size_t offset = out.size();
  out.resize(offset + payload);
  std::memcpy(out.data() + offset, g.data(), payload);
  return out;
}

Grid grid_from_bytes(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kGridMagic, 4) != 0) {
    throw std::runtime_error("grid_from_bytes: not a grid container");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kGridVersion) {
    throw std::runtime_error("grid_from_bytes: unsupported version " + std::to_string(version));
  }
  const std::uint32_t c = get_u32(bytes.data() + 8);
  const std::uint32_t h = get_u32(bytes.data() + 12);
  const std::uint32_t w = get_u32(bytes.data() + 16);
  const std::size_t expected = static_cast<std::size_t>(c) * h * w * sizeof(double);
  if (bytes.size() != 20 + expected) {
    throw std::runtime_error("grid_from_bytes: truncated payload");
  }
  Grid g(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  std::memcpy(g.data(), bytes.data() + 20, expected);
  return g;
}

void write_grid(const std::filesystem::path& path, const Grid& g) {
  const auto bytes = grid_to_bytes(g);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_grid: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_grid: short write to " + path.string());
}

Grid read_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_grid: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return grid_from_bytes(bytes);
}

std::string base64_encode(const void* data, std::size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    std::uint32_t chunk = static_cast<std::uint32_t>(bytes[i]) << 16;
    if (i + 1 < len) chunk |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (i + 2 < len) chunk |= static_cast<std::uint32_t>(bytes[i + 2]);
    out.push_back(kB64Chars[(chunk >> 18) & 0x3f]);
    out.push_back(kB64Chars[(chunk >> 12) & 0x3f]);
    out.push_back(i + 1 < len ? kB64Chars[(chunk >> 6) & 0x3f] : '=');
    out.push_back(i + 2 < len ? kB64Chars[chunk & 0x3f] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw std::runtime_error("base64_decode: length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        vals[j] = 0;
        ++pad;
      } else {
        vals[j] = value_of(c);
        if (vals[j] < 0) throw std::runtime_error("base64_decode: invalid character");
        if (pad > 0) throw std::runtime_error("base64_decode: data after padding");
      }
    }
    const std::uint32_t chunk = (static_cast<std::uint32_t>(vals[0]) << 18) |
                                (static_cast<std::uint32_t>(vals[1]) << 12) |
                                (static_cast<std::uint32_t>(vals[2]) << 6) |
                                static_cast<std::uint32_t>(vals[3]);
    out.push_back(static_cast<unsigned char>((chunk >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((chunk >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(chunk & 0xff));
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_text_file: cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_text_file: cannot open " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write_text_file: short write to " + path.string());
}

}  // namespace restorl
