#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "restorl/grid.hpp"

namespace restorl {

// Binary grid container (.grid files):
//   bytes 0..3   magic "RGRD"
//   u32 LE       format version (currently 1)
//   u32 LE       channels, height, width
//   f64 LE x N   pixel data, channel-major then row-major
// All multi-byte fields are little-endian.
void write_grid(const std::filesystem::path& path, const Grid& g);
Grid read_grid(const std::filesystem::path& path);

std::vector<unsigned char> grid_to_bytes(const Grid& g);
Grid grid_from_bytes(const std::vector<unsigned char>& bytes);

std::string base64_encode(const void* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace restorl
