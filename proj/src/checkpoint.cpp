#include "restorl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace restorl {

namespace {

constexpr char kMagic[4] = {'R', 'C', 'K', 'P'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
  put_u64(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

std::string get_string(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

std::vector<double> get_doubles(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out.write(kMagic, 4);
  put_u32(out, ckpt.format_version);
  const DenoiserArch& a = ckpt.params.arch;
  put_u32(out, static_cast<std::uint32_t>(a.image_channels));
  put_u32(out, static_cast<std::uint32_t>(a.hidden_channels));
  put_u32(out, static_cast<std::uint32_t>(a.num_blocks));
  put_u32(out, static_cast<std::uint32_t>(a.temb_dim));
  put_u32(out, static_cast<std::uint32_t>(a.kernel));
  put_doubles(out, ckpt.params.values);
  put_u64(out, ckpt.opt.step_count);
  put_doubles(out, ckpt.opt.m);
  put_doubles(out, ckpt.opt.v);
  put_string(out, ckpt.schedule_hash);
  put_u64(out, ckpt.train_step);
  put_string(out, ckpt.rng_state);
  put_string(out, ckpt.config_json);
  if (!out) throw std::runtime_error("save_checkpoint: short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path.string());
  }
  Checkpoint ckpt;
  ckpt.format_version = get_u32(in);
  if (ckpt.format_version != kCheckpointFormatVersion) {
    throw std::runtime_error("load_checkpoint: format version " +
                             std::to_string(ckpt.format_version) + " not supported (expected " +
                             std::to_string(kCheckpointFormatVersion) + ")");
  }
  ckpt.params.arch.image_channels = static_cast<int>(get_u32(in));
  ckpt.params.arch.hidden_channels = static_cast<int>(get_u32(in));
  ckpt.params.arch.num_blocks = static_cast<int>(get_u32(in));
  ckpt.params.arch.temb_dim = static_cast<int>(get_u32(in));
  ckpt.params.arch.kernel = static_cast<int>(get_u32(in));
  ckpt.params.values = get_doubles(in);
  ckpt.opt.step_count = get_u64(in);
  ckpt.opt.m = get_doubles(in);
  ckpt.opt.v = get_doubles(in);
  ckpt.schedule_hash = get_string(in);
  ckpt.train_step = get_u64(in);
  ckpt.rng_state = get_string(in);
  ckpt.config_json = get_string(in);
  if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path.string());
  if (ckpt.params.values.size() != param_count(ckpt.params.arch)) {
    throw std::runtime_error("load_checkpoint: parameter payload does not match architecture");
  }
  return ckpt;
}

}  // namespace restorl
