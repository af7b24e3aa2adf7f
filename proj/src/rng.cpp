#include "restorl/rng.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace restorl {

int Rng::uniform_int(int lo, int hi) {
  if (lo > hi) throw std::invalid_argument("Rng::uniform_int: lo > hi");
  const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
  return lo + static_cast<int>(engine_() % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 is kept away from 0 so the log is finite.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Grid Rng::normal_grid(int channels, int height, int width) {
  Grid g(channels, height, width);
  for (double& v : g.values()) v = normal();
  return g;
}

std::string Rng::serialize() const {
  // The spare Gaussian is stored as raw bits so the round-trip is exact.
  std::ostringstream oss;
  oss << engine_ << " " << (has_spare_ ? 1 : 0) << " "
      << std::bit_cast<std::uint64_t>(spare_);
  return oss.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream iss(state);
  int spare_flag = 0;
  std::uint64_t spare_bits = 0;
  iss >> engine_ >> spare_flag >> spare_bits;
  if (iss.fail()) throw std::runtime_error("Rng::restore: malformed state string");
  has_spare_ = spare_flag != 0;
  spare_ = std::bit_cast<double>(spare_bits);
}

std::uint64_t Rng::derive(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace restorl
