#include "restorl/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace restorl {

bool all_finite(const Grid& g) {
  for (double v : g.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Grid clamp01(const Grid& g) {
  Grid out = g;
  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

double l2_distance(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "l2_distance");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double mse(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double grid_mean(const Grid& g) {
  double acc = 0.0;
  for (double v : g.values()) acc += v;
  return acc / static_cast<double>(g.size());
}

void require_same_shape(const Grid& a, const Grid& b, const char* where) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(where) + ": shape mismatch (" +
                                std::to_string(a.channels()) + "x" + std::to_string(a.height()) +
                                "x" + std::to_string(a.width()) + " vs " +
                                std::to_string(b.channels()) + "x" + std::to_string(b.height()) +
                                "x" + std::to_string(b.width()) + ")");
  }
}

}  // namespace restorl
