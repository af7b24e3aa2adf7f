#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace restorl {

// Dense real-valued image grid with (channels, height, width) layout.
// Row-major within each channel; channel is the slowest axis.
class Grid {
 public:
  Grid() = default;
  Grid(int channels, int height, int width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {
    if (channels <= 0 || height <= 0 || width <= 0) {
      throw std::invalid_argument("Grid: dimensions must be positive");
    }
  }

  static Grid like(const Grid& other, double fill = 0.0) {
    return Grid(other.channels_, other.height_, other.width_, fill);
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  const double& at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Grid& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  bool operator==(const Grid& o) const {
    return same_shape(o) && data_ == o.data_;
  }

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// Elementwise helpers shared by the diffusion, reward, and metric code.
bool all_finite(const Grid& g);
Grid clamp01(const Grid& g);
double l2_distance(const Grid& a, const Grid& b);
double mse(const Grid& a, const Grid& b);
double grid_mean(const Grid& g);

void require_same_shape(const Grid& a, const Grid& b, const char* where);

}  // namespace restorl
