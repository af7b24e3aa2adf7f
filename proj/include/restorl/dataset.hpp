#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "restorl/grid.hpp"
#include "restorl/rng.hpp"

namespace restorl {

enum class Task { lowlight, rain, motion_blur, defocus };

Task task_from_string(const std::string& s);
std::string to_string(Task task);

enum class Split { train, val, test };

Split split_from_string(const std::string& s);
std::string to_string(Split split);

struct RestorationPair {
  Grid gt;
  Grid degraded;
  Task task = Task::lowlight;
  double severity = 0.0;
  std::string id;
};

// Severity in (0, 1] maps monotonically onto each task's physical knob:
//   lowlight:    gamma exponent 1 + 3s, shot-noise scale 0.08s
//   rain:        streak count ~ 18s on a 32x32 grid, brightness 0.2 + 0.4s
//   motion_blur: line kernel length 1 + 8s pixels, random angle
//   defocus:     disk kernel radius 0.5 + 3.5s pixels
// Outputs are clipped into [0, 1]; severity -> 0 approaches the identity.
Grid degrade(const Grid& image, Task task, double severity, Rng& rng);

// Exposed kernel builders; both are normalized to sum exactly 1.
Grid line_kernel(double length, double angle_rad);
Grid disk_kernel(double radius);

// Convolution with reflected borders, so flat regions stay flat.
Grid convolve_reflect(const Grid& image, const Grid& kernel);

// Procedural scene: oriented gradient, a few shapes, optional texture patch.
Grid generate_base_image(int channels, int size, Rng& rng);

struct DatasetConfig {
  int count = 64;
  Task task = Task::lowlight;
  int channels = 1;
  int size = 32;
  double severity_min = 0.3;
  double severity_max = 1.0;
  double train_fraction = 0.75;
  double val_fraction = 0.125;
  std::string base_image_dir;  // optional folder of .grid files used as scenes
};

class DatasetIntegrityError : public std::runtime_error {
 public:
  explicit DatasetIntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Writes `count` pairs plus a manifest (version, task, per-item seeds,
// severities, split assignment, checksums) under `dir`.
void make_dataset(const std::filesystem::path& dir, const DatasetConfig& config,
                  std::uint64_t seed);

// Lazy, order-stable access to a persisted dataset. Grid payloads are
// checksum-verified on every read.
class DatasetHandle {
 public:
  struct Item {
    std::string id;
    double severity = 0.0;
    std::uint64_t seed = 0;
    Split split = Split::train;
    std::string gt_file;
    std::string lq_file;
    std::string gt_checksum;
    std::string lq_checksum;
  };

  static DatasetHandle load(const std::filesystem::path& dir);

  std::size_t size() const { return items_.size(); }
  Task task() const { return task_; }
  int channels() const { return channels_; }
  int image_size() const { return size_; }
  const Item& item(std::size_t index) const { return items_.at(index); }

  RestorationPair pair(std::size_t index) const;
  std::vector<std::size_t> indices(Split split) const;

 private:
  std::filesystem::path dir_;
  Task task_ = Task::lowlight;
  int channels_ = 1;
  int size_ = 32;
  std::vector<Item> items_;
};

}  // namespace restorl
