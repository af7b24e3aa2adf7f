#include "restorl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "restorl/hash.hpp"
#include "restorl/io.hpp"

namespace restorl {

using nlohmann::json;

Task task_from_string(const std::string& s) {
  if (s == "lowlight") return Task::lowlight;
  if (s == "rain") return Task::rain;
  if (s == "motion_blur") return Task::motion_blur;
  if (s == "defocus") return Task::defocus;
  throw std::invalid_argument("unknown task: " + s);
}

std::string to_string(Task task) {
  switch (task) {
    case Task::lowlight: return "lowlight";
    case Task::rain: return "rain";
    case Task::motion_blur: return "motion_blur";
    case Task::defocus: return "defocus";
  }
  throw std::logic_error("unreachable task");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split: " + s);
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw std::logic_error("unreachable split");
}

namespace {

void check_unit_range(const Grid& image, const char* where) {
  for (double v : image.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument(std::string(where) + ": image values must lie in [0,1]");
    }
  }
}

Grid darken_lowlight(const Grid& image, double severity, Rng& rng) {
  const double gamma = 1.0 + 3.0 * severity;
  Grid out = Grid::like(image);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double dark = std::pow(image[i], gamma);
    // Signal-dependent shot noise on top of the gamma curve.
    const double noise_std = severity * (0.02 + 0.06 * std::sqrt(dark));
    out[i] = std::clamp(dark + noise_std * rng.normal(), 0.0, 1.0);
  }
  return out;
}

Grid add_rain(const Grid& image, double severity, Rng& rng) {
  Grid out = image;
  const int h = image.height(), w = image.width();
  const int count = static_cast<int>(std::llround(severity * 18.0 * (h * w) / 1024.0));
  // Mostly vertical streaks with a shared prevailing direction.
  const double base_angle = std::numbers::pi / 2.0 + (rng.uniform() - 0.5) * 0.5;
  for (int k = 0; k < count; ++k) {
    const double cx = rng.uniform() * w;
    const double cy = rng.uniform() * h;
    const double angle = base_angle + (rng.uniform() - 0.5) * 0.15;
    const double len = 3.0 + 5.0 * rng.uniform();
    const double brightness = 0.2 + 0.4 * severity * rng.uniform();
    const double dx = std::cos(angle), dy = std::sin(angle);
    const int steps = static_cast<int>(std::ceil(len * 2.0));
    for (int sstep = 0; sstep <= steps; ++sstep) {
      const double f = (static_cast<double>(sstep) / steps - 0.5) * len;
      const int px = static_cast<int>(std::lround(cx + f * dx));
      const int py = static_cast<int>(std::lround(cy + f * dy));
      if (px < 0 || px >= w || py < 0 || py >= h) continue;
      for (int c = 0; c < out.channels(); ++c) {
        out.at(c, py, px) = std::clamp(out.at(c, py, px) + brightness, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace

Grid line_kernel(double length, double angle_rad) {
  const int radius = std::max(0, static_cast<int>(std::ceil((length - 1.0) / 2.0)));
  const int k = 2 * radius + 1;
  Grid kernel(1, k, k, 0.0);
  const double dx = std::cos(angle_rad), dy = std::sin(angle_rad);
  const double half = (length - 1.0) / 2.0;
  // Dense sampling along the segment with bilinear deposits.
  const int samples = std::max(1, static_cast<int>(std::ceil(length * 8.0)));
  for (int i = 0; i < samples; ++i) {
    const double f = samples == 1 ? 0.0 : (2.0 * i / (samples - 1) - 1.0) * half;
    const double x = radius + f * dx;
    const double y = radius + f * dy;
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    for (int oy = 0; oy <= 1; ++oy) {
      for (int ox = 0; ox <= 1; ++ox) {
        const int px = x0 + ox, py = y0 + oy;
        if (px < 0 || px >= k || py < 0 || py >= k) continue;
        kernel.at(0, py, px) += (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
      }
    }
  }
  double sum = 0.0;
  for (double v : kernel.values()) sum += v;
  for (double& v : kernel.values()) v /= sum;
  return kernel;
}

Grid disk_kernel(double radius) {
  const int r = std::max(0, static_cast<int>(std::ceil(radius - 0.5)));
  const int k = 2 * r + 1;
  Grid kernel(1, k, k, 0.0);
  double sum = 0.0;
  for (int y = 0; y < k; ++y) {
    for (int x = 0; x < k; ++x) {
      const double d = std::hypot(x - r, y - r);
      const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      kernel.at(0, y, x) = coverage;
      sum += coverage;
    }
  }
  for (double& v : kernel.values()) v /= sum;
  return kernel;
}

Grid convolve_reflect(const Grid& image, const Grid& kernel) {
  const int kh = kernel.height(), kw = kernel.width();
  const int py = kh / 2, px = kw / 2;
  const int h = image.height(), w = image.width();
  Grid out = Grid::like(image);
  auto reflect = [](int v, int n) {
    while (v < 0 || v >= n) {
      if (v < 0) v = -v - 1;
      if (v >= n) v = 2 * n - v - 1;
    }
    return v;
  };
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = reflect(y + ky - py, h);
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = reflect(x + kx - px, w);
            acc += kernel.at(0, ky, kx) * image.at(c, iy, ix);
          }
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

Grid degrade(const Grid& image, Task task, double severity, Rng& rng) {
  check_unit_range(image, "degrade");
  if (!(severity > 0.0 && severity <= 1.0)) {
    throw std::invalid_argument("degrade: severity must lie in (0,1]");
  }
  switch (task) {
    case Task::lowlight:
      return darken_lowlight(image, severity, rng);
    case Task::rain:
      return add_rain(image, severity, rng);
    case Task::motion_blur: {
      const double angle = rng.uniform() * std::numbers::pi;
      const double length = 1.0 + 8.0 * severity;
      Grid out = convolve_reflect(image, line_kernel(length, angle));
      for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
      return out;
    }
    case Task::defocus: {
      const double radius = 0.5 + 3.5 * severity;
      Grid out = convolve_reflect(image, disk_kernel(radius));
      for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
      return out;
    }
  }
  throw std::invalid_argument("degrade: unknown task");
}

Grid generate_base_image(int channels, int size, Rng& rng) {
  Grid img(channels, size, size);
  const double theta = rng.uniform() * 2.0 * std::numbers::pi;
  const double base = 0.25 + 0.4 * rng.uniform();
  const double slope = (rng.uniform() - 0.5) * 0.9;
  const double gx = std::cos(theta), gy = std::sin(theta);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double v = base + slope * (gx * x + gy * y) / size;
      for (int c = 0; c < channels; ++c) img.at(c, y, x) = v;
    }
  }

  const int shapes = 2 + rng.uniform_int(0, 2);
  for (int s = 0; s < shapes; ++s) {
    const double cx = rng.uniform() * size, cy = rng.uniform() * size;
    const double radius = size * (0.08 + 0.17 * rng.uniform());
    const double delta = (rng.uniform() - 0.5) * 1.0;
    const bool disk = rng.uniform() < 0.5;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double inside;
        if (disk) {
          const double d = std::hypot(x - cx, y - cy);
          inside = std::clamp(radius - d + 1.0, 0.0, 1.0);  // soft rim
        } else {
          inside = (std::abs(x - cx) < radius && std::abs(y - cy) < radius * 0.7) ? 1.0 : 0.0;
        }
        if (inside > 0.0) {
          for (int c = 0; c < channels; ++c) img.at(c, y, x) += delta * inside;
        }
      }
    }
  }

  if (rng.uniform() < 0.7) {
    const double freq = 0.3 + 0.8 * rng.uniform();
    const double amp = 0.05 + 0.10 * rng.uniform();
    const double phase = rng.uniform() * 2.0 * std::numbers::pi;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double v = amp * std::sin(freq * x + phase) * std::cos(freq * y);
        for (int c = 0; c < channels; ++c) img.at(c, y, x) += v;
      }
    }
  }

  for (double& v : img.values()) v = std::clamp(v, 0.02, 0.98);
  return img;
}

namespace {

constexpr int kManifestVersion = 1;

std::string file_checksum(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  return fnv1a_hex(bytes.data(), bytes.size());
}

std::vector<std::filesystem::path> list_grid_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".grid") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

void make_dataset(const std::filesystem::path& dir, const DatasetConfig& config,
                  std::uint64_t seed) {
  if (config.count < 1) throw std::invalid_argument("make_dataset: count must be >= 1");
  if (config.severity_min <= 0.0 || config.severity_max > 1.0 ||
      config.severity_min > config.severity_max) {
    throw std::invalid_argument("make_dataset: severity range must satisfy 0 < min <= max <= 1");
  }
  std::filesystem::create_directories(dir / "grids");

  std::vector<std::filesystem::path> scene_files;
  if (!config.base_image_dir.empty()) {
    scene_files = list_grid_files(config.base_image_dir);
    if (scene_files.empty()) {
      throw std::invalid_argument("make_dataset: no .grid scenes in " + config.base_image_dir);
    }
  }

  const int n_train = static_cast<int>(std::lround(config.count * config.train_fraction));
  const int n_val = static_cast<int>(std::lround(config.count * config.val_fraction));

  json items = json::array();
  for (int i = 0; i < config.count; ++i) {
    const std::uint64_t pair_seed = Rng::derive(seed, static_cast<std::uint64_t>(i));
    Rng rng(pair_seed);

    Grid gt;
    if (!scene_files.empty()) {
      gt = read_grid(scene_files[i % scene_files.size()]);
      gt = clamp01(gt);
    } else {
      gt = generate_base_image(config.channels, config.size, rng);
    }
    const double severity =
        config.severity_min + (config.severity_max - config.severity_min) * rng.uniform();
    const Grid lq = degrade(gt, config.task, severity, rng);

    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "pair-%04d", i);
    const std::string id = idbuf;
    const std::string gt_file = "grids/" + id + ".gt.grid";
    const std::string lq_file = "grids/" + id + ".lq.grid";
    write_grid(dir / gt_file, gt);
    write_grid(dir / lq_file, lq);

    const Split split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    items.push_back({{"id", id},
                     {"severity", severity},
                     {"seed", pair_seed},
                     {"split", to_string(split)},
                     {"gt", gt_file},
                     {"lq", lq_file},
                     {"gt_checksum", file_checksum(dir / gt_file)},
                     {"lq_checksum", file_checksum(dir / lq_file)}});
  }

  const json manifest = {{"format", "restorl-dataset"},
                         {"version", kManifestVersion},
                         {"task", to_string(config.task)},
                         {"seed", seed},
                         {"count", config.count},
                         {"channels", config.channels},
                         {"size", config.size},
                         {"items", items}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

DatasetHandle DatasetHandle::load(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw DatasetIntegrityError("dataset manifest missing: " + manifest_path.string());
  }
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw DatasetIntegrityError("corrupt dataset manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "restorl-dataset") {
    throw DatasetIntegrityError("not a dataset manifest: " + manifest_path.string());
  }
  if (manifest.value("version", -1) != kManifestVersion) {
    throw DatasetIntegrityError("unsupported dataset manifest version");
  }

  DatasetHandle h;
  h.dir_ = dir;
  h.task_ = task_from_string(manifest.at("task").get<std::string>());
  h.channels_ = manifest.at("channels").get<int>();
  h.size_ = manifest.at("size").get<int>();
  for (const auto& j : manifest.at("items")) {
    Item item;
    item.id = j.at("id").get<std::string>();
    item.severity = j.at("severity").get<double>();
    item.seed = j.at("seed").get<std::uint64_t>();
    item.split = split_from_string(j.at("split").get<std::string>());
    item.gt_file = j.at("gt").get<std::string>();
    item.lq_file = j.at("lq").get<std::string>();
    item.gt_checksum = j.at("gt_checksum").get<std::string>();
    item.lq_checksum = j.at("lq_checksum").get<std::string>();
    h.items_.push_back(std::move(item));
  }
  if (h.items_.size() != manifest.at("count").get<std::size_t>()) {
    throw DatasetIntegrityError("dataset manifest count does not match item list");
  }
  return h;
}

RestorationPair DatasetHandle::pair(std::size_t index) const {
  const Item& it = items_.at(index);
  auto verified_read = [&](const std::string& rel, const std::string& checksum) {
    const auto path = dir_ / rel;
    const std::string bytes = read_text_file(path);
    if (fnv1a_hex(bytes.data(), bytes.size()) != checksum) {
      throw DatasetIntegrityError("checksum mismatch for " + path.string());
    }
    return grid_from_bytes(std::vector<unsigned char>(bytes.begin(), bytes.end()));
  };
  RestorationPair p;
  p.gt = verified_read(it.gt_file, it.gt_checksum);
  p.degraded = verified_read(it.lq_file, it.lq_checksum);
  p.task = task_;
  p.severity = it.severity;
  p.id = it.id;
  return p;
}

std::vector<std::size_t> DatasetHandle::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].split == split) out.push_back(i);
  }
  return out;
}

}  // namespace restorl
