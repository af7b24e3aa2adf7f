#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "restorl/dataset.hpp"
#include "restorl/io.hpp"
#include "restorl/metrics.hpp"

using namespace restorl;
namespace fs = std::filesystem;

namespace {

const std::vector<Task> kAllTasks = {Task::lowlight, Task::rain, Task::motion_blur,
                                     Task::defocus};

Grid test_scene(std::uint64_t seed = 3) {
  Rng rng(seed);
  return generate_base_image(1, 16, rng);
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("severity near zero approaches the identity for every task") {
  const Grid img = test_scene();
  for (Task task : kAllTasks) {
    CAPTURE(to_string(task));
    Rng rng(11);
    const Grid out = degrade(img, task, 1e-4, rng);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
      max_diff = std::max(max_diff, std::abs(out[i] - img[i]));
    }
    CHECK(max_diff < 5e-3);
  }
}

TEST_CASE("motion blur leaves a constant image unchanged") {
  Grid flat(1, 16, 16, 0.42);
  Rng rng(5);
  const Grid out = degrade(flat, Task::motion_blur, 0.9, rng);
  for (double v : out.values()) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("disk kernel entries sum to one within 1e-9") {
  for (double radius : {0.5, 1.3, 2.8, 4.0}) {
    const Grid k = disk_kernel(radius);
    long double sum = 0.0L;  // independent direct summation
    for (double v : k.values()) sum += static_cast<long double>(v);
    CHECK(std::abs(static_cast<double>(sum) - 1.0) < 1e-9);
  }
  for (double len : {1.0, 3.5, 9.0}) {
    const Grid k = line_kernel(len, 0.7);
    long double sum = 0.0L;
    for (double v : k.values()) sum += static_cast<long double>(v);
    CHECK(std::abs(static_cast<double>(sum) - 1.0) < 1e-9);
  }
}

TEST_CASE("degradations at severity >= 0.2 strictly reduce psnr on non-constant images") {
  for (Task task : kAllTasks) {
    CAPTURE(to_string(task));
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const Grid img = test_scene(100 + seed);
      Rng rng(seed);
      const Grid out = degrade(img, task, 0.2 + 0.2 * seed, rng);
      CHECK(psnr(out, img) < kPsnrCap);
      CHECK(mse(out, img) > 0.0);
    }
  }
}

TEST_CASE("degradations contract into the unit range") {
  const Grid img = test_scene(7);
  for (Task task : kAllTasks) {
    Rng rng(13);
    const Grid out = degrade(img, task, 1.0, rng);
    for (double v : out.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("degrade rejects bad inputs") {
  const Grid img = test_scene();
  Rng rng(1);
  CHECK_THROWS_AS(degrade(img, Task::lowlight, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(degrade(img, Task::lowlight, 1.5, rng), std::invalid_argument);
  Grid bad = img;
  bad[0] = 1.5;
  CHECK_THROWS_AS(degrade(bad, Task::lowlight, 0.5, rng), std::invalid_argument);
}

TEST_CASE("degradation is deterministic given the seed") {
  const Grid img = test_scene(9);
  for (Task task : kAllTasks) {
    Rng r1(77), r2(77);
    CHECK(degrade(img, task, 0.6, r1) == degrade(img, task, 0.6, r2));
  }
}

TEST_CASE("dataset generation is reproducible and well-formed") {
  DatasetConfig config;
  config.count = 12;
  config.size = 16;
  config.task = Task::lowlight;

  const auto dir_a = fresh_dir("restorl_ds_a");
  const auto dir_b = fresh_dir("restorl_ds_b");
  make_dataset(dir_a, config, 42);
  make_dataset(dir_b, config, 42);

  // Same seed regenerates identical pixel data.
  CHECK(file_bytes(dir_a / "grids/pair-0003.gt.grid") ==
        file_bytes(dir_b / "grids/pair-0003.gt.grid"));
  CHECK(file_bytes(dir_a / "grids/pair-0007.lq.grid") ==
        file_bytes(dir_b / "grids/pair-0007.lq.grid"));

  const DatasetHandle ds = DatasetHandle::load(dir_a);
  CHECK(ds.size() == 12);

  // Splits are disjoint by id and cover the dataset.
  std::set<std::string> seen;
  for (Split split : {Split::train, Split::val, Split::test}) {
    for (std::size_t i : ds.indices(split)) {
      CHECK(seen.insert(ds.item(i).id).second);
    }
  }
  CHECK(seen.size() == 12);

  // Iteration order matches manifest order.
  for (std::size_t i = 0; i < ds.size(); ++i) {
    char expect[16];
    std::snprintf(expect, sizeof(expect), "pair-%04zu", i);
    CHECK(ds.item(i).id == expect);
  }

  // Round trip is bit exact against the original file payloads.
  const RestorationPair p = ds.pair(3);
  const Grid direct = read_grid(dir_a / "grids/pair-0003.gt.grid");
  CHECK(p.gt == direct);
  CHECK(p.severity == ds.item(3).severity);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("checksum corruption raises a dataset-integrity error") {
  DatasetConfig config;
  config.count = 4;
  config.size = 16;
  const auto dir = fresh_dir("restorl_ds_corrupt");
  make_dataset(dir, config, 7);

  // Flip one payload byte.
  const auto victim = dir / "grids/pair-0001.gt.grid";
  std::string bytes = file_bytes(victim);
  bytes[bytes.size() / 2] ^= 0x01;
  write_text_file(victim, bytes);

  const DatasetHandle ds = DatasetHandle::load(dir);
  CHECK_NOTHROW(ds.pair(0));
  CHECK_THROWS_AS(ds.pair(1), DatasetIntegrityError);
  fs::remove_all(dir);
}

TEST_CASE("corrupt manifest is rejected") {
  const auto dir = fresh_dir("restorl_ds_badmanifest");
  fs::create_directories(dir);
  write_text_file(dir / "manifest.json", "{not json");
  CHECK_THROWS_AS(DatasetHandle::load(dir), DatasetIntegrityError);
  write_text_file(dir / "manifest.json", "{\"format\":\"other\"}");
  CHECK_THROWS_AS(DatasetHandle::load(dir), DatasetIntegrityError);
  fs::remove_all(dir);
}

TEST_CASE("user-supplied scene folder feeds ground truths") {
  const auto scene_dir = fresh_dir("restorl_scenes");
  fs::create_directories(scene_dir);
  Rng rng(15);
  const Grid scene_a = generate_base_image(1, 16, rng);
  const Grid scene_b = generate_base_image(1, 16, rng);
  write_grid(scene_dir / "a.grid", scene_a);
  write_grid(scene_dir / "b.grid", scene_b);

  DatasetConfig config;
  config.count = 4;
  config.size = 16;
  config.base_image_dir = scene_dir.string();
  const auto dir = fresh_dir("restorl_ds_scenes");
  make_dataset(dir, config, 3);
  const DatasetHandle ds = DatasetHandle::load(dir);
  CHECK(ds.pair(0).gt == scene_a);  // sorted order: a.grid, b.grid, a.grid, ...
  CHECK(ds.pair(1).gt == scene_b);
  CHECK(ds.pair(2).gt == scene_a);
  fs::remove_all(scene_dir);
  fs::remove_all(dir);
}

TEST_CASE("procedural scenes are non-constant and in range") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed);
    const Grid img = generate_base_image(1, 16, rng);
    double lo = 1.0, hi = 0.0;
    for (double v : img.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(hi - lo > 0.05);
  }
}
