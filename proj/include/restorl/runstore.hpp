#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace restorl {

struct MetricsRecord {
  int iteration = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double frechet_proxy = 0.0;
  double ot_cost = 0.0;
  double mean_reward = 0.0;
  std::map<std::string, double> extra;  // loss breakdown, per-task values, ...

  void validate() const;
};

class LogIntegrityError : public std::runtime_error {
 public:
  explicit LogIntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Append-only line-delimited metrics log with a version header; every record
// line carries a checksum of its payload. Records contain no timestamps or
// paths, so reruns with the same seed byte-match.
class RunStore {
 public:
  static RunStore create(const std::filesystem::path& dir);  // truncates an existing log
  static RunStore open(const std::filesystem::path& dir);

  void append(const MetricsRecord& record);
  std::vector<MetricsRecord> read_all() const;

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path log_path() const { return dir_ / "metrics.jsonl"; }

 private:
  std::filesystem::path dir_;
  int last_iteration_ = -1;
};

// Emits report.txt plus SVG curves (reward, psnr) into `run_dir/report/`.
// An empty run produces a notice file instead of plots. Re-rendering is
// deterministic.
void render_report(const std::filesystem::path& run_dir);

}  // namespace restorl
