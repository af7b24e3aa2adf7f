#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "restorl/dataset.hpp"
#include "restorl/external_scorer.hpp"
#include "restorl/model.hpp"
#include "restorl/optimizer.hpp"
#include "restorl/rl.hpp"
#include "restorl/schedule.hpp"
#include "restorl/scorer.hpp"

namespace restorl {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required upstream artifact (dataset, checkpoint, scorer, endpoint) is
// missing; the message names it and the command that produces it.
class DependencyError : public std::runtime_error {
 public:
  explicit DependencyError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SftConfig {
  int steps = 600;
  int batch_size = 8;
  double lr = 2e-3;
  std::string optimizer = "adam";
  int checkpoint_every = 100;
};

struct PathsConfig {
  std::string dataset;
  std::string sft_checkpoint;
  std::string scorer;
  std::string checkpoint;  // explicit checkpoint for evaluate
};

// Fully resolved experiment settings. Layering: built-in defaults, then the
// config file, then --override entries; unknown keys are rejected at every
// layer and the resolved snapshot is persisted into each run directory.
struct ExperimentConfig {
  Task task = Task::lowlight;
  int channels = 1;
  int image_size = 32;
  DatasetConfig dataset;
  struct ScheduleSettings {
    int num_steps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.05;
    ScheduleKind kind = ScheduleKind::linear;
    double sigma_floor = 1e-6;
  } schedule;
  DenoiserArch model;
  SftConfig sft;
  ScorerTrainConfig scorer;
  RlConfig rl;
  ExternalScorerConfig external_scorer;
  PathsConfig paths;
  std::uint64_t seed = 1234;

  DiffusionSchedule build_diffusion_schedule() const;
};

nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);

// defaults <- optional file <- key=value overrides (dotted paths).
ExperimentConfig load_config(const std::filesystem::path& file,
                             const std::vector<std::string>& overrides);

}  // namespace restorl
