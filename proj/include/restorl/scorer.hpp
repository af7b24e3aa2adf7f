#pragma once

#include <filesystem>
#include <vector>

#include "restorl/dataset.hpp"
#include "restorl/grid.hpp"
#include "restorl/rng.hpp"

namespace restorl {

// No-reference quality regressor: fixed hand-crafted image statistics feed
// a small MLP whose squashed output lands in the five-level score range
// [1, 5]. Ground truths are labeled 5.0 and degraded images 5 - 4*severity.
struct ScorerParams {
  int feature_dim = 0;
  int hidden_dim = 0;
  std::vector<double> w1, b1;  // feature_dim -> hidden
  std::vector<double> w2;      // hidden -> 1
  double b2 = 0.0;
  std::vector<double> feat_mean, feat_std;  // training-set standardization
  int epochs_trained = 0;
  double holdout_rank_corr = 0.0;
};

// Fixed feature map: global statistics, gradient energies, local contrast,
// tail fractions. Deterministic, no trainable parts.
std::vector<double> quality_features(const Grid& image);

inline double severity_label(double severity) { return 5.0 - 4.0 * severity; }

// Score in [1, 5]; pure function of (scorer, image). Rejects non-finite input.
double iqa_reward(const ScorerParams& scorer, const Grid& image);

struct ScorerTrainConfig {
  int hidden_dim = 16;
  int epochs = 400;
  double lr = 5e-3;
  double min_rank_corr = 0.8;   // required on the held-out split
  int max_extra_rounds = 4;     // additional epoch blocks if below target
};

// Trains on the dataset's train split (ground truths at 5.0, degraded images
// at their severity labels) and validates the severity ranking on the val
// split. Throws if fewer than 3 distinct severity levels are present or the
// rank-correlation target cannot be met.
ScorerParams train_quality_scorer(const DatasetHandle& dataset, const ScorerTrainConfig& config,
                                  Rng& rng);

// Supervised fine-tune on explicit (image, label) pairs; used by the
// iterative reward-refresh schedule.
void finetune_scorer(ScorerParams& scorer, const std::vector<const Grid*>& images,
                     const std::vector<double>& labels, int epochs, double lr, Rng& rng);

void save_scorer(const std::filesystem::path& path, const ScorerParams& scorer);
ScorerParams load_scorer(const std::filesystem::path& path);

}  // namespace restorl
