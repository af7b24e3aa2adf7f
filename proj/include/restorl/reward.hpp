#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "restorl/dataset.hpp"
#include "restorl/grid.hpp"
#include "restorl/scorer.hpp"

namespace restorl {

// Negated Euclidean distance to the ground truth, so higher is better.
double reconstruction_reward(const Grid& x_hat, const Grid& g);

struct TrackStats {
  double mean = 0.0;
  double var = 0.0;
  double count = 0.0;
};

// Hybrid normalization state: per-image exponentially decayed running
// statistics plus the raw rewards of the current batch. `mix` weighs the
// track against the batch when both are available.
struct RewardStats {
  std::map<std::string, TrackStats> track;
  std::vector<double> batch;
  double eps_var = 1e-8;
  double mix = 0.5;
  double decay = 0.9;
};

// Updates one image's track with `new_rewards` and replaces the batch
// buffer with them. For multi-image batches use update_stats_batch, which
// buffers the union of all rewards.
void update_stats(RewardStats& stats, const std::string& image_id,
                  const std::vector<double>& new_rewards);

void update_stats_batch(RewardStats& stats,
                        const std::vector<std::pair<std::string, std::vector<double>>>& batch);

// (r - mu) / sqrt(sigma^2 + eps_var), with mu and sigma^2 mix-weighted
// between the image's track and the batch buffer. An image without a track
// falls back to batch-only statistics.
double advantage(double reward, const RewardStats& stats, const std::string& image_id);

enum class RewardKind { reconstruction, proxy, external };

RewardKind reward_kind_from_string(const std::string& s);
std::string to_string(RewardKind kind);

// Scoring backend used during rollout collection. Candidates are clean-range
// images (clamped clean-image estimates).
class RewardBackend {
 public:
  virtual ~RewardBackend() = default;
  virtual double score(const Grid& candidate, const RestorationPair& pair) = 0;
  virtual std::string name() const = 0;
};

class ReconstructionRewardBackend final : public RewardBackend {
 public:
  double score(const Grid& candidate, const RestorationPair& pair) override {
    return reconstruction_reward(candidate, pair.gt);
  }
  std::string name() const override { return "reconstruction"; }
};

class ProxyRewardBackend final : public RewardBackend {
 public:
  explicit ProxyRewardBackend(ScorerParams scorer) : scorer_(std::move(scorer)) {}
  double score(const Grid& candidate, const RestorationPair&) override {
    return iqa_reward(scorer_, candidate);
  }
  std::string name() const override { return "proxy"; }
  ScorerParams& scorer() { return scorer_; }
  const ScorerParams& scorer() const { return scorer_; }

 private:
  ScorerParams scorer_;
};

}  // namespace restorl
