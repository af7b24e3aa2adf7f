#include "restorl/reward.hpp"

#include <cmath>
#include <stdexcept>

namespace restorl {

double reconstruction_reward(const Grid& x_hat, const Grid& g) {
  return -l2_distance(x_hat, g);
}

namespace {

void check_stats_params(const RewardStats& stats) {
  if (!(stats.decay > 0.0 && stats.decay <= 1.0)) {
    throw std::invalid_argument("RewardStats: decay must lie in (0,1]");
  }
  if (!(stats.mix >= 0.0 && stats.mix <= 1.0)) {
    throw std::invalid_argument("RewardStats: mix must lie in [0,1]");
  }
  if (!(stats.eps_var > 0.0)) {
    throw std::invalid_argument("RewardStats: eps_var must be positive");
  }
}

void update_track(RewardStats& stats, const std::string& image_id,
                  const std::vector<double>& rewards) {
  TrackStats& t = stats.track[image_id];
  for (double r : rewards) {
    if (!std::isfinite(r)) throw std::invalid_argument("update_stats: non-finite reward");
    if (t.count == 0.0) {
      t.mean = r;
      t.var = 0.0;
    } else {
      // Exponentially weighted mean/variance.
      const double delta = r - t.mean;
      t.mean += (1.0 - stats.decay) * delta;
      t.var = stats.decay * (t.var + (1.0 - stats.decay) * delta * delta);
    }
    t.count += 1.0;
  }
}

}  // namespace

void update_stats(RewardStats& stats, const std::string& image_id,
                  const std::vector<double>& new_rewards) {
  check_stats_params(stats);
  update_track(stats, image_id, new_rewards);
  stats.batch = new_rewards;
}

void update_stats_batch(RewardStats& stats,
                        const std::vector<std::pair<std::string, std::vector<double>>>& batch) {
  check_stats_params(stats);
  std::vector<double> buffer;
  for (const auto& [id, rewards] : batch) {
    update_track(stats, id, rewards);
    buffer.insert(buffer.end(), rewards.begin(), rewards.end());
  }
  stats.batch = std::move(buffer);
}

double advantage(double reward, const RewardStats& stats, const std::string& image_id) {
  check_stats_params(stats);
  if (stats.batch.empty()) throw std::invalid_argument("advantage: empty batch buffer");

  double batch_mean = 0.0;
  for (double r : stats.batch) batch_mean += r;
  batch_mean /= static_cast<double>(stats.batch.size());
  double batch_var = 0.0;
  for (double r : stats.batch) batch_var += (r - batch_mean) * (r - batch_mean);
  batch_var /= static_cast<double>(stats.batch.size());

  double mu = batch_mean, var = batch_var;
  const auto it = stats.track.find(image_id);
  if (it != stats.track.end() && it->second.count > 0.0) {
    mu = stats.mix * it->second.mean + (1.0 - stats.mix) * batch_mean;
    var = stats.mix * it->second.var + (1.0 - stats.mix) * batch_var;
  }
  return (reward - mu) / std::sqrt(var + stats.eps_var);
}

RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "reconstruction") return RewardKind::reconstruction;
  if (s == "proxy") return RewardKind::proxy;
  if (s == "external") return RewardKind::external;
  throw std::invalid_argument("unknown reward kind: " + s);
}

std::string to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::reconstruction: return "reconstruction";
    case RewardKind::proxy: return "proxy";
    case RewardKind::external: return "external";
  }
  throw std::logic_error("unreachable reward kind");
}

}  // namespace restorl
