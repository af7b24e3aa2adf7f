#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "restorl/checkpoint.hpp"
#include "restorl/dataset.hpp"
#include "restorl/diffusion.hpp"
#include "restorl/model.hpp"
#include "restorl/reward.hpp"
#include "restorl/runstore.hpp"
#include "restorl/schedule.hpp"

namespace restorl {

struct LossBreakdown {
  double diff_term = 0.0;  // sum_i (1 - w_i) L_diff_i
  double rl_term = 0.0;    // -sum_i w_i J_i (objective negated into the loss)
  double kl_term = 0.0;
  double total = 0.0;
};

// Collects one trajectory per pair under the frozen behavior parameters and
// assigns a reward to every step by scoring the clamped clean-image
// estimate. With `final_step_reward_only` every reward except the last
// step's is zero. Backend failures propagate and abort the batch.
std::vector<Trajectory> collect_rollouts(const ModelParams& params_old,
                                         std::span<const RestorationPair> batch,
                                         const DiffusionSchedule& schedule,
                                         RewardBackend& backend, Rng& rng, bool use_refined,
                                         bool final_step_reward_only);

// exp(log p_theta - log p_theta_old), both densities re-evaluated at the
// recorded action.
double importance_ratio(const ModelParams& params, const ModelParams& params_old,
                        const TrajectoryStep& step, const Grid& cond,
                        const DiffusionSchedule& schedule);

// Clip envelope: (1 + eps) A for nonnegative advantages, (1 - eps) A below.
double clip_g(double clip_eps, double advantage);

struct SurrogateTerm {
  double value = 0.0;
  bool unclipped_active = true;  // gradient flows through the ratio iff true
};

SurrogateTerm clipped_term(double ratio, double advantage, double clip_eps);

// Pure scalar form over aligned per-step arrays: sum_t min(w A, g(eps, A)).
double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages,
                         double clip_eps);

// Scalar-and-gradient form: re-evaluates the policy under `params` at every
// recorded step, takes the recorded behavior log-prob as the denominator,
// and accumulates grad_scale * dJ/dtheta into `grad` (advantages are
// constants; gradients flow only through the ratio).
double clipped_objective(const ModelParams& params, const Trajectory& traj, const Grid& cond,
                         std::span<const double> advantages, const DiffusionSchedule& schedule,
                         double clip_eps, std::vector<double>* grad, double grad_scale = 1.0);

// Closed-form Gaussian KL between the current and frozen policies at the
// recorded states, KL = |mu - mu_old|^2 / (2 sigma_t^2), averaged over all
// steps of all trajectories and scaled by `weight`.
double kl_penalty(const ModelParams& params, const ModelParams& params_old,
                  std::span<const Trajectory> trajectories, std::span<const Grid* const> conds,
                  const DiffusionSchedule& schedule, double weight, std::vector<double>* grad);

// w_i = |y_i - g_i| / max_j |y_j - g_j|; an all-zero-error batch yields all
// zeros instead of dividing by zero.
std::vector<double> difficulty_weights(std::span<const Grid* const> outputs,
                                       std::span<const Grid* const> ground_truths);

// Bookkeeping assembly of the combined objective from per-sample streams.
LossBreakdown combine_loss_terms(std::span<const double> sft_losses,
                                 std::span<const double> rl_objectives, double kl,
                                 std::span<const double> weights);

enum class AdvantageMode { per_step, trajectory_sum };

struct RlConfig {
  int iterations = 30;
  int batch_size = 6;
  int inner_epochs = 2;
  double lr = 5e-4;
  double clip_eps = 0.2;
  double kl_weight = 0.01;
  int sample_steps = 10;       // rollout subsequence length; 0 = full schedule
  int old_refresh_every = 1;   // outer iterations per theta_old refresh
  RewardKind reward = RewardKind::proxy;
  double norm_mix = 0.5;
  double norm_eps_var = 1e-8;
  double norm_track_decay = 0.9;
  bool use_refined_action = true;
  bool final_step_reward_only = false;
  bool uniform_weights = false;
  bool rl_enabled = true;      // false: difficulty-weighted SFT control
  AdvantageMode advantage_mode = AdvantageMode::per_step;
  bool iterative_scorer_refresh = false;
  int scorer_refresh_every = 10;
  int scorer_refresh_epochs = 60;
  double scorer_refresh_lr = 2e-3;
  int eval_samples = 6;
  bool dump_rollouts = false;
};

struct EvalSummary {
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  double frechet = 0.0;
  double ot = 0.0;
  double proxy_score = 0.0;  // 0 when no scorer is supplied
};

// Samples a restoration for every listed pair (plain reverse process, seeds
// derived from eval_seed) and aggregates fidelity and distribution metrics.
EvalSummary evaluate_model(const ModelParams& params, const DatasetHandle& dataset,
                           const std::vector<std::size_t>& indices,
                           const DiffusionSchedule& schedule, std::uint64_t eval_seed,
                           const ScorerParams* scorer);

struct RlTrainInputs {
  const DatasetHandle* dataset = nullptr;
  Checkpoint start;                 // SFT checkpoint to fine-tune
  DiffusionSchedule schedule;       // full training schedule
  RewardBackend* backend = nullptr; // scoring backend for rollouts
  ScorerParams* refresh_scorer = nullptr;  // proxy scorer refreshed by Iter. RL
  std::filesystem::path run_dir;
  std::uint64_t seed = 0;
  bool resume = false;
  std::string config_snapshot;      // stored in emitted checkpoints
};

// Outer RL loop: refresh theta_old, sample the batch, compute difficulty
// weights, collect per-step-rewarded rollouts, normalize advantages, then
// take the configured inner epochs of combined-loss updates. Logs one
// metrics record per iteration and checkpoints after each one.
Checkpoint run_rl_training(const RlTrainInputs& inputs, const RlConfig& config);

}  // namespace restorl
