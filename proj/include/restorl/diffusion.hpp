#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "restorl/grid.hpp"
#include "restorl/model.hpp"
#include "restorl/rng.hpp"
#include "restorl/schedule.hpp"

namespace restorl {

struct LatentState {
  Grid values;
  int t = 0;

  void validate(const DiffusionSchedule& schedule) const;
};

// One reverse-process transition: state x_t, sampled (optionally refined)
// action x_{t-1}, its log-density under the sampling policy, the reward
// assigned afterwards, and the clean-image estimate used for scoring.
struct TrajectoryStep {
  LatentState state;
  LatentState action;
  double log_prob = 0.0;
  double reward = 0.0;
  Grid x0_prediction;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;  // ordered t = T .. 1
  Grid final_output;
  std::string condition_id;
  std::uint64_t rng_seed = 0;
  std::string schedule_hash;
  std::string model_hash;
};

// Noise predictor signature: (x, condition, model timestep) -> eps_hat.
// The sampling ops are written against this so alternative denoisers can
// be plugged in; ModelParams overloads are provided for the usual case.
using NoiseFn = std::function<Grid(const Grid&, const Grid&, int)>;

NoiseFn make_noise_fn(const ModelParams& params);

// q(x_t | x_0) sample: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
Grid forward_sample(const Grid& x0, int t, const Grid& noise, const DiffusionSchedule& schedule);

// Clean-image estimate from a noise prediction:
//   (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
// Returned unclamped; reward and metric code clamps for scoring, the
// density path never does.
Grid x0_from_eps(const Grid& x_t, const Grid& eps_hat, int t, const DiffusionSchedule& schedule);

Grid predict_x0(const NoiseFn& model, const Grid& x_t, const Grid& cond, int t,
                const DiffusionSchedule& schedule);
Grid predict_x0(const ModelParams& params, const Grid& x_t, const Grid& cond, int t,
                const DiffusionSchedule& schedule, DenoiserCache* cache = nullptr);

// DDPM posterior mean of q(x_{t-1} | x_t, x0_hat).
Grid posterior_mean(const DiffusionSchedule& schedule, const Grid& x0_hat, const Grid& x_t, int t);

// Log N(x; mean, var I) summed over all grid elements.
double gaussian_log_density(const Grid& x, const Grid& mean, double var);

// KL(N(mean_a, var I) || N(mean_b, var I)) = |mean_a - mean_b|^2 / (2 var).
double gaussian_kl_shared_var(const Grid& mean_a, const Grid& mean_b, double var);

// Log-density of `action` under the reverse-step policy at (x_t, cond, t).
double policy_log_density(const NoiseFn& model, const Grid& x_t, const Grid& cond, int t,
                          const DiffusionSchedule& schedule, const Grid& action);
double policy_log_density(const ModelParams& params, const Grid& x_t, const Grid& cond, int t,
                          const DiffusionSchedule& schedule, const Grid& action);

struct ReverseStepResult {
  LatentState sample;   // the action x_{t-1}
  double log_prob = 0.0;
  Grid x0_prediction;   // estimate backing the action's mean
  Grid policy_mean;     // mean of the sampling density
};

// One stochastic reverse step x_{t-1} ~ N(mu_theta(x_t, t, c), sigma_t^2 I).
ReverseStepResult reverse_step(const NoiseFn& model, const Grid& x_t, const Grid& cond, int t,
                               const DiffusionSchedule& schedule, Rng& rng);
ReverseStepResult reverse_step(const ModelParams& params, const Grid& x_t, const Grid& cond,
                               int t, const DiffusionSchedule& schedule, Rng& rng);

// Reverse step followed by a second denoiser pass on the draw; the refreshed
// clean-image estimate re-centers the posterior mean and the same noise draw
// is reapplied. The log-density is still evaluated under the original policy.
// At t == 1 there is no deeper denoise target and the plain step is returned.
ReverseStepResult refined_action(const NoiseFn& model, const Grid& x_t, const Grid& cond, int t,
                                 const DiffusionSchedule& schedule, Rng& rng);
ReverseStepResult refined_action(const ModelParams& params, const Grid& x_t, const Grid& cond,
                                 int t, const DiffusionSchedule& schedule, Rng& rng);

// Rolls the reverse chain from x_T ~ N(0, I) down to x_0, recording every
// step. The sampled action is installed as the next state.
Trajectory sample_trajectory(const NoiseFn& model, const Grid& cond,
                             const std::string& condition_id, const DiffusionSchedule& schedule,
                             std::uint64_t seed, bool use_refined,
                             const std::string& model_hash = "");
Trajectory sample_trajectory(const ModelParams& params, const Grid& cond,
                             const std::string& condition_id, const DiffusionSchedule& schedule,
                             std::uint64_t seed, bool use_refined);

// Binary trajectory container (.rollout files): metadata (condition ids,
// schedule/model hashes, seeds) plus per-step arrays, so collection and
// optimization can run as separate processes.
void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajs);
std::vector<Trajectory> load_trajectories(const std::filesystem::path& path);

}  // namespace restorl
