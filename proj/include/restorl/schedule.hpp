#pragma once

#include <string>
#include <vector>

namespace restorl {

enum class ScheduleKind { linear, cosine };

// Noise schedule for a T-step diffusion chain. Timesteps are 1-based:
// beta(t) is valid for t in [1, T], alpha_bar(0) == 1 by convention.
//
// A schedule may be a strided subsequence of a longer chain; in that case
// model_timestep(t) maps the local step index to the timestep value the
// denoiser was trained on.
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;
  DiffusionSchedule(std::vector<double> betas, std::vector<int> model_timesteps,
                    double sigma_floor);

  int num_steps() const { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_[check(t) - 1]; }
  double alpha(int t) const { return alphas_[check(t) - 1]; }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_[check(t) - 1]; }
  double posterior_variance(int t) const { return posterior_variances_[check(t) - 1]; }
  int model_timestep(int t) const { return model_timesteps_[check(t) - 1]; }

  // Variance used when sampling the reverse step and evaluating the policy
  // density; floored so the log-density stays finite at the last step.
  double sampling_variance(int t) const;
  double sigma_floor() const { return sigma_floor_; }

  // Coefficients of the posterior mean of q(x_{t-1} | x_t, x_0):
  //   mean = coef_x0(t) * x0 + coef_xt(t) * x_t
  double posterior_coef_x0(int t) const;
  double posterior_coef_xt(int t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::vector<double>& posterior_variances() const { return posterior_variances_; }

  // Content hash over the schedule arrays; stable across runs.
  std::string hash() const;

 private:
  int check(int t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> posterior_variances_;
  std::vector<int> model_timesteps_;
  double sigma_floor_ = 1e-6;
};

DiffusionSchedule build_schedule(int num_steps, double beta_start, double beta_end,
                                 ScheduleKind kind, double sigma_floor = 1e-6);

// Strided K-step subsequence of `base`. The derived betas satisfy
// alpha_bar'(k) == alpha_bar(tau_k) for the selected original timesteps
// tau_1 < ... < tau_K = T, and model_timestep(k) reports tau_k.
DiffusionSchedule subsequence_schedule(const DiffusionSchedule& base, int num_steps);

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind kind);

}  // namespace restorl
