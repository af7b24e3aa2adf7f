#include "restorl/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "restorl/hash.hpp"

namespace restorl {

DiffusionSchedule::DiffusionSchedule(std::vector<double> betas, std::vector<int> model_timesteps,
                                     double sigma_floor)
    : betas_(std::move(betas)), model_timesteps_(std::move(model_timesteps)),
      sigma_floor_(sigma_floor) {
  if (betas_.empty()) throw std::invalid_argument("DiffusionSchedule: empty beta array");
  if (model_timesteps_.size() != betas_.size()) {
    throw std::invalid_argument("DiffusionSchedule: model timestep map size mismatch");
  }
  if (sigma_floor_ < 0.0) throw std::invalid_argument("DiffusionSchedule: negative sigma floor");

  const int n = static_cast<int>(betas_.size());
  alphas_.resize(n);
  alpha_bars_.resize(n);
  posterior_variances_.resize(n);
  double running = 1.0;
  for (int i = 0; i < n; ++i) {
    const double b = betas_[i];
    if (!std::isfinite(b) || b <= 0.0 || b >= 1.0) {
      throw std::invalid_argument("DiffusionSchedule: beta out of (0,1) at step " +
                                  std::to_string(i + 1));
    }
    alphas_[i] = 1.0 - b;
    const double prev_bar = running;
    running *= alphas_[i];
    alpha_bars_[i] = running;
    // Var of q(x_{t-1} | x_t, x_0) with alpha_bar(0) == 1.
    posterior_variances_[i] = b * (1.0 - prev_bar) / (1.0 - running);
    if (posterior_variances_[i] < 0.0) {
      throw std::invalid_argument("DiffusionSchedule: negative posterior variance");
    }
  }
  for (int i = 1; i < n; ++i) {
    if (!(alpha_bars_[i] < alpha_bars_[i - 1])) {
      throw std::invalid_argument("DiffusionSchedule: alpha_bar not strictly decreasing");
    }
  }
}

int DiffusionSchedule::check(int t) const {
  if (t < 1 || t > num_steps()) {
    throw std::out_of_range("DiffusionSchedule: timestep " + std::to_string(t) +
                            " outside [1, " + std::to_string(num_steps()) + "]");
  }
  return t;
}

double DiffusionSchedule::sampling_variance(int t) const {
  return std::max(posterior_variance(t), sigma_floor_);
}

double DiffusionSchedule::posterior_coef_x0(int t) const {
  check(t);
  return std::sqrt(alpha_bar(t - 1)) * beta(t) / (1.0 - alpha_bar(t));
}

double DiffusionSchedule::posterior_coef_xt(int t) const {
  check(t);
  return std::sqrt(alpha(t)) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

std::string DiffusionSchedule::hash() const {
  Fnv1a h;
  h.update_u64(static_cast<std::uint64_t>(num_steps()));
  h.update_doubles(betas_);
  for (int t : model_timesteps_) h.update_u64(static_cast<std::uint64_t>(t));
  h.update_doubles({sigma_floor_});
  return h.hex();
}

DiffusionSchedule build_schedule(int num_steps, double beta_start, double beta_end,
                                 ScheduleKind kind, double sigma_floor) {
  if (num_steps < 1) throw std::invalid_argument("build_schedule: need at least one step");
  if (!std::isfinite(beta_start) || !std::isfinite(beta_end)) {
    throw std::invalid_argument("build_schedule: non-finite beta bounds");
  }
  if (beta_start <= 0.0 || beta_end >= 1.0 || beta_start > beta_end) {
    throw std::invalid_argument("build_schedule: need 0 < beta_start <= beta_end < 1");
  }

  std::vector<double> betas(num_steps);
  if (kind == ScheduleKind::linear) {
    if (num_steps == 1) {
      betas[0] = beta_start;
    } else {
      for (int i = 0; i < num_steps; ++i) {
        betas[i] = beta_start + (beta_end - beta_start) * i / (num_steps - 1);
      }
    }
  } else {
    // Squared-cosine alpha_bar curve; betas derived from consecutive ratios
    // and clipped into the valid interval.
    const double s = 0.008;
    auto f = [&](double t) {
      const double v = std::cos((t / num_steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
      return v * v;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int i = 0; i < num_steps; ++i) {
      const double cur = f(static_cast<double>(i + 1)) / f0;
      double b = 1.0 - cur / prev;
      b = std::min(std::max(b, 1e-8), 0.999);
      betas[i] = b;
      prev *= 1.0 - b;
    }
  }

  std::vector<int> timesteps(num_steps);
  for (int i = 0; i < num_steps; ++i) timesteps[i] = i + 1;
  return DiffusionSchedule(std::move(betas), std::move(timesteps), sigma_floor);
}

DiffusionSchedule subsequence_schedule(const DiffusionSchedule& base, int num_steps) {
  const int total = base.num_steps();
  if (num_steps < 1 || num_steps > total) {
    throw std::invalid_argument("subsequence_schedule: step count outside [1, T]");
  }
  if (num_steps == total) return base;

  // Evenly spaced selection ending at T.
  std::vector<int> taus(num_steps);
  for (int k = 0; k < num_steps; ++k) {
    taus[k] = static_cast<int>(std::llround(static_cast<double>(k + 1) * total / num_steps));
    if (taus[k] < 1) taus[k] = 1;
    if (k > 0 && taus[k] <= taus[k - 1]) taus[k] = taus[k - 1] + 1;
  }
  taus.back() = total;

  std::vector<double> betas(num_steps);
  std::vector<int> model_ts(num_steps);
  double prev_bar = 1.0;
  for (int k = 0; k < num_steps; ++k) {
    const double bar = base.alpha_bar(taus[k]);
    betas[k] = 1.0 - bar / prev_bar;
    prev_bar = bar;
    model_ts[k] = taus[k];
  }
  return DiffusionSchedule(std::move(betas), std::move(model_ts), base.sigma_floor());
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "cosine";
}

}  // namespace restorl
