#include "restorl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "restorl/metrics.hpp"
#include "restorl/optimizer.hpp"
#include "restorl/scorer.hpp"

namespace restorl {

std::vector<Trajectory> collect_rollouts(const ModelParams& params_old,
                                         std::span<const RestorationPair> batch,
                                         const DiffusionSchedule& schedule,
                                         RewardBackend& backend, Rng& rng, bool use_refined,
                                         bool final_step_reward_only) {
  const std::uint64_t base = rng.next_u64();
  std::vector<Trajectory> rollouts;
  rollouts.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const RestorationPair& pair = batch[i];
    Trajectory traj = sample_trajectory(params_old, pair.degraded, pair.id, schedule,
                                        Rng::derive(base, i), use_refined);
    for (std::size_t k = 0; k < traj.steps.size(); ++k) {
      TrajectoryStep& step = traj.steps[k];
      if (final_step_reward_only && k + 1 != traj.steps.size()) {
        step.reward = 0.0;
      } else {
        step.reward = backend.score(clamp01(step.x0_prediction), pair);
        if (!std::isfinite(step.reward)) {
          throw std::runtime_error("collect_rollouts: backend '" + backend.name() +
                                   "' produced a non-finite reward");
        }
      }
    }
    rollouts.push_back(std::move(traj));
  }
  return rollouts;
}

double importance_ratio(const ModelParams& params, const ModelParams& params_old,
                        const TrajectoryStep& step, const Grid& cond,
                        const DiffusionSchedule& schedule) {
  const double lp_new =
      policy_log_density(params, step.state.values, cond, step.state.t, schedule,
                         step.action.values);
  const double lp_old =
      policy_log_density(params_old, step.state.values, cond, step.state.t, schedule,
                         step.action.values);
  const double ratio = std::exp(lp_new - lp_old);
  if (!std::isfinite(ratio)) {
    throw std::runtime_error("importance_ratio: non-finite density ratio");
  }
  return ratio;
}

double clip_g(double clip_eps, double advantage) {
  return advantage >= 0.0 ? (1.0 + clip_eps) * advantage : (1.0 - clip_eps) * advantage;
}

SurrogateTerm clipped_term(double ratio, double advantage, double clip_eps) {
  const double raw = ratio * advantage;
  const double clipped = clip_g(clip_eps, advantage);
  SurrogateTerm term;
  term.unclipped_active = raw <= clipped;
  term.value = term.unclipped_active ? raw : clipped;
  return term;
}

double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages,
                         double clip_eps) {
  if (ratios.size() != advantages.size()) {
    throw std::invalid_argument("clipped_surrogate: ratio/advantage misalignment");
  }
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw std::invalid_argument("clipped_surrogate: clip_eps must lie in (0,1)");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    total += clipped_term(ratios[i], advantages[i], clip_eps).value;
  }
  return total;
}

double clipped_objective(const ModelParams& params, const Trajectory& traj, const Grid& cond,
                         std::span<const double> advantages, const DiffusionSchedule& schedule,
                         double clip_eps, std::vector<double>* grad, double grad_scale) {
  if (advantages.size() != traj.steps.size()) {
    throw std::invalid_argument("clipped_objective: advantage/step misalignment");
  }
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw std::invalid_argument("clipped_objective: clip_eps must lie in (0,1)");
  }

  double objective = 0.0;
  for (std::size_t k = 0; k < traj.steps.size(); ++k) {
    const TrajectoryStep& step = traj.steps[k];
    const int t = step.state.t;
    const double var = schedule.sampling_variance(t);

    DenoiserCache cache;
    const Grid x0_hat = predict_x0(params, step.state.values, cond, t, schedule,
                                   grad ? &cache : nullptr);
    const Grid mean = posterior_mean(schedule, x0_hat, step.state.values, t);
    const double lp_new = gaussian_log_density(step.action.values, mean, var);
    const double ratio = std::exp(lp_new - step.log_prob);
    if (!std::isfinite(ratio)) {
      throw std::runtime_error("clipped_objective: non-finite importance ratio");
    }

    const SurrogateTerm term = clipped_term(ratio, advantages[k], clip_eps);
    objective += term.value;

    if (grad && term.unclipped_active && advantages[k] != 0.0) {
      // d term / d mu = A * w * (a - mu) / sigma^2; parameters reach mu only
      // through the noise prediction: d mu / d eps_hat = -c0 sqrt(1-abar)/sqrt(abar).
      const double coeff = advantages[k] * ratio;
      const double abar = schedule.alpha_bar(t);
      const double mu_eps = -schedule.posterior_coef_x0(t) * std::sqrt(1.0 - abar) /
                            std::sqrt(abar);
      Grid d_eps = Grid::like(mean);
      const double scale = grad_scale * coeff / var * mu_eps;
      for (std::size_t i = 0; i < mean.size(); ++i) {
        d_eps[i] = scale * (step.action.values[i] - mean[i]);
      }
      denoiser_backward(params, cache, d_eps, *grad);
    }
  }
  return objective;
}

double kl_penalty(const ModelParams& params, const ModelParams& params_old,
                  std::span<const Trajectory> trajectories, std::span<const Grid* const> conds,
                  const DiffusionSchedule& schedule, double weight, std::vector<double>* grad) {
  if (trajectories.size() != conds.size()) {
    throw std::invalid_argument("kl_penalty: trajectory/condition misalignment");
  }
  std::size_t total_steps = 0;
  for (const Trajectory& tr : trajectories) total_steps += tr.steps.size();
  if (total_steps == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(total_steps);

  double total = 0.0;
  for (std::size_t ti = 0; ti < trajectories.size(); ++ti) {
    const Grid& cond = *conds[ti];
    for (const TrajectoryStep& step : trajectories[ti].steps) {
      const int t = step.state.t;
      const double var = schedule.sampling_variance(t);
      if (!(var > 0.0)) throw std::invalid_argument("kl_penalty: variance below floor");

      DenoiserCache cache;
      const Grid x0_new = predict_x0(params, step.state.values, cond, t, schedule,
                                     grad ? &cache : nullptr);
      const Grid mu_new = posterior_mean(schedule, x0_new, step.state.values, t);
      const Grid x0_old = predict_x0(params_old, step.state.values, cond, t, schedule);
      const Grid mu_old = posterior_mean(schedule, x0_old, step.state.values, t);
      total += gaussian_kl_shared_var(mu_new, mu_old, var);

      if (grad) {
        const double abar = schedule.alpha_bar(t);
        const double mu_eps = -schedule.posterior_coef_x0(t) * std::sqrt(1.0 - abar) /
                              std::sqrt(abar);
        const double scale = weight * inv_n / var * mu_eps;
        Grid d_eps = Grid::like(mu_new);
        for (std::size_t i = 0; i < mu_new.size(); ++i) {
          d_eps[i] = scale * (mu_new[i] - mu_old[i]);
        }
        denoiser_backward(params, cache, d_eps, *grad);
      }
    }
  }
  return weight * total * inv_n;
}

std::vector<double> difficulty_weights(std::span<const Grid* const> outputs,
                                       std::span<const Grid* const> ground_truths) {
  if (outputs.empty() || outputs.size() != ground_truths.size()) {
    throw std::invalid_argument("difficulty_weights: empty batch or misaligned sets");
  }
  std::vector<double> errors(outputs.size());
  double max_err = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    errors[i] = l2_distance(*outputs[i], *ground_truths[i]);
    max_err = std::max(max_err, errors[i]);
  }
  std::vector<double> weights(outputs.size(), 0.0);
  if (max_err == 0.0) return weights;  // all-perfect batch: pure SFT step
  for (std::size_t i = 0; i < outputs.size(); ++i) weights[i] = errors[i] / max_err;
  return weights;
}

LossBreakdown combine_loss_terms(std::span<const double> sft_losses,
                                 std::span<const double> rl_objectives, double kl,
                                 std::span<const double> weights) {
  if (sft_losses.size() != weights.size() || rl_objectives.size() != weights.size()) {
    throw std::invalid_argument("combine_loss_terms: weight/sample misalignment");
  }
  LossBreakdown b;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    b.diff_term += (1.0 - weights[i]) * sft_losses[i];
    b.rl_term -= weights[i] * rl_objectives[i];
  }
  b.kl_term = kl;
  b.total = b.diff_term + b.rl_term + b.kl_term;
  return b;
}

EvalSummary evaluate_model(const ModelParams& params, const DatasetHandle& dataset,
                           const std::vector<std::size_t>& indices,
                           const DiffusionSchedule& schedule, std::uint64_t eval_seed,
                           const ScorerParams* scorer) {
  if (indices.empty()) throw std::invalid_argument("evaluate_model: empty index list");
  EvalSummary res;
  std::vector<Grid> outputs, gts;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const RestorationPair pair = dataset.pair(indices[k]);
    const Trajectory traj = sample_trajectory(params, pair.degraded, pair.id, schedule,
                                              Rng::derive(eval_seed, k), /*use_refined=*/false);
    Grid out = clamp01(traj.final_output);
    res.psnr_mean += psnr(out, pair.gt);
    res.ssim_mean += ssim(out, pair.gt, SsimConfig{.window = 8, .sigma = -1.0});
    if (scorer) res.proxy_score += iqa_reward(*scorer, out);
    outputs.push_back(std::move(out));
    gts.push_back(pair.gt);
  }
  const double n = static_cast<double>(indices.size());
  res.psnr_mean /= n;
  res.ssim_mean /= n;
  res.proxy_score /= n;
  res.frechet = frechet_proxy(outputs, gts);
  res.ot = empirical_ot_cost(outputs, gts);
  return res;
}

namespace {

std::vector<std::size_t> pick_batch(const std::vector<std::size_t>& pool, int batch_size,
                                    Rng& rng) {
  std::vector<std::size_t> order = pool;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
  }
  order.resize(std::min<std::size_t>(batch_size, order.size()));
  return order;
}

}  // namespace

Checkpoint run_rl_training(const RlTrainInputs& inputs, const RlConfig& config) {
  if (!inputs.dataset) throw std::invalid_argument("run_rl_training: dataset required");
  if (!inputs.backend && config.rl_enabled) {
    throw std::invalid_argument("run_rl_training: reward backend required");
  }
  const DatasetHandle& dataset = *inputs.dataset;
  const DiffusionSchedule& schedule = inputs.schedule;
  const DiffusionSchedule rollout_schedule =
      (config.sample_steps > 0 && config.sample_steps < schedule.num_steps())
          ? subsequence_schedule(schedule, config.sample_steps)
          : schedule;

  const auto train_idx = dataset.indices(Split::train);
  auto val_idx = dataset.indices(Split::val);
  if (train_idx.empty() || val_idx.empty()) {
    throw std::invalid_argument("run_rl_training: dataset needs train and val splits");
  }
  if (static_cast<int>(val_idx.size()) > config.eval_samples) {
    val_idx.resize(config.eval_samples);
  }

  std::filesystem::create_directories(inputs.run_dir);
  const auto ckpt_path = inputs.run_dir / "checkpoint.ckpt";

  ModelParams params = inputs.start.params;
  OptimizerState opt;
  int start_iter = 1;
  RunStore store = [&] {
    if (inputs.resume && std::filesystem::exists(ckpt_path)) {
      Checkpoint resumed = load_checkpoint(ckpt_path);
      params = resumed.params;
      opt = resumed.opt;
      start_iter = static_cast<int>(resumed.train_step) + 1;
      return RunStore::open(inputs.run_dir);
    }
    return RunStore::create(inputs.run_dir);
  }();

  ModelParams params_old = params;
  OptimizerHyper hyper{OptimizerKind::adam, config.lr};
  RewardStats stats;
  stats.mix = config.norm_mix;
  stats.eps_var = config.norm_eps_var;
  stats.decay = config.norm_track_decay;

  Checkpoint out;
  for (int iter = start_iter; iter <= config.iterations; ++iter) {
    const std::uint64_t iter_seed = Rng::derive(inputs.seed, static_cast<std::uint64_t>(iter));
    Rng batch_rng(Rng::derive(iter_seed, 1));
    Rng rollout_rng(Rng::derive(iter_seed, 2));
    Rng sft_rng(Rng::derive(iter_seed, 3));
    const std::uint64_t eval_seed = Rng::derive(iter_seed, 4);
    Rng refresh_rng(Rng::derive(iter_seed, 5));

    if ((iter - start_iter) % std::max(config.old_refresh_every, 1) == 0) params_old = params;

    const auto batch_indices = pick_batch(train_idx, config.batch_size, batch_rng);
    std::vector<RestorationPair> pairs;
    for (std::size_t idx : batch_indices) pairs.push_back(dataset.pair(idx));
    const std::size_t m = pairs.size();

    // Inference outputs for the difficulty weights; RL mode reuses the
    // rollout finals so sampling happens once per iteration.
    std::vector<Trajectory> rollouts;
    std::vector<Grid> y_outputs;
    if (config.rl_enabled) {
      rollouts = collect_rollouts(params_old, pairs, rollout_schedule, *inputs.backend,
                                  rollout_rng, config.use_refined_action,
                                  config.final_step_reward_only);
      for (const Trajectory& tr : rollouts) y_outputs.push_back(clamp01(tr.final_output));
    } else {
      const std::uint64_t base = rollout_rng.next_u64();
      for (std::size_t i = 0; i < m; ++i) {
        const Trajectory tr = sample_trajectory(params_old, pairs[i].degraded, pairs[i].id,
                                                rollout_schedule, Rng::derive(base, i),
                                                /*use_refined=*/false);
        y_outputs.push_back(clamp01(tr.final_output));
      }
    }

    std::vector<const Grid*> y_ptrs, gt_ptrs;
    for (std::size_t i = 0; i < m; ++i) {
      y_ptrs.push_back(&y_outputs[i]);
      gt_ptrs.push_back(&pairs[i].gt);
    }
    std::vector<double> weights = difficulty_weights(y_ptrs, gt_ptrs);
    if (config.uniform_weights) std::fill(weights.begin(), weights.end(), 1.0);

    double mean_reward = 0.0;
    double final_reward = 0.0;
    std::vector<std::vector<double>> advantages(m);
    if (config.rl_enabled) {
      // Track + batch statistics are refreshed with this batch's rewards,
      // then every step's advantage is normalized against them.
      std::vector<std::pair<std::string, std::vector<double>>> reward_batch;
      long reward_count = 0;
      for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> rewards;
        if (config.advantage_mode == AdvantageMode::trajectory_sum) {
          double total = 0.0;
          for (const TrajectoryStep& s : rollouts[i].steps) total += s.reward;
          rewards.push_back(total);
        } else {
          for (const TrajectoryStep& s : rollouts[i].steps) rewards.push_back(s.reward);
        }
        for (const TrajectoryStep& s : rollouts[i].steps) {
          mean_reward += s.reward;
          ++reward_count;
        }
        final_reward += rollouts[i].steps.back().reward;
        reward_batch.emplace_back(pairs[i].id, std::move(rewards));
      }
      mean_reward /= static_cast<double>(reward_count);
      final_reward /= static_cast<double>(m);
      update_stats_batch(stats, reward_batch);

      for (std::size_t i = 0; i < m; ++i) {
        if (config.advantage_mode == AdvantageMode::trajectory_sum) {
          const double adv = advantage(reward_batch[i].second[0], stats, pairs[i].id);
          advantages[i].assign(rollouts[i].steps.size(), adv);
        } else {
          for (const TrajectoryStep& s : rollouts[i].steps) {
            advantages[i].push_back(advantage(s.reward, stats, pairs[i].id));
          }
        }
      }

      if (config.dump_rollouts) {
        char name[48];
        std::snprintf(name, sizeof(name), "rollouts/iter_%04d.rollout", iter);
        std::filesystem::create_directories(inputs.run_dir / "rollouts");
        save_trajectories(inputs.run_dir / name, rollouts);
      }
    } else if (inputs.backend) {
      for (std::size_t i = 0; i < m; ++i) {
        mean_reward += inputs.backend->score(y_outputs[i], pairs[i]);
      }
      mean_reward /= static_cast<double>(m);
      final_reward = mean_reward;
    }

    // Inner optimization epochs over the collected rollouts.
    std::vector<SftSample> sft_batch;
    for (const RestorationPair& p : pairs) sft_batch.push_back({&p.gt, &p.degraded});
    LossBreakdown breakdown;
    for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
      std::vector<double> grad(params.values.size(), 0.0);
      std::vector<double> per_sample_sft;
      LossBreakdown b;
      if (config.rl_enabled) {
        std::vector<double> sft_weights(m);
        for (std::size_t i = 0; i < m; ++i) sft_weights[i] = 1.0 - weights[i];
        b.diff_term = weighted_sft_loss(params, sft_batch, sft_weights, schedule, sft_rng, &grad,
                                        &per_sample_sft);
        std::vector<double> objectives(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          objectives[i] = clipped_objective(params, rollouts[i], pairs[i].degraded,
                                            advantages[i], rollout_schedule, config.clip_eps,
                                            &grad, /*grad_scale=*/-weights[i]);
          b.rl_term -= weights[i] * objectives[i];
        }
        std::vector<const Grid*> conds;
        for (const RestorationPair& p : pairs) conds.push_back(&p.degraded);
        b.kl_term = kl_penalty(params, params_old, rollouts, conds, rollout_schedule,
                               config.kl_weight, &grad);
        b.total = b.diff_term + b.rl_term + b.kl_term;
      } else {
        // Difficulty-weighted SFT control: hard samples carry the weight.
        b.diff_term = weighted_sft_loss(params, sft_batch, weights, schedule, sft_rng, &grad,
                                        &per_sample_sft);
        b.total = b.diff_term;
      }
      apply_update(params.values, grad, opt, hyper);
      breakdown = b;
    }

    // Iterative reward-model refresh: relabel current outputs by their
    // residual severity (difficulty weight) and fine-tune the proxy scorer.
    if (config.iterative_scorer_refresh && inputs.refresh_scorer &&
        iter % std::max(config.scorer_refresh_every, 1) == 0) {
      std::vector<const Grid*> images;
      std::vector<double> labels;
      const std::vector<double> residual_weights = difficulty_weights(y_ptrs, gt_ptrs);
      for (std::size_t i = 0; i < m; ++i) {
        images.push_back(&y_outputs[i]);
        labels.push_back(severity_label(residual_weights[i]));
      }
      finetune_scorer(*inputs.refresh_scorer, images, labels, config.scorer_refresh_epochs,
                      config.scorer_refresh_lr, refresh_rng);
    }

    const EvalSummary eval = evaluate_model(params, dataset, val_idx, rollout_schedule,
                                            eval_seed, inputs.refresh_scorer);
    MetricsRecord record;
    record.iteration = iter;
    record.psnr = eval.psnr_mean;
    record.ssim = eval.ssim_mean;
    record.frechet_proxy = eval.frechet;
    record.ot_cost = eval.ot;
    record.mean_reward = mean_reward;
    record.extra["final_reward"] = final_reward;
    record.extra["val_proxy_score"] = eval.proxy_score;
    record.extra["loss_diff"] = breakdown.diff_term;
    record.extra["loss_rl"] = breakdown.rl_term;
    record.extra["loss_kl"] = breakdown.kl_term;
    record.extra["loss_total"] = breakdown.total;
    double mean_weight = 0.0;
    for (double w : weights) mean_weight += w;
    record.extra["mean_difficulty_weight"] = mean_weight / static_cast<double>(m);
    store.append(record);

    out.params = params;
    out.opt = opt;
    out.schedule_hash = schedule.hash();
    out.train_step = static_cast<std::uint64_t>(iter);
    out.rng_state = std::to_string(inputs.seed);
    out.config_json = inputs.config_snapshot;
    save_checkpoint(ckpt_path, out);
  }

  if (start_iter > config.iterations) {
    out = load_checkpoint(ckpt_path);
  }
  return out;
}

}  // namespace restorl
