// restorl command-line entry point: dataset synthesis, SFT, scorer training,
// RL fine-tuning, evaluation, ablation sweeps, and report rendering.
//
// Exit codes: 0 success, 2 configuration error, 3 missing dependency stage,
// 4 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "restorl/config.hpp"
#include "restorl/io.hpp"
#include "restorl/metrics.hpp"
#include "restorl/rl.hpp"
#include "restorl/runstore.hpp"

namespace fs = std::filesystem;
using namespace restorl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitRuntime = 4;

// Exclusive lock file guarding a run directory against concurrent writers.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw std::runtime_error("run directory is locked by another writer: " + path_.string() +
                               " (remove the stale .lock file if no run is active)");
    }
  }
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string data_dir, sft_path, scorer_path, ckpt_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool resume = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_out = true) {
  cmd->add_option("--config", args.config_file, "JSON config file");
  cmd->add_option("--override", args.overrides, "key.path=value config overrides")
      ->type_size(1)
      ->allow_extra_args(false);
  cmd->add_option("--seed", args.seed, "master seed (overrides config)")
      ->each([&args](const std::string&) { args.seed_set = true; });
  if (needs_out) cmd->add_option("--out", args.out_dir, "run directory")->required();
  cmd->add_option("--data", args.data_dir, "dataset directory (paths.dataset)");
  cmd->add_option("--sft", args.sft_path, "SFT checkpoint file (paths.sft_checkpoint)");
  cmd->add_option("--scorer", args.scorer_path, "proxy scorer file (paths.scorer)");
  cmd->add_option("--ckpt", args.ckpt_path, "checkpoint to evaluate (paths.checkpoint)");
  cmd->add_flag("--resume", args.resume, "resume from the run directory's checkpoint");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig config = load_config(
      args.config_file.empty() ? fs::path{} : fs::path(args.config_file), args.overrides);
  if (args.seed_set) config.seed = args.seed;
  if (!args.data_dir.empty()) config.paths.dataset = args.data_dir;
  if (!args.sft_path.empty()) config.paths.sft_checkpoint = args.sft_path;
  if (!args.scorer_path.empty()) config.paths.scorer = args.scorer_path;
  if (!args.ckpt_path.empty()) config.paths.checkpoint = args.ckpt_path;
  return config;
}

void persist_config(const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file(dir / "config.json", config_to_json(config).dump(2) + "\n");
}

DatasetHandle require_dataset(const ExperimentConfig& config) {
  if (config.paths.dataset.empty()) {
    throw DependencyError("paths.dataset is not set; create one with `restorl make-data`");
  }
  if (!fs::exists(fs::path(config.paths.dataset) / "manifest.json")) {
    throw DependencyError("dataset manifest not found at " + config.paths.dataset +
                          "; run `restorl make-data --out " + config.paths.dataset + "` first");
  }
  return DatasetHandle::load(config.paths.dataset);
}

Checkpoint require_sft_checkpoint(const ExperimentConfig& config) {
  if (config.paths.sft_checkpoint.empty()) {
    throw DependencyError("paths.sft_checkpoint is not set; train one with `restorl train-sft`");
  }
  if (!fs::exists(config.paths.sft_checkpoint)) {
    throw DependencyError("SFT checkpoint not found at " + config.paths.sft_checkpoint +
                          "; run `restorl train-sft` first");
  }
  return load_checkpoint(config.paths.sft_checkpoint);
}

ScorerParams require_scorer(const ExperimentConfig& config) {
  if (config.paths.scorer.empty()) {
    throw DependencyError("paths.scorer is not set; train one with `restorl train-scorer`");
  }
  if (!fs::exists(config.paths.scorer)) {
    throw DependencyError("proxy scorer not found at " + config.paths.scorer +
                          "; run `restorl train-scorer` first");
  }
  return load_scorer(config.paths.scorer);
}

ExternalScorerConfig resolve_external(const ExperimentConfig& config) {
  ExternalScorerConfig ext = config.external_scorer;
  if (ext.url.empty() && ext.command.empty()) {
    if (const char* env = std::getenv("RESTORL_SCORER_ENDPOINT")) {
      const std::string endpoint = env;
      if (endpoint.rfind("http", 0) == 0) {
        ext.mode = "http";
        ext.url = endpoint;
      } else {
        ext.mode = "subprocess";
        ext.command = endpoint;
      }
    }
  }
  if (ext.mode == "http" && ext.url.empty()) {
    throw DependencyError("external reward selected but no endpoint configured; set "
                          "external_scorer.url or RESTORL_SCORER_ENDPOINT");
  }
  if (ext.mode == "subprocess" && ext.command.empty()) {
    throw DependencyError("external reward selected but no scorer command configured; set "
                          "external_scorer.command or RESTORL_SCORER_ENDPOINT");
  }
  return ext;
}

int cmd_make_data(const CommonArgs& args) {
  ExperimentConfig config = resolve_config(args);
  RunLock lock(args.out_dir);
  persist_config(config, args.out_dir);
  make_dataset(args.out_dir, config.dataset, config.seed);
  std::printf("dataset written to %s (%d pairs, task=%s)\n", args.out_dir.c_str(),
              config.dataset.count, to_string(config.task).c_str());
  return kExitOk;
}

int cmd_train_sft(const CommonArgs& args) {
  ExperimentConfig config = resolve_config(args);
  const DatasetHandle dataset = require_dataset(config);
  const DiffusionSchedule schedule = config.build_diffusion_schedule();

  RunLock lock(args.out_dir);
  persist_config(config, args.out_dir);
  const fs::path ckpt_path = fs::path(args.out_dir) / "checkpoint.ckpt";

  const auto train_idx = dataset.indices(Split::train);
  auto val_idx = dataset.indices(Split::val);
  if (train_idx.empty()) throw DependencyError("dataset has no train split");
  if (static_cast<int>(val_idx.size()) > config.rl.eval_samples) {
    val_idx.resize(config.rl.eval_samples);
  }

  std::vector<RestorationPair> train_pairs;
  for (std::size_t idx : train_idx) train_pairs.push_back(dataset.pair(idx));

  ModelParams params;
  OptimizerState opt;
  int start_step = 1;
  RunStore store = [&] {
    if (args.resume && fs::exists(ckpt_path)) {
      Checkpoint resumed = load_checkpoint(ckpt_path);
      params = resumed.params;
      opt = resumed.opt;
      start_step = static_cast<int>(resumed.train_step) + 1;
      return RunStore::open(args.out_dir);
    }
    Rng init_rng(Rng::derive(config.seed, 0x5f7));
    params = init_model(config.model, init_rng);
    return RunStore::create(args.out_dir);
  }();

  OptimizerHyper hyper{optimizer_kind_from_string(config.sft.optimizer), config.sft.lr};
  double last_loss = 0.0;
  for (int step = start_step; step <= config.sft.steps; ++step) {
    const std::uint64_t step_seed = Rng::derive(config.seed, static_cast<std::uint64_t>(step));
    Rng batch_rng(Rng::derive(step_seed, 1));
    Rng loss_rng(Rng::derive(step_seed, 2));

    std::vector<std::size_t> order(train_pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[batch_rng.uniform_int(0, static_cast<int>(i) - 1)]);
    }
    const std::size_t m = std::min<std::size_t>(config.sft.batch_size, order.size());
    std::vector<SftSample> batch;
    for (std::size_t i = 0; i < m; ++i) {
      batch.push_back({&train_pairs[order[i]].gt, &train_pairs[order[i]].degraded});
    }

    std::vector<double> grad(params.values.size(), 0.0);
    last_loss = sft_loss(params, batch, schedule, loss_rng, &grad);
    apply_update(params.values, grad, opt, hyper);

    const bool at_checkpoint =
        step % config.sft.checkpoint_every == 0 || step == config.sft.steps;
    if (at_checkpoint) {
      Checkpoint ckpt;
      ckpt.params = params;
      ckpt.opt = opt;
      ckpt.schedule_hash = schedule.hash();
      ckpt.train_step = static_cast<std::uint64_t>(step);
      ckpt.rng_state = std::to_string(config.seed);
      ckpt.config_json = config_to_json(config).dump();
      save_checkpoint(ckpt_path, ckpt);

      if (!val_idx.empty()) {
        const DiffusionSchedule eval_schedule =
            config.rl.sample_steps > 0 && config.rl.sample_steps < schedule.num_steps()
                ? subsequence_schedule(schedule, config.rl.sample_steps)
                : schedule;
        const EvalSummary eval = evaluate_model(params, dataset, val_idx, eval_schedule,
                                                Rng::derive(step_seed, 4), nullptr);
        MetricsRecord record;
        record.iteration = step;
        record.psnr = eval.psnr_mean;
        record.ssim = eval.ssim_mean;
        record.frechet_proxy = eval.frechet;
        record.ot_cost = eval.ot;
        record.mean_reward = 0.0;
        record.extra["sft_loss"] = last_loss;
        store.append(record);
        std::printf("sft step %5d  loss %.5f  val psnr %.2f dB\n", step, last_loss,
                    eval.psnr_mean);
      }
    }
  }
  std::printf("sft checkpoint written to %s\n", ckpt_path.c_str());
  return kExitOk;
}

int cmd_train_scorer(const CommonArgs& args) {
  ExperimentConfig config = resolve_config(args);
  const DatasetHandle dataset = require_dataset(config);
  RunLock lock(args.out_dir);
  persist_config(config, args.out_dir);

  Rng rng(Rng::derive(config.seed, 0x5c0));
  const ScorerParams scorer = train_quality_scorer(dataset, config.scorer, rng);
  const fs::path path = fs::path(args.out_dir) / "scorer.bin";
  save_scorer(path, scorer);
  std::printf("scorer written to %s (held-out rank correlation %.3f)\n", path.c_str(),
              scorer.holdout_rank_corr);
  return kExitOk;
}

std::unique_ptr<RewardBackend> build_backend(const ExperimentConfig& config,
                                             ScorerParams* proxy_scorer) {
  switch (config.rl.reward) {
    case RewardKind::reconstruction:
      return std::make_unique<ReconstructionRewardBackend>();
    case RewardKind::proxy:
      return std::make_unique<ProxyRewardBackend>(*proxy_scorer);
    case RewardKind::external:
      return std::make_unique<ExternalRewardBackend>(resolve_external(config));
  }
  throw std::logic_error("unreachable reward kind");
}

int run_single_rl(const ExperimentConfig& config, const fs::path& out_dir, bool resume) {
  const DatasetHandle dataset = require_dataset(config);
  Checkpoint sft = require_sft_checkpoint(config);

  ScorerParams scorer;
  bool have_scorer = false;
  if (config.rl.reward == RewardKind::proxy ||
      (config.rl.iterative_scorer_refresh && !config.paths.scorer.empty())) {
    scorer = require_scorer(config);
    have_scorer = true;
  }

  std::unique_ptr<RewardBackend> backend;
  ScorerParams* refresh_target = have_scorer ? &scorer : nullptr;
  if (config.rl.reward == RewardKind::proxy) {
    // The backend owns its copy; the refresh schedule retrains it in place.
    backend = std::make_unique<ProxyRewardBackend>(scorer);
    refresh_target = &static_cast<ProxyRewardBackend*>(backend.get())->scorer();
  } else {
    backend = build_backend(config, have_scorer ? &scorer : nullptr);
  }

  RlTrainInputs inputs;
  inputs.dataset = &dataset;
  inputs.start = std::move(sft);
  inputs.schedule = config.build_diffusion_schedule();
  inputs.backend = backend.get();
  inputs.refresh_scorer = refresh_target;
  inputs.run_dir = out_dir;
  inputs.seed = config.seed;
  inputs.resume = resume;
  inputs.config_snapshot = config_to_json(config).dump();

  const Checkpoint final_ckpt = run_rl_training(inputs, config.rl);
  const auto records = RunStore::open(out_dir).read_all();
  if (!records.empty()) {
    const auto& last = records.back();
    std::printf("rl run finished at iteration %d: reward %.4f, val psnr %.2f dB\n",
                last.iteration, last.mean_reward, last.psnr);
  }
  (void)final_ckpt;
  return kExitOk;
}

int cmd_train_rl(const CommonArgs& args) {
  ExperimentConfig config = resolve_config(args);
  RunLock lock(args.out_dir);
  persist_config(config, args.out_dir);
  return run_single_rl(config, args.out_dir, args.resume);
}

int cmd_evaluate(const CommonArgs& args) {
  ExperimentConfig config = resolve_config(args);
  const DatasetHandle dataset = require_dataset(config);

  fs::path ckpt_path = config.paths.checkpoint;
  if (ckpt_path.empty()) ckpt_path = config.paths.sft_checkpoint;
  if (ckpt_path.empty() || !fs::exists(ckpt_path)) {
    throw DependencyError("no checkpoint to evaluate; pass --ckpt or set paths.checkpoint");
  }
  const Checkpoint ckpt = load_checkpoint(ckpt_path);

  ScorerParams scorer;
  const ScorerParams* scorer_ptr = nullptr;
  if (!config.paths.scorer.empty() && fs::exists(config.paths.scorer)) {
    scorer = load_scorer(config.paths.scorer);
    scorer_ptr = &scorer;
  }

  auto idx = dataset.indices(Split::test);
  if (idx.empty()) idx = dataset.indices(Split::val);
  if (idx.empty()) throw DependencyError("dataset has neither test nor val split to evaluate on");

  const DiffusionSchedule schedule = config.build_diffusion_schedule();
  const DiffusionSchedule eval_schedule =
      config.rl.sample_steps > 0 && config.rl.sample_steps < schedule.num_steps()
          ? subsequence_schedule(schedule, config.rl.sample_steps)
          : schedule;
  const EvalSummary eval = evaluate_model(ckpt.params, dataset, idx, eval_schedule,
                                          Rng::derive(config.seed, 0xe7a1), scorer_ptr);

  RunLock lock(args.out_dir);
  persist_config(config, args.out_dir);
  MetricsRecord record;
  record.iteration = static_cast<int>(ckpt.train_step);
  record.psnr = eval.psnr_mean;
  record.ssim = eval.ssim_mean;
  record.frechet_proxy = eval.frechet;
  record.ot_cost = eval.ot;
  record.mean_reward = eval.proxy_score;
  record.extra["val_proxy_score"] = eval.proxy_score;
  RunStore store = RunStore::create(args.out_dir);
  store.append(record);

  std::printf("evaluation of %s on %zu pairs:\n", ckpt_path.c_str(), idx.size());
  std::printf("  psnr    %8.3f dB\n  ssim    %8.4f\n  frechet %8.5f\n  ot      %8.4f\n",
              eval.psnr_mean, eval.ssim_mean, eval.frechet, eval.ot);
  if (scorer_ptr) std::printf("  proxy   %8.4f\n", eval.proxy_score);
  return kExitOk;
}

int cmd_report(const CommonArgs& args) {
  render_report(args.out_dir);
  std::printf("report written to %s/report\n", args.out_dir.c_str());
  return kExitOk;
}

struct AblateArgs {
  CommonArgs common;
  std::vector<std::string> vary;
  bool suite = false;
};

int cmd_ablate(const AblateArgs& args) {
  ExperimentConfig base_config = resolve_config(args.common);
  const fs::path out_dir = args.common.out_dir;
  RunLock lock(out_dir);
  persist_config(base_config, out_dir);

  // Each variant is a named list of config overrides relative to the base.
  std::vector<std::pair<std::string, std::vector<std::string>>> variants;
  if (args.suite) {
    variants = {
        {"diff_sft", {"rl.rl_enabled=false"}},
        {"with_rec", {"rl.reward=reconstruction"}},
        {"wo_wi", {"rl.uniform_weights=true"}},
        {"with_xt", {"rl.use_refined_action=false"}},
        {"reward_x0", {"rl.final_step_reward_only=true"}},
        {"norm_track", {"rl.norm_mix=1.0"}},
        {"iter_rl", {"rl.iterative_scorer_refresh=true"}},
        {"original", {}},
    };
  } else {
    if (args.vary.empty()) {
      throw ConfigError("ablate needs --vary key=v1,v2 entries or --suite");
    }
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    for (const std::string& entry : args.vary) {
      const auto eq = entry.find('=');
      if (eq == std::string::npos) throw ConfigError("--vary needs key=v1,v2 form: " + entry);
      const std::string key = entry.substr(0, eq);
      std::vector<std::string> values;
      std::string rest = entry.substr(eq + 1);
      std::size_t pos = 0;
      while (pos <= rest.size()) {
        const auto comma = rest.find(',', pos);
        values.push_back(rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                     : comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (values.empty()) throw ConfigError("--vary has no values: " + entry);
      axes.emplace_back(key, values);
    }
    variants.push_back({"", {}});
    for (const auto& [key, values] : axes) {
      std::vector<std::pair<std::string, std::vector<std::string>>> expanded;
      for (const auto& [name, overrides] : variants) {
        for (const std::string& v : values) {
          auto next = overrides;
          next.push_back(key + "=" + v);
          std::string next_name = name.empty() ? key + "_" + v : name + "__" + key + "_" + v;
          for (char& ch : next_name) {
            if (ch == '.' || ch == '/' || ch == '=') ch = '_';
          }
          expanded.emplace_back(next_name, next);
        }
      }
      variants = std::move(expanded);
    }
  }

  // Baseline row: the SFT checkpoint as-is.
  const DatasetHandle dataset = require_dataset(base_config);
  const Checkpoint sft = require_sft_checkpoint(base_config);
  auto idx = dataset.indices(Split::val);
  if (static_cast<int>(idx.size()) > base_config.rl.eval_samples) {
    idx.resize(base_config.rl.eval_samples);
  }
  ScorerParams scorer;
  const ScorerParams* scorer_ptr = nullptr;
  if (!base_config.paths.scorer.empty() && fs::exists(base_config.paths.scorer)) {
    scorer = load_scorer(base_config.paths.scorer);
    scorer_ptr = &scorer;
  }
  const DiffusionSchedule schedule = base_config.build_diffusion_schedule();
  const DiffusionSchedule eval_schedule =
      base_config.rl.sample_steps > 0 && base_config.rl.sample_steps < schedule.num_steps()
          ? subsequence_schedule(schedule, base_config.rl.sample_steps)
          : schedule;
  const EvalSummary base_eval = evaluate_model(sft.params, dataset, idx, eval_schedule,
                                               Rng::derive(base_config.seed, 0xe7a1), scorer_ptr);

  struct Row {
    std::string name;
    double psnr, ssim, frechet, ot, reward;
  };
  std::vector<Row> rows;
  rows.push_back({"base", base_eval.psnr_mean, base_eval.ssim_mean, base_eval.frechet,
                  base_eval.ot, base_eval.proxy_score});

  for (const auto& [name, extra_overrides] : variants) {
    CommonArgs variant_args = args.common;
    for (const std::string& o : extra_overrides) variant_args.overrides.push_back(o);
    ExperimentConfig config = resolve_config(variant_args);
    const fs::path run_dir = out_dir / ("run_" + name);
    {
      RunLock run_lock(run_dir);
      persist_config(config, run_dir);
      run_single_rl(config, run_dir, args.common.resume);
    }
    const auto records = RunStore::open(run_dir).read_all();
    const auto& last = records.back();
    const double reward = last.extra.count("val_proxy_score") ? last.extra.at("val_proxy_score")
                                                              : last.mean_reward;
    rows.push_back({name, last.psnr, last.ssim, last.frechet_proxy, last.ot_cost, reward});
  }

  std::string table;
  table += "variant                 PSNR      SSIM   Frechet        OT   ProxyScore\n";
  for (const auto& row : rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-18s %9.3f %9.4f %9.4f %9.4f %12.4f\n", row.name.c_str(),
                  row.psnr, row.ssim, row.frechet, row.ot, row.reward);
    table += buf;
  }
  write_text_file(out_dir / "comparison.txt", table);
  std::fputs(table.c_str(), stdout);
  std::printf("comparison table written to %s\n", (out_dir / "comparison.txt").c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale RL fine-tuning for diffusion-based image restoration"};
  app.require_subcommand(1);

  CommonArgs make_args, sft_args, scorer_args, rl_args, eval_args, report_args;
  AblateArgs ablate_args;

  auto* make_cmd = app.add_subcommand("make-data", "synthesize a paired restoration dataset");
  add_common(make_cmd, make_args);
  auto* sft_cmd = app.add_subcommand("train-sft", "supervised diffusion fine-tuning");
  add_common(sft_cmd, sft_args);
  auto* scorer_cmd = app.add_subcommand("train-scorer", "train the proxy quality scorer");
  add_common(scorer_cmd, scorer_args);
  auto* rl_cmd = app.add_subcommand("train-rl", "reinforcement-learning fine-tuning");
  add_common(rl_cmd, rl_args);
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on the held-out split");
  add_common(eval_cmd, eval_args);
  auto* report_cmd = app.add_subcommand("report", "render plots and tables for a run");
  add_common(report_cmd, report_args);
  auto* ablate_cmd = app.add_subcommand("ablate", "run configured variants and tabulate them");
  add_common(ablate_cmd, ablate_args.common);
  ablate_cmd->add_option("--vary", ablate_args.vary,
                         "key=v1,v2 axis to vary (repeatable, cartesian product)");
  ablate_cmd->add_flag("--suite", ablate_args.suite, "run the standard ablation suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (make_cmd->parsed()) return cmd_make_data(make_args);
    if (sft_cmd->parsed()) return cmd_train_sft(sft_args);
    if (scorer_cmd->parsed()) return cmd_train_scorer(scorer_args);
    if (rl_cmd->parsed()) return cmd_train_rl(rl_args);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_args);
    if (report_cmd->parsed()) return cmd_report(report_args);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DependencyError& e) {
    std::fprintf(stderr, "dependency error: %s\n", e.what());
    return kExitDependency;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
