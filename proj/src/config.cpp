#include "restorl/config.hpp"

#include "restorl/io.hpp"

namespace restorl {

using nlohmann::json;

DiffusionSchedule ExperimentConfig::build_diffusion_schedule() const {
  return build_schedule(schedule.num_steps, schedule.beta_start, schedule.beta_end, schedule.kind,
                        schedule.sigma_floor);
}

json config_to_json(const ExperimentConfig& c) {
  return json{
      {"task", to_string(c.task)},
      {"channels", c.channels},
      {"image_size", c.image_size},
      {"seed", c.seed},
      {"dataset",
       {{"count", c.dataset.count},
        {"severity_min", c.dataset.severity_min},
        {"severity_max", c.dataset.severity_max},
        {"train_fraction", c.dataset.train_fraction},
        {"val_fraction", c.dataset.val_fraction},
        {"base_image_dir", c.dataset.base_image_dir}}},
      {"schedule",
       {{"num_steps", c.schedule.num_steps},
        {"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end},
        {"kind", to_string(c.schedule.kind)},
        {"sigma_floor", c.schedule.sigma_floor}}},
      {"model",
       {{"hidden_channels", c.model.hidden_channels},
        {"num_blocks", c.model.num_blocks},
        {"temb_dim", c.model.temb_dim},
        {"kernel", c.model.kernel}}},
      {"sft",
       {{"steps", c.sft.steps},
        {"batch_size", c.sft.batch_size},
        {"lr", c.sft.lr},
        {"optimizer", c.sft.optimizer},
        {"checkpoint_every", c.sft.checkpoint_every}}},
      {"scorer",
       {{"hidden_dim", c.scorer.hidden_dim},
        {"epochs", c.scorer.epochs},
        {"lr", c.scorer.lr},
        {"min_rank_corr", c.scorer.min_rank_corr},
        {"max_extra_rounds", c.scorer.max_extra_rounds}}},
      {"rl",
       {{"iterations", c.rl.iterations},
        {"batch_size", c.rl.batch_size},
        {"inner_epochs", c.rl.inner_epochs},
        {"lr", c.rl.lr},
        {"clip_eps", c.rl.clip_eps},
        {"kl_weight", c.rl.kl_weight},
        {"sample_steps", c.rl.sample_steps},
        {"old_refresh_every", c.rl.old_refresh_every},
        {"reward", to_string(c.rl.reward)},
        {"norm_mix", c.rl.norm_mix},
        {"norm_eps_var", c.rl.norm_eps_var},
        {"norm_track_decay", c.rl.norm_track_decay},
        {"use_refined_action", c.rl.use_refined_action},
        {"final_step_reward_only", c.rl.final_step_reward_only},
        {"uniform_weights", c.rl.uniform_weights},
        {"rl_enabled", c.rl.rl_enabled},
        {"advantage_mode",
         c.rl.advantage_mode == AdvantageMode::per_step ? "per_step" : "trajectory_sum"},
        {"iterative_scorer_refresh", c.rl.iterative_scorer_refresh},
        {"scorer_refresh_every", c.rl.scorer_refresh_every},
        {"scorer_refresh_epochs", c.rl.scorer_refresh_epochs},
        {"scorer_refresh_lr", c.rl.scorer_refresh_lr},
        {"eval_samples", c.rl.eval_samples},
        {"dump_rollouts", c.rl.dump_rollouts}}},
      {"external_scorer",
       {{"mode", c.external_scorer.mode},
        {"command", c.external_scorer.command},
        {"url", c.external_scorer.url},
        {"timeout_ms", c.external_scorer.timeout_ms}}},
      {"paths",
       {{"dataset", c.paths.dataset},
        {"sft_checkpoint", c.paths.sft_checkpoint},
        {"scorer", c.paths.scorer},
        {"checkpoint", c.paths.checkpoint}}},
  };
}

namespace {

// Patch `base` with `patch`, requiring every patched key path to already
// exist with a compatible JSON type. Unknown keys are config errors.
void merge_strict(json& base, const json& patch, const std::string& path) {
  for (const auto& [key, value] : patch.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key: " + full);
    json& slot = base[key];
    if (slot.is_object()) {
      if (!value.is_object()) throw ConfigError("config key " + full + " expects an object");
      merge_strict(slot, value, full);
      continue;
    }
    const bool number_ok = slot.is_number() && value.is_number();
    const bool same_kind = (slot.is_string() && value.is_string()) ||
                           (slot.is_boolean() && value.is_boolean()) || number_ok;
    if (!same_kind) {
      throw ConfigError("config key " + full + " has incompatible type (expected " +
                        std::string(slot.type_name()) + ", got " +
                        std::string(value.type_name()) + ")");
    }
    slot = value;
  }
}

void apply_override(json& base, const std::string& entry) {
  const auto eq = entry.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value, got '" + entry + "'");
  }
  const std::string key_path = entry.substr(0, eq);
  const std::string raw_value = entry.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw_value);
  } catch (const json::exception&) {
    value = raw_value;  // unquoted strings are taken verbatim
  }
  if (value.is_object() || value.is_array()) {
    throw ConfigError("override values must be scalars: '" + entry + "'");
  }

  // Build a nested single-key patch and merge it strictly.
  json patch = value;
  std::size_t end = key_path.size();
  while (end > 0) {
    const auto dot = key_path.rfind('.', end - 1);
    const std::string key =
        key_path.substr(dot == std::string::npos ? 0 : dot + 1, end - (dot == std::string::npos ? 0 : dot + 1));
    if (key.empty()) throw ConfigError("override has an empty path segment: '" + entry + "'");
    patch = json{{key, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_strict(base, patch, "");
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  json base = config_to_json(ExperimentConfig{});
  merge_strict(base, j, "");

  ExperimentConfig c;
  c.task = task_from_string(base.at("task").get<std::string>());
  c.channels = base.at("channels").get<int>();
  c.image_size = base.at("image_size").get<int>();
  c.seed = base.at("seed").get<std::uint64_t>();

  const json& d = base.at("dataset");
  c.dataset.count = d.at("count").get<int>();
  c.dataset.severity_min = d.at("severity_min").get<double>();
  c.dataset.severity_max = d.at("severity_max").get<double>();
  c.dataset.train_fraction = d.at("train_fraction").get<double>();
  c.dataset.val_fraction = d.at("val_fraction").get<double>();
  c.dataset.base_image_dir = d.at("base_image_dir").get<std::string>();
  c.dataset.task = c.task;
  c.dataset.channels = c.channels;
  c.dataset.size = c.image_size;

  const json& s = base.at("schedule");
  c.schedule.num_steps = s.at("num_steps").get<int>();
  c.schedule.beta_start = s.at("beta_start").get<double>();
  c.schedule.beta_end = s.at("beta_end").get<double>();
  c.schedule.kind = schedule_kind_from_string(s.at("kind").get<std::string>());
  c.schedule.sigma_floor = s.at("sigma_floor").get<double>();

  const json& m = base.at("model");
  c.model.image_channels = c.channels;
  c.model.hidden_channels = m.at("hidden_channels").get<int>();
  c.model.num_blocks = m.at("num_blocks").get<int>();
  c.model.temb_dim = m.at("temb_dim").get<int>();
  c.model.kernel = m.at("kernel").get<int>();

  const json& f = base.at("sft");
  c.sft.steps = f.at("steps").get<int>();
  c.sft.batch_size = f.at("batch_size").get<int>();
  c.sft.lr = f.at("lr").get<double>();
  c.sft.optimizer = f.at("optimizer").get<std::string>();
  c.sft.checkpoint_every = f.at("checkpoint_every").get<int>();
  optimizer_kind_from_string(c.sft.optimizer);  // validates

  const json& q = base.at("scorer");
  c.scorer.hidden_dim = q.at("hidden_dim").get<int>();
  c.scorer.epochs = q.at("epochs").get<int>();
  c.scorer.lr = q.at("lr").get<double>();
  c.scorer.min_rank_corr = q.at("min_rank_corr").get<double>();
  c.scorer.max_extra_rounds = q.at("max_extra_rounds").get<int>();

  const json& r = base.at("rl");
  c.rl.iterations = r.at("iterations").get<int>();
  c.rl.batch_size = r.at("batch_size").get<int>();
  c.rl.inner_epochs = r.at("inner_epochs").get<int>();
  c.rl.lr = r.at("lr").get<double>();
  c.rl.clip_eps = r.at("clip_eps").get<double>();
  c.rl.kl_weight = r.at("kl_weight").get<double>();
  c.rl.sample_steps = r.at("sample_steps").get<int>();
  c.rl.old_refresh_every = r.at("old_refresh_every").get<int>();
  c.rl.reward = reward_kind_from_string(r.at("reward").get<std::string>());
  c.rl.norm_mix = r.at("norm_mix").get<double>();
  c.rl.norm_eps_var = r.at("norm_eps_var").get<double>();
  c.rl.norm_track_decay = r.at("norm_track_decay").get<double>();
  c.rl.use_refined_action = r.at("use_refined_action").get<bool>();
  c.rl.final_step_reward_only = r.at("final_step_reward_only").get<bool>();
  c.rl.uniform_weights = r.at("uniform_weights").get<bool>();
  c.rl.rl_enabled = r.at("rl_enabled").get<bool>();
  const std::string adv_mode = r.at("advantage_mode").get<std::string>();
  if (adv_mode == "per_step") {
    c.rl.advantage_mode = AdvantageMode::per_step;
  } else if (adv_mode == "trajectory_sum") {
    c.rl.advantage_mode = AdvantageMode::trajectory_sum;
  } else {
    throw ConfigError("rl.advantage_mode must be per_step or trajectory_sum");
  }
  c.rl.iterative_scorer_refresh = r.at("iterative_scorer_refresh").get<bool>();
  c.rl.scorer_refresh_every = r.at("scorer_refresh_every").get<int>();
  c.rl.scorer_refresh_epochs = r.at("scorer_refresh_epochs").get<int>();
  c.rl.scorer_refresh_lr = r.at("scorer_refresh_lr").get<double>();
  c.rl.eval_samples = r.at("eval_samples").get<int>();
  c.rl.dump_rollouts = r.at("dump_rollouts").get<bool>();

  const json& e = base.at("external_scorer");
  c.external_scorer.mode = e.at("mode").get<std::string>();
  c.external_scorer.command = e.at("command").get<std::string>();
  c.external_scorer.url = e.at("url").get<std::string>();
  c.external_scorer.timeout_ms = e.at("timeout_ms").get<int>();

  const json& p = base.at("paths");
  c.paths.dataset = p.at("dataset").get<std::string>();
  c.paths.sft_checkpoint = p.at("sft_checkpoint").get<std::string>();
  c.paths.scorer = p.at("scorer").get<std::string>();
  c.paths.checkpoint = p.at("checkpoint").get<std::string>();

  if (c.schedule.num_steps < 1) throw ConfigError("schedule.num_steps must be >= 1");
  if (!(c.rl.clip_eps > 0.0 && c.rl.clip_eps < 1.0)) {
    throw ConfigError("rl.clip_eps must lie in (0,1)");
  }
  if (!(c.rl.norm_mix >= 0.0 && c.rl.norm_mix <= 1.0)) {
    throw ConfigError("rl.norm_mix must lie in [0,1]");
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& file,
                             const std::vector<std::string>& overrides) {
  json resolved = config_to_json(ExperimentConfig{});
  if (!file.empty()) {
    if (!std::filesystem::exists(file)) {
      throw ConfigError("config file not found: " + file.string());
    }
    json from_file;
    try {
      from_file = json::parse(read_text_file(file));
    } catch (const json::exception& e) {
      throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
    merge_strict(resolved, from_file, "");
  }
  for (const std::string& entry : overrides) apply_override(resolved, entry);
  return config_from_json(resolved);
}

}  // namespace restorl
