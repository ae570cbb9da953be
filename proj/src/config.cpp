#include "rlab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace rlab {

using nlohmann::json;

uint64_t fnv1a_hash(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::kVariance: return "variance";
    case RunMode::kBaseline: return "baseline";
    case RunMode::kBoth: return "both";
  }
  return "?";
}

RunMode parse_run_mode(const std::string& s) {
  if (s == "variance") return RunMode::kVariance;
  if (s == "baseline") return RunMode::kBaseline;
  if (s == "both") return RunMode::kBoth;
  throw ConfigError("mode must be one of variance|baseline|both, got '" + s + "'");
}

namespace {

void reject_unknown(const json& obj, const std::string& where,
                    const std::set<std::string>& known) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown key '" + where + it.key() + "'");
}

template <typename T>
void read(const json& obj, const std::string& where, const std::string& key,
          T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("invalid value for '" + where + key + "': " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (env.name != "catch" && env.name != "grid_collect" && env.name != "bandit" &&
      env.name != "chain")
    throw ConfigError("env.name must be catch|grid_collect|bandit|chain, got '" +
                      env.name + "'");
  if (noise.sigma2 < 0.0) throw ConfigError("noise.sigma2 must be >= 0");
  if (seeds.empty()) throw ConfigError("seeds must be non-empty");
  if (trainer.workers < 1) throw ConfigError("trainer.workers must be >= 1");
  if (trainer.rollout_k < 1) throw ConfigError("trainer.rollout_k must be >= 1");
  if (!(trainer.gamma > 0 && trainer.gamma <= 1))
    throw ConfigError("trainer.gamma must be in (0,1]");
  if (mode == RunMode::kBaseline && network.variance_branch_enabled)
    throw ConfigError(
        "mode=baseline conflicts with network.variance_branch_enabled=true; "
        "the baseline has no variance branch");
  resolved_network(mode == RunMode::kBoth ? RunMode::kVariance : mode).validate();
}

std::unique_ptr<Env> RunConfig::build_env(bool with_noise) const {
  NoiseSpec n = with_noise ? noise : NoiseSpec{};
  if (env.name == "catch")
    return std::make_unique<CatchEnv>(CatchConfig{env.width, env.height, n});
  if (env.name == "grid_collect")
    return std::make_unique<GridCollectEnv>(
        GridCollectConfig{env.width, env.height, env.pellets, env.step_limit, n});
  if (env.name == "bandit")
    return std::make_unique<FixedStateBandit>(BanditConfig{env.mu, n, env.width});
  if (env.name == "chain") {
    ChainMdpEnvConfig cfg;
    cfg.mdp = ChainMdp::two_state(trainer.gamma);
    cfg.noise = n;
    cfg.obs_size = env.width;
    cfg.step_limit = env.step_limit;
    return std::make_unique<ChainMdpEnv>(std::move(cfg));
  }
  throw ConfigError("unknown environment: " + env.name);
}

NetworkConfig RunConfig::resolved_network(RunMode cell_mode) const {
  if (cell_mode == RunMode::kBoth)
    throw ContractViolation("resolved_network needs a concrete mode");
  NetworkConfig n = network;
  auto probe = build_env(false);
  auto shape = probe->obs_shape();
  n.frames = shape[0];
  n.height = shape[1];
  n.width = shape[2];
  n.actions = std::max(2, probe->num_actions());
  if (cell_mode == RunMode::kBaseline) n.variance_branch_enabled = false;
  return n;
}

LossWeights RunConfig::resolved_loss(RunMode cell_mode) const {
  LossWeights w = loss;
  w.baseline_mode = cell_mode == RunMode::kBaseline;
  return w;
}

std::string RunConfig::canonical_json() const {
  json j;
  j["env"] = {{"name", env.name},       {"width", env.width},
              {"height", env.height},   {"pellets", env.pellets},
              {"step_limit", env.step_limit}, {"mu", env.mu}};
  j["noise"] = {{"sigma2", noise.sigma2},
                {"on_nonzero_only", noise.on_nonzero_only}};
  j["network"] = {{"fe_channels", {network.fe_ch1, network.fe_ch2}},
                  {"value_channels", {network.value_ch1, network.value_ch2}},
                  {"variance_channels", {network.variance_ch1, network.variance_ch2}},
                  {"policy_channels", network.policy_ch},
                  {"lstm_hidden", network.lstm_hidden},
                  {"kernel", network.kernel},
                  {"stride", network.stride},
                  {"variance_branch_enabled", network.variance_branch_enabled},
                  {"variance_detached", network.variance_detached},
                  {"batchnorm_enabled", network.batchnorm_enabled},
                  {"act_bn_train_mode", network.act_bn_train_mode},
                  {"log_var_min", network.log_var_min},
                  {"log_var_max", network.log_var_max}};
  j["trainer"] = {{"workers", trainer.workers},
                  {"rollout_k", trainer.rollout_k},
                  {"gamma", trainer.gamma},
                  {"total_steps", trainer.total_steps},
                  {"eval_period", trainer.eval_period},
                  {"eval_episodes", trainer.eval_episodes},
                  {"eval_greedy", trainer.eval_greedy}};
  j["optimizer"] = {{"learning_rate", optimizer.learning_rate},
                    {"decay", optimizer.decay},
                    {"epsilon", optimizer.epsilon},
                    {"max_grad_norm", optimizer.max_grad_norm}};
  j["loss"] = {{"value_weight", loss.value_weight},
               {"entropy_beta", loss.entropy_beta},
               {"nu_frozen", loss.nu_frozen}};
  j["mode"] = run_mode_name(mode);
  j["seeds"] = seeds;
  j["out_dir"] = out_dir;
  j["score_threshold"] = score_threshold;
  return j.dump();  // nlohmann keeps object keys sorted
}

uint64_t RunConfig::hash() const { return fnv1a_hash(canonical_json()); }

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": top level must be an object");

  RunConfig cfg;
  reject_unknown(j, "", {"env", "noise", "network", "trainer", "optimizer",
                         "loss", "mode", "seeds", "out_dir", "score_threshold"});

  if (!j.contains("env") || !j["env"].is_object() || !j["env"].contains("name"))
    throw ConfigError(origin + ": missing required key 'env.name'");
  const json& je = j["env"];
  reject_unknown(je, "env.", {"name", "width", "height", "pellets", "step_limit", "mu"});
  cfg.env.name = je.at("name").get<std::string>();
  read(je, "env.", "width", cfg.env.width);
  read(je, "env.", "height", cfg.env.height);
  read(je, "env.", "pellets", cfg.env.pellets);
  read(je, "env.", "step_limit", cfg.env.step_limit);
  read(je, "env.", "mu", cfg.env.mu);

  if (j.contains("noise")) {
    const json& jn = j["noise"];
    reject_unknown(jn, "noise.", {"sigma2", "on_nonzero_only"});
    read(jn, "noise.", "sigma2", cfg.noise.sigma2);
    read(jn, "noise.", "on_nonzero_only", cfg.noise.on_nonzero_only);
  }

  bool variance_flag_explicit = false;
  if (j.contains("network")) {
    const json& jm = j["network"];
    reject_unknown(jm, "network.",
                   {"fe_channels", "value_channels", "variance_channels",
                    "policy_channels", "lstm_hidden", "kernel", "stride",
                    "variance_branch_enabled", "variance_detached",
                    "batchnorm_enabled", "act_bn_train_mode", "log_var_min",
                    "log_var_max"});
    if (jm.contains("fe_channels")) {
      auto v = jm["fe_channels"].get<std::vector<int>>();
      if (v.size() != 2) throw ConfigError("network.fe_channels needs 2 entries");
      cfg.network.fe_ch1 = v[0];
      cfg.network.fe_ch2 = v[1];
    }
    if (jm.contains("value_channels")) {
      auto v = jm["value_channels"].get<std::vector<int>>();
      if (v.size() != 2) throw ConfigError("network.value_channels needs 2 entries");
      cfg.network.value_ch1 = v[0];
      cfg.network.value_ch2 = v[1];
    }
    if (jm.contains("variance_channels")) {
      auto v = jm["variance_channels"].get<std::vector<int>>();
      if (v.size() != 2)
        throw ConfigError("network.variance_channels needs 2 entries");
      cfg.network.variance_ch1 = v[0];
      cfg.network.variance_ch2 = v[1];
    }
    read(jm, "network.", "policy_channels", cfg.network.policy_ch);
    read(jm, "network.", "lstm_hidden", cfg.network.lstm_hidden);
    read(jm, "network.", "kernel", cfg.network.kernel);
    read(jm, "network.", "stride", cfg.network.stride);
    if (jm.contains("variance_branch_enabled")) {
      variance_flag_explicit = true;
      read(jm, "network.", "variance_branch_enabled",
           cfg.network.variance_branch_enabled);
    }
    read(jm, "network.", "variance_detached", cfg.network.variance_detached);
    read(jm, "network.", "batchnorm_enabled", cfg.network.batchnorm_enabled);
    read(jm, "network.", "act_bn_train_mode", cfg.network.act_bn_train_mode);
    read(jm, "network.", "log_var_min", cfg.network.log_var_min);
    read(jm, "network.", "log_var_max", cfg.network.log_var_max);
  }

  if (j.contains("trainer")) {
    const json& jt = j["trainer"];
    reject_unknown(jt, "trainer.",
                   {"workers", "rollout_k", "gamma", "total_steps",
                    "eval_period", "eval_episodes", "eval_greedy"});
    read(jt, "trainer.", "workers", cfg.trainer.workers);
    read(jt, "trainer.", "rollout_k", cfg.trainer.rollout_k);
    read(jt, "trainer.", "gamma", cfg.trainer.gamma);
    read(jt, "trainer.", "total_steps", cfg.trainer.total_steps);
    read(jt, "trainer.", "eval_period", cfg.trainer.eval_period);
    read(jt, "trainer.", "eval_episodes", cfg.trainer.eval_episodes);
    read(jt, "trainer.", "eval_greedy", cfg.trainer.eval_greedy);
  }

  if (j.contains("optimizer")) {
    const json& jo = j["optimizer"];
    reject_unknown(jo, "optimizer.",
                   {"learning_rate", "decay", "epsilon", "max_grad_norm"});
    read(jo, "optimizer.", "learning_rate", cfg.optimizer.learning_rate);
    read(jo, "optimizer.", "decay", cfg.optimizer.decay);
    read(jo, "optimizer.", "epsilon", cfg.optimizer.epsilon);
    read(jo, "optimizer.", "max_grad_norm", cfg.optimizer.max_grad_norm);
  }

  if (j.contains("loss")) {
    const json& jl = j["loss"];
    reject_unknown(jl, "loss.", {"value_weight", "entropy_beta", "nu_frozen"});
    read(jl, "loss.", "value_weight", cfg.loss.value_weight);
    read(jl, "loss.", "entropy_beta", cfg.loss.entropy_beta);
    read(jl, "loss.", "nu_frozen", cfg.loss.nu_frozen);
  }

  if (j.contains("mode")) cfg.mode = parse_run_mode(j["mode"].get<std::string>());
  if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<uint64_t>>();
  read(j, "", "out_dir", cfg.out_dir);
  read(j, "", "score_threshold", cfg.score_threshold);

  // A baseline cell has no variance branch; only an explicit contrary
  // request is an error.
  if (cfg.mode == RunMode::kBaseline) {
    if (variance_flag_explicit && cfg.network.variance_branch_enabled)
      throw ConfigError(
          "mode=baseline conflicts with network.variance_branch_enabled=true");
    cfg.network.variance_branch_enabled = false;
  }

  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace rlab
