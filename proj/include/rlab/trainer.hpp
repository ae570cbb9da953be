#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rlab/envs.hpp"
#include "rlab/losses.hpp"
#include "rlab/model.hpp"
#include "rlab/optimizer.hpp"

namespace rlab {

struct TrainerConfig {
  int workers = 8;
  int rollout_k = 5;
  real gamma = 0.99;
  long total_steps = 100000;  // cumulative env steps across workers
  long eval_period = 0;       // env steps between evals (0 disables)
  int eval_episodes = 10;
  bool eval_greedy = true;
  uint64_t seed = 1;

  void validate() const {
    if (workers < 1 || rollout_k < 1 || !(gamma > 0 && gamma <= 1) ||
        total_steps < 0)
      throw ContractViolation("trainer: invalid config");
  }
};

struct UpdateRow {
  long global_step = 0;
  int worker_id = 0;
  std::optional<real> episode_return;  // set on rollouts that end an episode
  std::optional<long> episode_length;
  real policy_loss = 0, value_nll_loss = 0, entropy = 0, mean_nu = 0,
       grad_norm = 0;
};

struct EvalRow {
  long global_step = 0;
  real mean_return = 0;
  int episodes = 0;
};

// Many producers (workers), single consumer (CSV writer after the join).
class MetricsSink {
 public:
  void log_update(const UpdateRow& row);
  void log_eval(const EvalRow& row);
  std::vector<UpdateRow> updates() const;
  std::vector<EvalRow> evals() const;
  // Exact column order: global_step, worker_id, episode_return,
  // episode_length, policy_loss, value_nll_loss, entropy, mean_nu, grad_norm
  std::string metrics_csv() const;
  std::string eval_csv() const;

 private:
  mutable std::mutex m_;
  std::vector<UpdateRow> updates_;
  std::vector<EvalRow> evals_;
};

using EnvFactory = std::function<std::unique_ptr<Env>(int worker_id)>;

struct TrainResult {
  std::shared_ptr<GlobalParams> global;
  std::shared_ptr<AbnNet> model;  // worker 0's model, synced to final params
  uint64_t skipped_updates = 0;
};

// Mean true-reward return over fresh episodes; parameters and optimizer
// state are not touched.
std::vector<real> evaluate(AbnNet& net, Env& env, int episodes, bool greedy,
                           uint64_t seed);

// Called by worker 0 when an eval boundary is crossed.
using EvalHook = std::function<void(long global_step, uint64_t eval_index)>;

// One worker's loop: snapshot, roll out up to k steps, backprop the
// composite loss, clip, apply to the shared store.  Runs until the global
// step budget is exhausted.
void run_worker(int worker_id, GlobalParams& global, AbnNet& net, Env& env,
                const TrainerConfig& tcfg, const LossWeights& weights,
                MetricsSink& sink, std::atomic<uint64_t>& skipped,
                const EvalHook& eval_hook = {});

TrainResult train(const NetworkConfig& ncfg, const TrainerConfig& tcfg,
                  const LossWeights& weights, const EnvFactory& make_worker_env,
                  const EnvFactory& make_eval_env, MetricsSink& sink,
                  const RmspropConfig& opt = {});

// Versioned binary dump of all parameter tensors plus BN running-stat
// buffers; loading validates shapes and the stored config hash.
void save_checkpoint(const std::string& path, AbnNet& net, uint64_t config_hash);
uint64_t load_checkpoint(const std::string& path, AbnNet& net);

}  // namespace rlab
