#include "rlab/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

namespace rlab {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Tensor stack_obs(const std::vector<Tensor>& obs_list) {
  const auto& s = obs_list[0].shape();
  std::vector<real> data;
  data.reserve(obs_list.size() * obs_list[0].numel());
  for (const auto& o : obs_list)
    data.insert(data.end(), o.data().begin(), o.data().end());
  return Tensor::from_values({static_cast<int>(obs_list.size()), s[0], s[1], s[2]},
                             std::move(data));
}

int sample_action(const std::vector<real>& probs, std::mt19937_64& rng) {
  real u = std::uniform_real_distribution<real>(0.0, 1.0)(rng);
  real cum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u <= cum) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

int greedy_action(const std::vector<real>& probs) {
  int best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = static_cast<int>(i);
  return best;
}

std::vector<real> policy_probs(AbnNet& net, const Tensor& obs,
                               LstmState& state, BnMode mode) {
  const auto& s = obs.shape();
  Tensor batch = reshape(obs.detached(), {1, s[0], s[1], s[2]});
  NetworkOutputs out = net.forward(batch, state, mode);
  state = {out.lstm_state.h.detached(), out.lstm_state.c.detached()};
  Tensor pi = softmax(out.policy_logits);
  return pi.data();
}

real bootstrap_value(AbnNet& net, const Tensor& obs) {
  const auto& s = obs.shape();
  Tensor batch = reshape(obs.detached(), {1, s[0], s[1], s[2]});
  Tensor g = net.feature_extract(batch, BnMode::kEval);
  auto [f, v] = net.value_branch(g, BnMode::kEval);
  return v.data()[0];
}

}  // namespace

void MetricsSink::log_update(const UpdateRow& row) {
  std::lock_guard<std::mutex> lock(m_);
  updates_.push_back(row);
}

void MetricsSink::log_eval(const EvalRow& row) {
  std::lock_guard<std::mutex> lock(m_);
  evals_.push_back(row);
}

std::vector<UpdateRow> MetricsSink::updates() const {
  std::lock_guard<std::mutex> lock(m_);
  return updates_;
}

std::vector<EvalRow> MetricsSink::evals() const {
  std::lock_guard<std::mutex> lock(m_);
  return evals_;
}

namespace {
void fmt_real(std::ostream& os, real v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}
}  // namespace

std::string MetricsSink::metrics_csv() const {
  std::ostringstream os;
  os << "global_step,worker_id,episode_return,episode_length,policy_loss,"
        "value_nll_loss,entropy,mean_nu,grad_norm\n";
  for (const auto& r : updates()) {
    os << r.global_step << ',' << r.worker_id << ',';
    if (r.episode_return) fmt_real(os, *r.episode_return);
    os << ',';
    if (r.episode_length) os << *r.episode_length;
    os << ',';
    fmt_real(os, r.policy_loss);
    os << ',';
    fmt_real(os, r.value_nll_loss);
    os << ',';
    fmt_real(os, r.entropy);
    os << ',';
    fmt_real(os, r.mean_nu);
    os << ',';
    fmt_real(os, r.grad_norm);
    os << '\n';
  }
  return os.str();
}

std::string MetricsSink::eval_csv() const {
  std::ostringstream os;
  os << "global_step,mean_return,episodes\n";
  for (const auto& r : evals()) {
    os << r.global_step << ',';
    fmt_real(os, r.mean_return);
    os << ',' << r.episodes << '\n';
  }
  return os.str();
}

std::vector<real> evaluate(AbnNet& net, Env& env, int episodes, bool greedy,
                           uint64_t seed) {
  if (episodes < 1) throw ContractViolation("evaluate: episodes must be >= 1");
  std::mt19937_64 rng(splitmix64(seed));
  std::vector<real> returns;
  returns.reserve(static_cast<size_t>(episodes));
  for (int ep = 0; ep < episodes; ++ep) {
    env.seed(splitmix64(seed ^ static_cast<uint64_t>(ep + 1)));
    Tensor obs = env.reset();
    LstmState state = net.zero_state();
    real ret = 0.0;
    for (;;) {
      auto probs = policy_probs(net, obs, state, BnMode::kEval);
      int a = greedy ? greedy_action(probs) : sample_action(probs, rng);
      EnvStep s = env.step(a);
      ret += env.last_true_reward();
      obs = s.obs;
      if (s.terminal) break;
    }
    returns.push_back(ret);
  }
  return returns;
}

void run_worker(int worker_id, GlobalParams& global, AbnNet& net, Env& env,
                const TrainerConfig& tcfg, const LossWeights& weights,
                MetricsSink& sink, std::atomic<uint64_t>& skipped,
                const EvalHook& eval_hook) {
  tcfg.validate();
  std::mt19937_64 action_rng(
      splitmix64(tcfg.seed ^ (0xabcdull + static_cast<uint64_t>(worker_id))));
  const BnMode act_mode =
      net.config().act_bn_train_mode ? BnMode::kTrain : BnMode::kEval;

  Tensor obs = env.reset();
  LstmState carried = net.zero_state();
  real ep_return = 0.0;
  long ep_len = 0;
  long next_eval = tcfg.eval_period > 0 ? tcfg.eval_period : -1;
  uint64_t eval_index = 0;

  while (static_cast<long>(global.global_step.load()) < tcfg.total_steps) {
    global.snapshot_into(net.params());

    std::vector<Tensor> obs_list;
    std::vector<int> actions;
    std::vector<real> rewards;
    bool terminal = false;
    LstmState act_state = {carried.h.detached(), carried.c.detached()};
    for (int t = 0; t < tcfg.rollout_k; ++t) {
      obs_list.push_back(obs);
      auto probs = policy_probs(net, obs, act_state, act_mode);
      int a = sample_action(probs, action_rng);
      EnvStep s = env.step(a);
      actions.push_back(a);
      rewards.push_back(s.reward);
      ep_return += s.reward;
      ep_len += 1;
      obs = s.obs;
      if (s.terminal) {
        terminal = true;
        break;
      }
    }

    Trajectory traj;
    traj.actions = actions;
    traj.rewards = rewards;
    traj.terminal = terminal;
    traj.bootstrap_value = terminal ? 0.0 : bootstrap_value(net, obs);

    net.params().zero_grads();
    NetworkOutputs out = net.forward(stack_obs(obs_list), carried, BnMode::kTrain);
    traj.values = out.values.data();

    UpdateRow row;
    row.worker_id = worker_id;
    bool ok = true;
    try {
      LossBreakdown bd = total_loss(out, traj, tcfg.gamma, weights);
      if (!all_finite(bd.total)) throw ContractViolation("non-finite loss");
      backward(bd.total);
      std::vector<std::vector<real>*> grads;
      for (const auto& [n, t] : net.params().entries())
        grads.push_back(&Tensor(t).grad());
      row.grad_norm = global.optimizer().max_grad_norm > 0
                          ? clip_gradients(grads, global.optimizer().max_grad_norm)
                          : 0.0;
      ok = global.apply_gradients(net.params());
      row.policy_loss = bd.policy_loss.value();
      row.value_nll_loss = bd.value_nll_loss.value();
      row.entropy = bd.entropy_bonus.value();
      real nu_sum = 0.0;
      for (real v : out.nus.data()) nu_sum += v;
      row.mean_nu = weights.nu_frozen || weights.baseline_mode
                        ? 1.0
                        : nu_sum / static_cast<real>(out.nus.numel());
    } catch (const ContractViolation&) {
      ok = false;  // skip the update, re-snapshot next iteration
    }
    if (!ok) skipped.fetch_add(1);

    long step_now = static_cast<long>(
        global.global_step.fetch_add(rewards.size()) + rewards.size());
    row.global_step = step_now;

    if (terminal) {
      row.episode_return = ep_return;
      row.episode_length = ep_len;
      ep_return = 0.0;
      ep_len = 0;
      obs = env.reset();
      carried = net.zero_state();
    } else {
      carried = {out.lstm_state.h.detached(), out.lstm_state.c.detached()};
    }
    sink.log_update(row);

    if (worker_id == 0 && next_eval > 0 && step_now >= next_eval && eval_hook) {
      while (next_eval <= step_now) next_eval += tcfg.eval_period;
      eval_hook(step_now, eval_index++);
    }
  }
}

TrainResult train(const NetworkConfig& ncfg, const TrainerConfig& tcfg,
                  const LossWeights& weights, const EnvFactory& make_worker_env,
                  const EnvFactory& make_eval_env, MetricsSink& sink,
                  const RmspropConfig& opt) {
  tcfg.validate();
  TrainResult res;

  std::vector<std::shared_ptr<AbnNet>> nets;
  std::vector<std::unique_ptr<Env>> envs;
  for (int w = 0; w < tcfg.workers; ++w) {
    nets.push_back(std::make_shared<AbnNet>(ncfg, tcfg.seed));
    auto env = make_worker_env(w);
    env->seed(splitmix64(tcfg.seed ^ (0x515u + static_cast<uint64_t>(w))));
    envs.push_back(std::move(env));
  }
  res.model = nets[0];
  res.global = std::make_shared<GlobalParams>(nets[0]->params(), opt);
  GlobalParams& global = *res.global;

  std::atomic<uint64_t> skipped{0};
  EvalHook eval_hook;
  if (tcfg.eval_period > 0 && make_eval_env) {
    eval_hook = [&](long step, uint64_t idx) {
      auto eval_env = make_eval_env(0);
      auto rets = evaluate(*nets[0], *eval_env, tcfg.eval_episodes,
                           tcfg.eval_greedy, splitmix64(tcfg.seed ^ (idx + 7)));
      real mean = 0.0;
      for (real r : rets) mean += r;
      mean /= static_cast<real>(rets.size());
      sink.log_eval({step, mean, static_cast<int>(rets.size())});
    };
  }

  if (tcfg.workers == 1) {
    run_worker(0, global, *nets[0], *envs[0], tcfg, weights, sink, skipped,
               eval_hook);
  } else {
    std::vector<std::thread> threads;
    std::mutex err_m;
    std::string first_error;
    for (int w = 0; w < tcfg.workers; ++w) {
      threads.emplace_back([&, w]() {
        try {
          run_worker(w, global, *nets[w], *envs[w], tcfg, weights, sink,
                     skipped, w == 0 ? eval_hook : EvalHook{});
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(err_m);
          if (first_error.empty()) first_error = e.what();
          // let the budget drain so the other workers can finish
          global.global_step.store(
              static_cast<uint64_t>(std::max<long>(tcfg.total_steps, 0)));
        }
      });
    }
    for (auto& t : threads) t.join();
    if (!first_error.empty())
      throw std::runtime_error("worker failed: " + first_error);
  }

  // leave worker 0's model synced with the final shared parameters
  global.snapshot_into(nets[0]->params());
  res.skipped_updates = skipped.load();
  return res;
}

void save_checkpoint(const std::string& path, AbnNet& net, uint64_t config_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractViolation("checkpoint: cannot open " + path);
  const char magic[8] = {'R', 'L', 'A', 'B', 'C', 'K', 'P', '1'};
  os.write(magic, 8);
  os.write(reinterpret_cast<const char*>(&config_hash), 8);
  uint32_t count = static_cast<uint32_t>(net.params().entries().size());
  os.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& [name, t] : net.params().entries()) {
    uint32_t nlen = static_cast<uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&nlen), 4);
    os.write(name.data(), nlen);
    uint32_t nd = static_cast<uint32_t>(t.ndim());
    os.write(reinterpret_cast<const char*>(&nd), 4);
    for (int d : t.shape()) {
      uint32_t e = static_cast<uint32_t>(d);
      os.write(reinterpret_cast<const char*>(&e), 4);
    }
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(real)));
  }
  auto bufs = net.bn_buffers();
  uint32_t nbuf = static_cast<uint32_t>(bufs.size());
  os.write(reinterpret_cast<const char*>(&nbuf), 4);
  for (const auto* b : bufs) {
    uint32_t n = static_cast<uint32_t>(b->size());
    os.write(reinterpret_cast<const char*>(&n), 4);
    os.write(reinterpret_cast<const char*>(b->data()),
             static_cast<std::streamsize>(b->size() * sizeof(real)));
  }
  if (!os) throw ContractViolation("checkpoint: write failed for " + path);
}

uint64_t load_checkpoint(const std::string& path, AbnNet& net) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractViolation("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (std::memcmp(magic, "RLABCKP1", 8) != 0)
    throw ContractViolation("checkpoint: bad magic in " + path);
  uint64_t config_hash = 0;
  is.read(reinterpret_cast<char*>(&config_hash), 8);
  uint32_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 4);
  if (count != net.params().entries().size())
    throw ContractViolation("checkpoint: tensor count mismatch");
  for (const auto& [name, t] : net.params().entries()) {
    uint32_t nlen = 0;
    is.read(reinterpret_cast<char*>(&nlen), 4);
    std::string fname(nlen, '\0');
    is.read(fname.data(), nlen);
    uint32_t nd = 0;
    is.read(reinterpret_cast<char*>(&nd), 4);
    std::vector<int> shape(nd);
    for (auto& d : shape) {
      uint32_t e = 0;
      is.read(reinterpret_cast<char*>(&e), 4);
      d = static_cast<int>(e);
    }
    if (fname != name || shape != t.shape())
      throw ContractViolation("checkpoint: tensor mismatch at " + fname);
    Tensor tt = t;
    is.read(reinterpret_cast<char*>(tt.data().data()),
            static_cast<std::streamsize>(tt.numel() * sizeof(real)));
  }
  auto bufs = net.bn_buffers();
  uint32_t nbuf = 0;
  is.read(reinterpret_cast<char*>(&nbuf), 4);
  if (nbuf != bufs.size())
    throw ContractViolation("checkpoint: BN buffer count mismatch");
  for (auto* b : bufs) {
    uint32_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 4);
    if (n != b->size()) throw ContractViolation("checkpoint: BN buffer size mismatch");
    is.read(reinterpret_cast<char*>(b->data()),
            static_cast<std::streamsize>(b->size() * sizeof(real)));
  }
  if (!is) throw ContractViolation("checkpoint: truncated file " + path);
  return config_hash;
}

}  // namespace rlab
