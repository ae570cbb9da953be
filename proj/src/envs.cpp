#include "rlab/envs.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rlab {

real noisy_reward(real r_true, const NoiseSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  if (spec.sigma2 == 0.0) return r_true;
  if (spec.on_nonzero_only && r_true == 0.0) return r_true;
  std::normal_distribution<real> xi(0.0, std::sqrt(spec.sigma2));
  return r_true + xi(rng);
}

namespace {

Tensor stack_frames(const std::deque<std::vector<real>>& frames, int h, int w) {
  std::vector<real> data;
  data.reserve(frames.size() * static_cast<size_t>(h) * w);
  for (const auto& f : frames) data.insert(data.end(), f.begin(), f.end());
  return Tensor::from_values({static_cast<int>(frames.size()), h, w},
                             std::move(data));
}

void push_frame(std::deque<std::vector<real>>& frames, std::vector<real> f) {
  frames.push_back(std::move(f));
  while (frames.size() > 4) frames.pop_front();
}

}  // namespace

// --- catch -----------------------------------------------------------------

CatchEnv::CatchEnv(CatchConfig cfg) : cfg_(cfg) {
  if (cfg_.width < 5 || cfg_.height < 5)
    throw ContractViolation("catch: grid size must be >= 5");
  cfg_.noise.validate();
}

std::array<int, 3> CatchEnv::obs_shape() const {
  return {4, cfg_.height, cfg_.width};
}

Tensor CatchEnv::render_stack() {
  std::vector<real> f(static_cast<size_t>(cfg_.height) * cfg_.width, 0.0);
  f[static_cast<size_t>(ball_row_) * cfg_.width + ball_col_] = 1.0;
  f[static_cast<size_t>(cfg_.height - 1) * cfg_.width + paddle_col_] = 0.5;
  push_frame(frames_, std::move(f));
  return stack_frames(frames_, cfg_.height, cfg_.width);
}

Tensor CatchEnv::reset() {
  ball_row_ = 0;
  ball_col_ = static_cast<int>(rng_() % static_cast<uint64_t>(cfg_.width));
  paddle_col_ = cfg_.width / 2;
  true_reward_ = 0.0;
  frames_.clear();
  std::vector<real> f(static_cast<size_t>(cfg_.height) * cfg_.width, 0.0);
  f[static_cast<size_t>(ball_row_) * cfg_.width + ball_col_] = 1.0;
  f[static_cast<size_t>(cfg_.height - 1) * cfg_.width + paddle_col_] = 0.5;
  for (int i = 0; i < 4; ++i) frames_.push_back(f);
  return stack_frames(frames_, cfg_.height, cfg_.width);
}

EnvStep CatchEnv::step(int action) {
  if (action < 0 || action > 2) throw ContractViolation("catch: bad action");
  paddle_col_ = std::clamp(paddle_col_ + (action - 1), 0, cfg_.width - 1);
  ball_row_ += 1;
  EnvStep out;
  out.terminal = ball_row_ >= cfg_.height - 1;
  true_reward_ = (out.terminal && ball_col_ == paddle_col_) ? 1.0 : 0.0;
  out.reward = noisy_reward(true_reward_, cfg_.noise, rng_);
  out.obs = render_stack();
  return out;
}

// --- grid collect ----------------------------------------------------------

GridCollectEnv::GridCollectEnv(GridCollectConfig cfg) : cfg_(cfg) {
  if (cfg_.width < 6 || cfg_.height < 6)
    throw ContractViolation("grid_collect: grid must be >= 6x6");
  if (cfg_.step_limit < 1) throw ContractViolation("grid_collect: bad step limit");
  cfg_.noise.validate();
}

std::array<int, 3> GridCollectEnv::obs_shape() const {
  return {4, cfg_.height, cfg_.width};
}

Tensor GridCollectEnv::render_stack() {
  std::vector<real> f(static_cast<size_t>(cfg_.height) * cfg_.width, 0.0);
  for (auto [r, c] : pellets_) f[static_cast<size_t>(r) * cfg_.width + c] = 0.4;
  f[static_cast<size_t>(goal_r_) * cfg_.width + goal_c_] = 0.7;
  f[static_cast<size_t>(agent_r_) * cfg_.width + agent_c_] = 1.0;
  push_frame(frames_, std::move(f));
  return stack_frames(frames_, cfg_.height, cfg_.width);
}

Tensor GridCollectEnv::reset() {
  auto cell = [&]() {
    int r = static_cast<int>(rng_() % static_cast<uint64_t>(cfg_.height));
    int c = static_cast<int>(rng_() % static_cast<uint64_t>(cfg_.width));
    return std::pair<int, int>{r, c};
  };
  std::tie(agent_r_, agent_c_) = cell();
  do {
    std::tie(goal_r_, goal_c_) = cell();
  } while (goal_r_ == agent_r_ && goal_c_ == agent_c_);
  pellets_.clear();
  while (static_cast<int>(pellets_.size()) < cfg_.pellets) {
    auto p = cell();
    bool clash = (p.first == agent_r_ && p.second == agent_c_) ||
                 (p.first == goal_r_ && p.second == goal_c_) ||
                 std::find(pellets_.begin(), pellets_.end(), p) != pellets_.end();
    if (!clash) pellets_.push_back(p);
  }
  steps_taken_ = 0;
  true_reward_ = 0.0;
  frames_.clear();
  std::vector<real> f(static_cast<size_t>(cfg_.height) * cfg_.width, 0.0);
  for (auto [r, c] : pellets_) f[static_cast<size_t>(r) * cfg_.width + c] = 0.4;
  f[static_cast<size_t>(goal_r_) * cfg_.width + goal_c_] = 0.7;
  f[static_cast<size_t>(agent_r_) * cfg_.width + agent_c_] = 1.0;
  for (int i = 0; i < 4; ++i) frames_.push_back(f);
  return stack_frames(frames_, cfg_.height, cfg_.width);
}

EnvStep GridCollectEnv::step(int action) {
  if (action < 0 || action > 3) throw ContractViolation("grid_collect: bad action");
  static constexpr int dr[4] = {-1, 1, 0, 0};
  static constexpr int dc[4] = {0, 0, -1, 1};
  agent_r_ = std::clamp(agent_r_ + dr[action], 0, cfg_.height - 1);
  agent_c_ = std::clamp(agent_c_ + dc[action], 0, cfg_.width - 1);
  steps_taken_ += 1;

  true_reward_ = 0.0;
  auto it = std::find(pellets_.begin(), pellets_.end(),
                      std::pair<int, int>{agent_r_, agent_c_});
  if (it != pellets_.end()) {
    true_reward_ += 0.1;
    pellets_.erase(it);
  }
  EnvStep out;
  if (agent_r_ == goal_r_ && agent_c_ == goal_c_) {
    true_reward_ += 1.0;
    out.terminal = true;
  }
  if (steps_taken_ >= cfg_.step_limit) out.terminal = true;
  out.reward = noisy_reward(true_reward_, cfg_.noise, rng_);
  out.obs = render_stack();
  return out;
}

// --- fixed-state bandit ----------------------------------------------------

FixedStateBandit::FixedStateBandit(BanditConfig cfg) : cfg_(cfg) {
  if (cfg_.obs_size < 3) throw ContractViolation("bandit: obs too small");
  cfg_.noise.validate();
}

std::array<int, 3> FixedStateBandit::obs_shape() const {
  return {4, cfg_.obs_size, cfg_.obs_size};
}

Tensor FixedStateBandit::reset() {
  true_reward_ = 0.0;
  // fixed non-constant pattern so BN statistics are well conditioned
  std::vector<real> f(static_cast<size_t>(cfg_.obs_size) * cfg_.obs_size, 0.0);
  for (int i = 0; i < cfg_.obs_size; ++i)
    f[static_cast<size_t>(i) * cfg_.obs_size + i] = 1.0;
  std::deque<std::vector<real>> frames(4, f);
  return stack_frames(frames, cfg_.obs_size, cfg_.obs_size);
}

EnvStep FixedStateBandit::step(int action) {
  if (action < 0 || action >= num_actions())
    throw ContractViolation("bandit: bad action");
  EnvStep out;
  out.terminal = true;
  out.obs = reset();  // clears the telemetry, so set it afterwards
  true_reward_ = cfg_.mu;
  out.reward = noisy_reward(true_reward_, cfg_.noise, rng_);
  return out;
}

// --- chain mdp -------------------------------------------------------------

void ChainMdp::validate() const {
  if (n_states < 1 || n_actions < 1)
    throw ContractViolation("chain_mdp: empty state/action space");
  if (static_cast<int>(transition.size()) != n_states ||
      static_cast<int>(mean_reward.size()) != n_states ||
      static_cast<int>(terminal.size()) != n_states)
    throw ContractViolation("chain_mdp: table sizes disagree");
  for (int s = 0; s < n_states; ++s) {
    if (static_cast<int>(transition[s].size()) != n_actions ||
        static_cast<int>(mean_reward[s].size()) != n_actions)
      throw ContractViolation("chain_mdp: row sizes disagree");
    for (int a = 0; a < n_actions; ++a) {
      real sum = 0.0;
      for (real p : transition[s][a]) {
        if (p < 0.0) throw ContractViolation("chain_mdp: negative probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw ContractViolation("chain_mdp: transition row does not sum to 1");
    }
  }
}

ChainMdp ChainMdp::two_state(real gamma) {
  ChainMdp m;
  m.n_states = 2;
  m.n_actions = 2;
  m.gamma = gamma;
  m.transition = {{{0.0, 1.0}, {0.0, 1.0}}, {{0.0, 1.0}, {0.0, 1.0}}};
  m.mean_reward = {{1.0, 1.0}, {0.0, 0.0}};
  m.terminal = {false, true};
  return m;
}

ValueIterationResult value_iteration_oracle(const ChainMdp& mdp, real tol) {
  mdp.validate();
  if (!(tol > 0)) throw ContractViolation("value_iteration: tol must be > 0");
  ValueIterationResult res;
  res.values.assign(static_cast<size_t>(mdp.n_states), 0.0);
  res.greedy_policy.assign(static_cast<size_t>(mdp.n_states), 0);
  for (int sweep = 0; sweep < 1000000; ++sweep) {
    real delta = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      if (mdp.terminal[s]) continue;
      real best = -1e300;
      int best_a = 0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        real q = mdp.mean_reward[s][a];
        for (int s2 = 0; s2 < mdp.n_states; ++s2)
          if (!mdp.terminal[s2]) q += mdp.gamma * mdp.transition[s][a][s2] * res.values[s2];
        if (q > best) {
          best = q;
          best_a = a;
        }
      }
      delta = std::max(delta, std::abs(best - res.values[s]));
      res.values[s] = best;
      res.greedy_policy[s] = best_a;
    }
    res.sweeps = sweep + 1;
    if (delta < tol) return res;
  }
  throw ContractViolation("value_iteration: failed to converge");
}

ChainMdpEnv::ChainMdpEnv(ChainMdpEnvConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.mdp.validate();
  cfg_.noise.validate();
  if (cfg_.mdp.n_states > cfg_.obs_size)
    throw ContractViolation("chain_mdp_env: more states than obs rows");
}

int ChainMdpEnv::num_actions() const { return std::max(2, cfg_.mdp.n_actions); }

std::array<int, 3> ChainMdpEnv::obs_shape() const {
  return {4, cfg_.obs_size, cfg_.obs_size};
}

Tensor ChainMdpEnv::render_stack() {
  std::vector<real> f(static_cast<size_t>(cfg_.obs_size) * cfg_.obs_size, 0.0);
  for (int c = 0; c < cfg_.obs_size; ++c)
    f[static_cast<size_t>(state_) * cfg_.obs_size + c] = 1.0;
  std::deque<std::vector<real>> frames(4, f);
  return stack_frames(frames, cfg_.obs_size, cfg_.obs_size);
}

Tensor ChainMdpEnv::reset() {
  state_ = 0;
  steps_taken_ = 0;
  true_reward_ = 0.0;
  return render_stack();
}

EnvStep ChainMdpEnv::step(int action) {
  int a = std::min(action, cfg_.mdp.n_actions - 1);
  if (action < 0 || action >= num_actions())
    throw ContractViolation("chain_mdp_env: bad action");
  true_reward_ = cfg_.mdp.mean_reward[state_][a];
  real u = std::uniform_real_distribution<real>(0.0, 1.0)(rng_);
  int next = cfg_.mdp.n_states - 1;
  real cum = 0.0;
  for (int s2 = 0; s2 < cfg_.mdp.n_states; ++s2) {
    cum += cfg_.mdp.transition[state_][a][s2];
    if (u <= cum) {
      next = s2;
      break;
    }
  }
  state_ = next;
  steps_taken_ += 1;
  EnvStep out;
  out.terminal = cfg_.mdp.terminal[state_] || steps_taken_ >= cfg_.step_limit;
  out.reward = noisy_reward(true_reward_, cfg_.noise, rng_);
  out.obs = render_stack();
  return out;
}

// --- factory / trace -------------------------------------------------------

std::unique_ptr<Env> make_env(const std::string& name, int width, int height,
                              const NoiseSpec& noise) {
  if (name == "catch") return std::make_unique<CatchEnv>(CatchConfig{width, height, noise});
  if (name == "grid_collect")
    return std::make_unique<GridCollectEnv>(GridCollectConfig{width, height, 3, 40, noise});
  if (name == "bandit")
    return std::make_unique<FixedStateBandit>(BanditConfig{0.5, noise, width});
  if (name == "chain") {
    ChainMdpEnvConfig cfg;
    cfg.mdp = ChainMdp::two_state();
    cfg.noise = noise;
    cfg.obs_size = width;
    return std::make_unique<ChainMdpEnv>(std::move(cfg));
  }
  throw ContractViolation("unknown environment: " + name);
}

std::string episode_trace_csv(Env& env, const std::vector<int>& actions) {
  std::ostringstream os;
  os << "step,action,reward,true_reward,terminal\n";
  env.reset();
  int t = 0;
  for (int a : actions) {
    EnvStep s = env.step(a);
    os << t++ << ',' << a << ',' << s.reward << ',' << env.last_true_reward()
       << ',' << (s.terminal ? 1 : 0) << '\n';
    if (s.terminal) break;
  }
  return os.str();
}

}  // namespace rlab
