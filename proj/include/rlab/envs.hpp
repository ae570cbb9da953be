#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rlab/tensor.hpp"

namespace rlab {

struct NoiseSpec {
  real sigma2 = 0.0;  // presets: 0.0, 0.03, 0.05
  bool on_nonzero_only = false;
  void validate() const {
    if (sigma2 < 0.0) throw ContractViolation("noise: sigma2 must be >= 0");
  }
};

// r_true + xi, xi ~ N(0, sigma2), drawn from the caller's stream.
// sigma2 = 0 is the exact identity.
real noisy_reward(real r_true, const NoiseSpec& spec, std::mt19937_64& rng);

struct EnvStep {
  Tensor obs;  // [frames, h, w], values in [0,1]
  real reward = 0.0;  // post-noise; the training-facing signal
  bool terminal = false;
};

// Episodic environment with 4-frame stacked image observations.  One
// instance per worker; the instance owns its random stream.
class Env {
 public:
  virtual ~Env() = default;
  virtual int num_actions() const = 0;
  virtual std::array<int, 3> obs_shape() const = 0;  // {frames, h, w}
  virtual void seed(uint64_t s) = 0;
  virtual Tensor reset() = 0;
  virtual EnvStep step(int action) = 0;
  // telemetry only; never read by the training loop
  virtual real last_true_reward() const = 0;
};

struct CatchConfig {
  int width = 10;
  int height = 10;
  NoiseSpec noise;
};

// Ball falls one row per step from a random column; paddle moves
// left/stay/right along the bottom row.  +1 on catch, 0 on miss; the
// episode lasts one ball drop.
class CatchEnv : public Env {
 public:
  explicit CatchEnv(CatchConfig cfg);
  int num_actions() const override { return 3; }
  std::array<int, 3> obs_shape() const override;
  void seed(uint64_t s) override { rng_.seed(s); }
  Tensor reset() override;
  EnvStep step(int action) override;
  real last_true_reward() const override { return true_reward_; }

 private:
  Tensor render_stack();
  CatchConfig cfg_;
  std::mt19937_64 rng_{0};
  int ball_row_ = 0, ball_col_ = 0, paddle_col_ = 0;
  real true_reward_ = 0.0;
  std::deque<std::vector<real>> frames_;
};

struct GridCollectConfig {
  int width = 6;
  int height = 6;
  int pellets = 3;
  int step_limit = 40;
  NoiseSpec noise;
};

// Agent moves in 4 directions collecting pellets (+0.1) and a terminal
// goal (+1); the step limit terminates with bootstrap 0.
class GridCollectEnv : public Env {
 public:
  explicit GridCollectEnv(GridCollectConfig cfg);
  int num_actions() const override { return 4; }
  std::array<int, 3> obs_shape() const override;
  void seed(uint64_t s) override { rng_.seed(s); }
  Tensor reset() override;
  EnvStep step(int action) override;
  real last_true_reward() const override { return true_reward_; }

 private:
  Tensor render_stack();
  GridCollectConfig cfg_;
  std::mt19937_64 rng_{0};
  int agent_r_ = 0, agent_c_ = 0, goal_r_ = 0, goal_c_ = 0;
  std::vector<std::pair<int, int>> pellets_;
  int steps_taken_ = 0;
  real true_reward_ = 0.0;
  std::deque<std::vector<real>> frames_;
};

struct BanditConfig {
  real mu = 0.5;
  NoiseSpec noise;
  int obs_size = 5;  // observation is a fixed obs_size x obs_size pattern
};

// Single fixed state, one-step episodes, immediate noisy reward with mean
// mu and variance sigma2.  Exercises mean/variance recovery in isolation.
class FixedStateBandit : public Env {
 public:
  explicit FixedStateBandit(BanditConfig cfg);
  int num_actions() const override { return 2; }  // both actions identical
  std::array<int, 3> obs_shape() const override;
  void seed(uint64_t s) override { rng_.seed(s); }
  Tensor reset() override;
  EnvStep step(int action) override;
  real last_true_reward() const override { return true_reward_; }

 private:
  BanditConfig cfg_;
  std::mt19937_64 rng_{0};
  real true_reward_ = 0.0;
};

// Tabular MDP used as a test oracle and, wrapped as an Env, a tiny
// trainable domain.
struct ChainMdp {
  int n_states = 0;
  int n_actions = 0;
  // transition[s][a] is a distribution over next states (rows sum to 1)
  std::vector<std::vector<std::vector<real>>> transition;
  std::vector<std::vector<real>> mean_reward;  // [s][a]
  std::vector<bool> terminal;                  // absorbing, episode ends
  real gamma = 0.99;

  void validate() const;
  // The 2-state chain from the test suite: s0 -> s1 pays 1, s1 terminal.
  static ChainMdp two_state(real gamma = 0.99);
};

struct ValueIterationResult {
  std::vector<real> values;
  std::vector<int> greedy_policy;
  int sweeps = 0;
};

ValueIterationResult value_iteration_oracle(const ChainMdp& mdp, real tol);

struct ChainMdpEnvConfig {
  ChainMdp mdp;
  NoiseSpec noise;
  int obs_size = 5;  // state index rendered as a bright row of pixels
  int step_limit = 100;
};

class ChainMdpEnv : public Env {
 public:
  explicit ChainMdpEnv(ChainMdpEnvConfig cfg);
  int num_actions() const override;
  std::array<int, 3> obs_shape() const override;
  void seed(uint64_t s) override { rng_.seed(s); }
  Tensor reset() override;
  EnvStep step(int action) override;
  real last_true_reward() const override { return true_reward_; }
  int current_state() const { return state_; }

 private:
  Tensor render_stack();
  ChainMdpEnvConfig cfg_;
  std::mt19937_64 rng_{0};
  int state_ = 0;
  int steps_taken_ = 0;
  real true_reward_ = 0.0;
};

// Factory keyed by the run-config env name.
std::unique_ptr<Env> make_env(const std::string& name, int width, int height,
                              const NoiseSpec& noise);

// Writes an episode trace (step, action, reward, true_reward, terminal) as
// CSV rows for debugging.
std::string episode_trace_csv(Env& env, const std::vector<int>& actions);

}  // namespace rlab
