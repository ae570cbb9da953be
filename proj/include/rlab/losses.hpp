#pragma once

#include <vector>

#include "rlab/model.hpp"
#include "rlab/tensor.hpp"

namespace rlab {

// Plain-value record of one k-step rollout.  Tensors used by the taped loss
// path travel separately (NetworkOutputs); this struct carries the scalar
// facts the target computation needs.
struct Trajectory {
  std::vector<int> actions;
  std::vector<real> rewards;  // post-noise, as seen by the learner
  std::vector<real> values;   // V(s_t) .. V(s_{t+len-1}) as plain values
  bool terminal = false;
  real bootstrap_value = 0.0;  // V(s_{t+len}); must be 0 when terminal

  size_t length() const { return rewards.size(); }
  void check() const;
};

struct LossWeights {
  real value_weight = 0.5;
  real entropy_beta = 0.01;
  bool baseline_mode = false;  // squared-error value loss, no variance term
  bool nu_frozen = false;      // force nu = 1 inside the NLL
};

struct LossBreakdown {
  Tensor policy_loss;     // -sum_t log pi(a_t|s_t) * adv_t
  Tensor value_nll_loss;  // sum_t 1/2 ln(2 pi nu) + (V-R)^2 / (2 nu)
  Tensor entropy_bonus;   // sum_t H(pi(.|s_t))
  Tensor total;           // policy + w_v * nll - beta * entropy
  std::vector<real> returns;
  std::vector<real> advantages;
};

// R_t = r_t + gamma * R_{t+1}, seeded by the bootstrap value.
std::vector<real> n_step_returns(const Trajectory& traj, real gamma);

// adv_t = R_t - V(s_t); both sides plain values (gradient-stopped critic).
std::vector<real> advantage(const Trajectory& traj, real gamma);

// Gaussian NLL over the rollout.  values/nus are [steps,1] taped tensors;
// gradients flow to both.  baseline substitutes 1/2 (V-R)^2.
Tensor value_nll_loss(const Tensor& values, const Tensor& nus,
                      const std::vector<real>& returns, bool baseline_mode,
                      bool nu_frozen);

// -sum_t log pi(a_t) * adv_t, advantages taken as constants.
Tensor policy_gradient_loss(const Tensor& logits, const std::vector<int>& actions,
                            const std::vector<real>& advantages);

// sum_t H(pi(.|s_t))
Tensor policy_entropy(const Tensor& logits);

LossBreakdown total_loss(const NetworkOutputs& out, const Trajectory& traj,
                         real gamma, const LossWeights& weights);

}  // namespace rlab
