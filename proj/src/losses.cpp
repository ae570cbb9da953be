#include "rlab/losses.hpp"

#include <cmath>
#include <numbers>

namespace rlab {

void Trajectory::check() const {
  if (rewards.empty()) throw ContractViolation("trajectory: empty rollout");
  if (actions.size() != rewards.size() || values.size() != rewards.size())
    throw ContractViolation("trajectory: field lengths disagree");
  if (terminal && bootstrap_value != 0.0)
    throw ContractViolation("trajectory: terminal rollout must bootstrap 0");
}

std::vector<real> n_step_returns(const Trajectory& traj, real gamma) {
  traj.check();
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw ContractViolation("n_step_returns: gamma out of (0,1]");
  std::vector<real> returns(traj.length());
  real running = traj.terminal ? 0.0 : traj.bootstrap_value;
  for (size_t i = traj.length(); i-- > 0;) {
    running = traj.rewards[i] + gamma * running;
    returns[i] = running;
  }
  return returns;
}

std::vector<real> advantage(const Trajectory& traj, real gamma) {
  std::vector<real> adv = n_step_returns(traj, gamma);
  for (size_t i = 0; i < adv.size(); ++i) adv[i] -= traj.values[i];
  return adv;
}

Tensor value_nll_loss(const Tensor& values, const Tensor& nus,
                      const std::vector<real>& returns, bool baseline_mode,
                      bool nu_frozen) {
  const size_t n = returns.size();
  if (values.numel() != n || nus.numel() != n)
    throw ContractViolation("value_nll_loss: length mismatch");
  constexpr real two_pi = 2.0 * std::numbers::pi_v<real>;

  real loss = 0.0;
  for (size_t t = 0; t < n; ++t) {
    real v = values.data()[t];
    real resid = v - returns[t];
    if (baseline_mode) {
      loss += 0.5 * resid * resid;
    } else {
      real nu = nu_frozen ? 1.0 : nus.data()[t];
      if (!(nu > 0.0))
        throw ContractViolation("value_nll_loss: non-positive variance");
      loss += 0.5 * std::log(two_pi * nu) + resid * resid / (2.0 * nu);
    }
  }

  auto vi = values.impl_ptr(), ni = nus.impl_ptr();
  auto rets = std::make_shared<std::vector<real>>(returns);
  return make_op_node(
      {1}, {loss}, {values, nus},
      [vi, ni, rets, baseline_mode, nu_frozen](TensorImpl& self) {
        real up = self.grad[0];
        auto& gv = vi->ensure_grad();
        auto& gn = ni->ensure_grad();
        for (size_t t = 0; t < rets->size(); ++t) {
          real resid = vi->val[t] - (*rets)[t];
          if (baseline_mode) {
            gv[t] += up * resid;
          } else {
            real nu = nu_frozen ? 1.0 : ni->val[t];
            gv[t] += up * resid / nu;
            if (!nu_frozen)
              gn[t] += up * (0.5 / nu - resid * resid / (2.0 * nu * nu));
          }
        }
      });
}

Tensor policy_gradient_loss(const Tensor& logits, const std::vector<int>& actions,
                            const std::vector<real>& advantages) {
  if (logits.ndim() != 2 ||
      static_cast<size_t>(logits.dim(0)) != actions.size() ||
      actions.size() != advantages.size())
    throw ContractViolation("policy_gradient_loss: length mismatch");
  Tensor logp = log_softmax(logits);
  const int n = logits.dim(1);
  real loss = 0.0;
  for (size_t t = 0; t < actions.size(); ++t) {
    int a = actions[t];
    if (a < 0 || a >= n) throw ContractViolation("policy_gradient_loss: bad action");
    loss -= logp.data()[t * static_cast<size_t>(n) + a] * advantages[t];
  }
  auto li = logp.impl_ptr();
  auto acts = std::make_shared<std::vector<int>>(actions);
  auto advs = std::make_shared<std::vector<real>>(advantages);
  return make_op_node({1}, {loss}, {logp}, [li, acts, advs, n](TensorImpl& self) {
    auto& g = li->ensure_grad();
    for (size_t t = 0; t < acts->size(); ++t)
      g[t * static_cast<size_t>(n) + (*acts)[t]] -= self.grad[0] * (*advs)[t];
  });
}

Tensor policy_entropy(const Tensor& logits) {
  Tensor logp = log_softmax(logits);
  const int b = logits.dim(0), n = logits.dim(1);
  real ent = 0.0;
  for (int r = 0; r < b; ++r)
    for (int j = 0; j < n; ++j) {
      real lp = logp.data()[static_cast<size_t>(r) * n + j];
      ent -= std::exp(lp) * lp;
    }
  auto li = logp.impl_ptr();
  return make_op_node({1}, {ent}, {logp}, [li, b, n](TensorImpl& self) {
    auto& g = li->ensure_grad();
    // dH/dlogp_j = -p_j (logp_j + 1)
    for (int r = 0; r < b; ++r)
      for (int j = 0; j < n; ++j) {
        size_t i = static_cast<size_t>(r) * n + j;
        g[i] -= self.grad[0] * std::exp(li->val[i]) * (li->val[i] + 1.0);
      }
  });
}

LossBreakdown total_loss(const NetworkOutputs& out, const Trajectory& traj,
                         real gamma, const LossWeights& weights) {
  LossBreakdown bd;
  bd.returns = n_step_returns(traj, gamma);
  bd.advantages = bd.returns;
  for (size_t i = 0; i < bd.advantages.size(); ++i)
    bd.advantages[i] -= traj.values[i];

  bd.policy_loss = policy_gradient_loss(out.policy_logits, traj.actions,
                                        bd.advantages);
  bd.entropy_bonus = policy_entropy(out.policy_logits);
  bd.value_nll_loss = value_nll_loss(out.values, out.nus, bd.returns,
                                     weights.baseline_mode, weights.nu_frozen);
  bd.total = weighted_sum(
      {bd.policy_loss, bd.value_nll_loss, bd.entropy_bonus},
      {1.0, weights.value_weight, -weights.entropy_beta});
  return bd;
}

}  // namespace rlab
