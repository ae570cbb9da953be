#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rlab/layers.hpp"
#include "rlab/tensor.hpp"

namespace rlab {

struct NetworkConfig {
  int frames = 4;
  int height = 10;
  int width = 10;
  int fe_ch1 = 16;
  int fe_ch2 = 32;
  int value_ch1 = 32;
  int value_ch2 = 64;
  int variance_ch1 = 32;
  int variance_ch2 = 64;
  int policy_ch = 32;
  int lstm_hidden = 64;
  int actions = 3;
  int kernel = 3;
  int stride = 1;
  bool variance_branch_enabled = true;
  bool variance_detached = false;  // stop variance-branch grads at the trunk
  bool batchnorm_enabled = true;
  bool act_bn_train_mode = false;  // BN mode for the acting forward
  real log_var_min = -10.0;
  real log_var_max = 10.0;

  void validate() const;
  // spatial extents of g(s_t) after the two valid feature-extractor convs
  std::pair<int, int> trunk_extents() const;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

// Per-rollout forward results; row t of each tensor belongs to step t.
struct NetworkOutputs {
  Tensor policy_logits;  // [steps, actions]
  Tensor values;         // [steps, 1]
  Tensor nus;            // [steps, 1], exp head, always > 0
  Tensor value_map;      // [steps, 1, h', w']
  Tensor variance_map;   // [steps, 1, h', w'] (undefined when branch disabled)
  LstmState lstm_state;  // state after the last step
};

// Attention-branch actor-critic network with the optional variance branch.
// One instance per
// worker thread; parameters live in the instance's registry and are synced
// by value against the shared store.
class AbnNet {
 public:
  AbnNet(const NetworkConfig& cfg, uint64_t init_seed);

  // Batched forward over a rollout: obs [steps, frames, h, w].  The LSTM is
  // unrolled sequentially from `state`; conv/BN layers run on the whole
  // batch so train-mode BN statistics cover the rollout mini-batch.
  NetworkOutputs forward(const Tensor& obs, const LstmState& state,
                         BnMode mode);

  Tensor feature_extract(const Tensor& obs, BnMode mode);
  std::pair<Tensor, Tensor> value_branch(const Tensor& g, BnMode mode);
  std::pair<Tensor, Tensor> variance_branch_maps(const Tensor& g, BnMode mode);
  std::pair<Tensor, LstmState> policy_branch(const Tensor& g_prime,
                                             const LstmState& state,
                                             BnMode mode);

  LstmState zero_state() const;
  const NetworkConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& registry() const { return reg_; }

  // BN running-stat buffers in a fixed order, for checkpointing.
  std::vector<std::vector<real>*> bn_buffers();

 private:
  Tensor maybe_bn(BatchNorm& bn, const Tensor& x, BnMode mode);

  NetworkConfig cfg_;
  ParamRegistry reg_;
  Conv2d fe_conv1_, fe_conv2_;
  BatchNorm fe_bn1_, fe_bn2_;
  Conv2d val_conv1_, val_conv2_, val_conv3_;
  BatchNorm val_bn1_, val_bn2_, val_bn3_;
  Conv2d var_conv1_, var_conv2_, var_conv3_;
  BatchNorm var_bn1_, var_bn2_, var_bn3_;
  Conv2d pol_conv_;
  BatchNorm pol_bn_;
  LstmCell lstm_;
  Dense head_;
  int pol_flat_ = 0;
};

}  // namespace rlab
