#include "rlab/model.hpp"

#include <cmath>

namespace rlab {

void NetworkConfig::validate() const {
  if (actions < 2) throw ContractViolation("network: action count must be >= 2");
  if (frames < 1 || height < 1 || width < 1)
    throw ContractViolation("network: bad input extents");
  if (kernel < 1 || stride < 1)
    throw ContractViolation("network: bad kernel/stride");
  if (!(log_var_min < log_var_max) || !std::isfinite(log_var_min) ||
      !std::isfinite(log_var_max))
    throw ContractViolation("network: bad log-variance clamp bounds");
  auto [h, w] = trunk_extents();
  if (h < 1 || w < 1)
    throw ContractViolation("network: observation too small for conv stack");
  if (h - kernel + 1 < 1 || w - kernel + 1 < 1)
    throw ContractViolation("network: trunk map too small for policy conv");
}

std::pair<int, int> NetworkConfig::trunk_extents() const {
  int h = Conv2d::out_extent(height, kernel, stride, 0);
  int w = Conv2d::out_extent(width, kernel, stride, 0);
  if (h < 1 || w < 1) return {h, w};
  h = Conv2d::out_extent(h, kernel, stride, 0);
  w = Conv2d::out_extent(w, kernel, stride, 0);
  return {h, w};
}

AbnNet::AbnNet(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const int k = cfg_.kernel, s = cfg_.stride;
  const int same_pad = (k - 1) / 2;
  if (2 * same_pad != k - 1)
    throw ContractViolation("network: branch kernels must be odd for same-size maps");

  fe_conv1_ = Conv2d::create(reg_, "fe.conv1", cfg_.frames, cfg_.fe_ch1, k, s, 0, seed);
  fe_bn1_ = BatchNorm::create(reg_, "fe.bn1", cfg_.fe_ch1, seed);
  fe_conv2_ = Conv2d::create(reg_, "fe.conv2", cfg_.fe_ch1, cfg_.fe_ch2, k, s, 0, seed);
  fe_bn2_ = BatchNorm::create(reg_, "fe.bn2", cfg_.fe_ch2, seed);

  // Branch convs keep the trunk's spatial size so f broadcasts over g.
  val_conv1_ = Conv2d::create(reg_, "value.conv1", cfg_.fe_ch2, cfg_.value_ch1, k, 1, same_pad, seed);
  val_bn1_ = BatchNorm::create(reg_, "value.bn1", cfg_.value_ch1, seed);
  val_conv2_ = Conv2d::create(reg_, "value.conv2", cfg_.value_ch1, cfg_.value_ch2, k, 1, same_pad, seed);
  val_bn2_ = BatchNorm::create(reg_, "value.bn2", cfg_.value_ch2, seed);
  val_conv3_ = Conv2d::create(reg_, "value.conv3", cfg_.value_ch2, 1, k, 1, same_pad, seed);
  val_bn3_ = BatchNorm::create(reg_, "value.bn3", 1, seed);

  if (cfg_.variance_branch_enabled) {
    var_conv1_ = Conv2d::create(reg_, "variance.conv1", cfg_.fe_ch2, cfg_.variance_ch1, k, 1, same_pad, seed);
    var_bn1_ = BatchNorm::create(reg_, "variance.bn1", cfg_.variance_ch1, seed);
    var_conv2_ = Conv2d::create(reg_, "variance.conv2", cfg_.variance_ch1, cfg_.variance_ch2, k, 1, same_pad, seed);
    var_bn2_ = BatchNorm::create(reg_, "variance.bn2", cfg_.variance_ch2, seed);
    var_conv3_ = Conv2d::create(reg_, "variance.conv3", cfg_.variance_ch2, 1, k, 1, same_pad, seed);
    var_bn3_ = BatchNorm::create(reg_, "variance.bn3", 1, seed);
  }

  pol_conv_ = Conv2d::create(reg_, "policy.conv", cfg_.fe_ch2, cfg_.policy_ch, k, 1, 0, seed);
  pol_bn_ = BatchNorm::create(reg_, "policy.bn", cfg_.policy_ch, seed);
  auto [th, tw] = cfg_.trunk_extents();
  int ph = th - k + 1, pw = tw - k + 1;
  pol_flat_ = cfg_.policy_ch * ph * pw;
  lstm_ = LstmCell::create(reg_, "policy.lstm", pol_flat_, cfg_.lstm_hidden, seed);
  head_ = Dense::create(reg_, "policy.head", cfg_.lstm_hidden, cfg_.actions, seed);
}

Tensor AbnNet::maybe_bn(BatchNorm& bn, const Tensor& x, BnMode mode) {
  return cfg_.batchnorm_enabled ? bn.forward(x, mode) : x;
}

LstmState AbnNet::zero_state() const {
  return {Tensor::zeros({1, cfg_.lstm_hidden}), Tensor::zeros({1, cfg_.lstm_hidden})};
}

Tensor AbnNet::feature_extract(const Tensor& obs, BnMode mode) {
  Tensor x = relu(maybe_bn(fe_bn1_, fe_conv1_.forward(obs), mode));
  return relu(maybe_bn(fe_bn2_, fe_conv2_.forward(x), mode));
}

std::pair<Tensor, Tensor> AbnNet::value_branch(const Tensor& g, BnMode mode) {
  Tensor x = relu(maybe_bn(val_bn1_, val_conv1_.forward(g), mode));
  x = relu(maybe_bn(val_bn2_, val_conv2_.forward(x), mode));
  Tensor f = maybe_bn(val_bn3_, val_conv3_.forward(x), mode);
  return {f, global_max_pool(f)};
}

std::pair<Tensor, Tensor> AbnNet::variance_branch_maps(const Tensor& g,
                                                       BnMode mode) {
  if (!cfg_.variance_branch_enabled)
    throw ContractViolation("variance branch disabled");
  Tensor in = cfg_.variance_detached ? g.detached() : g;
  Tensor x = relu(maybe_bn(var_bn1_, var_conv1_.forward(in), mode));
  x = relu(maybe_bn(var_bn2_, var_conv2_.forward(x), mode));
  Tensor map = maybe_bn(var_bn3_, var_conv3_.forward(x), mode);
  Tensor log_var = clamp(global_avg_pool(map), cfg_.log_var_min, cfg_.log_var_max);
  return {map, exp_op(log_var)};
}

std::pair<Tensor, LstmState> AbnNet::policy_branch(const Tensor& g_prime,
                                                   const LstmState& state,
                                                   BnMode mode) {
  Tensor x = relu(maybe_bn(pol_bn_, pol_conv_.forward(g_prime), mode));
  const int steps = x.dim(0);
  Tensor flat = reshape(x, {steps, pol_flat_});
  Tensor h = state.h, c = state.c;
  std::vector<Tensor> logits_rows;
  logits_rows.reserve(static_cast<size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    auto [h2, c2] = lstm_.step(slice_rows(flat, t, 1), h, c);
    h = h2;
    c = c2;
    logits_rows.push_back(head_.forward(h));
  }
  Tensor logits = steps == 1 ? logits_rows[0] : concat_rows(logits_rows);
  return {logits, LstmState{h, c}};
}

NetworkOutputs AbnNet::forward(const Tensor& obs, const LstmState& state,
                               BnMode mode) {
  if (obs.ndim() != 4 || obs.dim(1) != cfg_.frames ||
      obs.dim(2) != cfg_.height || obs.dim(3) != cfg_.width)
    throw ContractViolation("forward: observation shape mismatch");
  NetworkOutputs out;
  Tensor g = feature_extract(obs, mode);
  auto [f, v] = value_branch(g, mode);
  out.value_map = f;
  out.values = v;
  if (cfg_.variance_branch_enabled) {
    auto [vmap, nu] = variance_branch_maps(g, mode);
    out.variance_map = vmap;
    out.nus = nu;
  } else {
    out.nus = Tensor::full({obs.dim(0), 1}, 1.0);
  }
  auto [logits, st] = policy_branch(attention_compose(f, g), state, mode);
  out.policy_logits = logits;
  out.lstm_state = st;
  check_finite(out.policy_logits, "policy logits");
  check_finite(out.values, "state values");
  check_finite(out.nus, "predicted variances");
  return out;
}

std::vector<std::vector<real>*> AbnNet::bn_buffers() {
  std::vector<std::vector<real>*> bufs;
  auto push = [&](BatchNorm& bn) {
    bufs.push_back(&bn.running_mean);
    bufs.push_back(&bn.running_var);
  };
  push(fe_bn1_);
  push(fe_bn2_);
  push(val_bn1_);
  push(val_bn2_);
  push(val_bn3_);
  if (cfg_.variance_branch_enabled) {
    push(var_bn1_);
    push(var_bn2_);
    push(var_bn3_);
  }
  push(pol_bn_);
  return bufs;
}

}  // namespace rlab
