#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "rlab/model.hpp"

using namespace rlab;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.fe_ch1 = 4;
  cfg.fe_ch2 = 6;
  cfg.value_ch1 = 5;
  cfg.value_ch2 = 5;
  cfg.variance_ch1 = 5;
  cfg.variance_ch2 = 5;
  cfg.policy_ch = 4;
  cfg.lstm_hidden = 8;
  cfg.actions = 3;
  return cfg;
}

Tensor random_obs(const NetworkConfig& cfg, int steps, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<real> dist(0, 1);
  std::vector<real> v(static_cast<size_t>(steps) * cfg.frames * cfg.height *
                      cfg.width);
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values({steps, cfg.frames, cfg.height, cfg.width},
                             std::move(v));
}

}  // namespace

TEST_CASE("config validation") {
  NetworkConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.actions = 1;
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = tiny_config();
  cfg.kernel = 4;  // same-pad branches need an odd kernel
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  cfg = tiny_config();
  cfg.height = 4;  // too small for two valid 3x3 convs plus branch convs
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
}

TEST_CASE("trunk extents follow two valid convs") {
  NetworkConfig cfg = tiny_config();
  cfg.height = 10;
  cfg.width = 10;
  auto [h, w] = cfg.trunk_extents();
  CHECK(h == 6);
  CHECK(w == 6);

  cfg.width = 12;
  CHECK(cfg.trunk_extents().second == 8);
}

TEST_CASE("forward output shapes and finiteness") {
  NetworkConfig cfg = tiny_config();
  AbnNet net(cfg, 1);
  Tensor obs = random_obs(cfg, 5, 99);
  auto out = net.forward(obs, net.zero_state(), BnMode::kTrain);
  CHECK(out.policy_logits.shape() == std::vector<int>{5, 3});
  CHECK(out.values.shape() == std::vector<int>{5, 1});
  CHECK(out.nus.shape() == std::vector<int>{5, 1});
  auto [h, w] = cfg.trunk_extents();
  CHECK(out.value_map.shape() == std::vector<int>{5, 1, h, w});
  CHECK(out.variance_map.shape() == std::vector<int>{5, 1, h, w});
  CHECK(out.lstm_state.h.shape() == std::vector<int>{1, cfg.lstm_hidden});
  for (real v : out.policy_logits.data()) CHECK(std::isfinite(v));
}

TEST_CASE("value is the max of the value map") {
  NetworkConfig cfg = tiny_config();
  AbnNet net(cfg, 2);
  Tensor obs = random_obs(cfg, 3, 7);
  auto out = net.forward(obs, net.zero_state(), BnMode::kEval);
  auto [h, w] = cfg.trunk_extents();
  const int hw = h * w;
  for (int t = 0; t < 3; ++t) {
    real m = out.value_map.data()[static_cast<size_t>(t) * hw];
    for (int j = 1; j < hw; ++j)
      m = std::max(m, out.value_map.data()[static_cast<size_t>(t) * hw + j]);
    CHECK(out.values.data()[t] == doctest::Approx(m).epsilon(1e-12));
  }
}

TEST_CASE("nu is positive and honors the log-variance clamp") {
  NetworkConfig cfg = tiny_config();
  AbnNet net(cfg, 3);
  Tensor obs = random_obs(cfg, 4, 13);
  auto out = net.forward(obs, net.zero_state(), BnMode::kEval);
  for (real nu : out.nus.data()) {
    CHECK(nu > 0.0);
    CHECK(nu >= std::exp(cfg.log_var_min));
    CHECK(nu <= std::exp(cfg.log_var_max));
  }
}

TEST_CASE("disabled variance branch reports nu = 1 and owns no parameters") {
  NetworkConfig cfg = tiny_config();
  cfg.variance_branch_enabled = false;
  AbnNet net(cfg, 4);
  Tensor obs = random_obs(cfg, 2, 17);
  auto out = net.forward(obs, net.zero_state(), BnMode::kEval);
  for (real nu : out.nus.data()) CHECK(nu == 1.0);
  CHECK_FALSE(out.variance_map.defined());
  for (const auto& [name, t] : net.registry().entries())
    CHECK(name.find("variance") == std::string::npos);
}

TEST_CASE("shared tensors initialize identically with and without the branch") {
  NetworkConfig with = tiny_config();
  NetworkConfig without = tiny_config();
  without.variance_branch_enabled = false;
  AbnNet a(with, 42);
  AbnNet b(without, 42);
  // every non-variance tensor matches by name, bit for bit
  size_t matched = 0;
  for (const auto& [name, tb] : b.registry().entries()) {
    bool found = false;
    for (const auto& [na, ta] : a.registry().entries()) {
      if (na == name) {
        CHECK(ta.data() == tb.data());
        found = true;
        ++matched;
      }
    }
    CHECK(found);
  }
  CHECK(matched == b.registry().entries().size());
  CHECK(a.registry().entries().size() > matched);  // the branch adds tensors
}

TEST_CASE("policy and value ignore variance parameters") {
  NetworkConfig cfg = tiny_config();
  AbnNet net(cfg, 5);
  Tensor obs = random_obs(cfg, 3, 23);
  auto before = net.forward(obs, net.zero_state(), BnMode::kEval);

  // perturb every variance-branch parameter hard
  for (auto& [name, t] : net.params().entries())
    if (name.find("variance") != std::string::npos)
      for (auto& v : const_cast<Tensor&>(t).data()) v += 3.7;

  auto after = net.forward(obs, net.zero_state(), BnMode::kEval);
  CHECK(before.policy_logits.data() == after.policy_logits.data());
  CHECK(before.values.data() == after.values.data());
  CHECK(before.nus.data() != after.nus.data());
}

TEST_CASE("attention gating feeds the policy") {
  // zeroing the value branch's contribution to f changes the policy input
  NetworkConfig cfg = tiny_config();
  AbnNet net(cfg, 6);
  Tensor obs = random_obs(cfg, 2, 29);
  auto base = net.forward(obs, net.zero_state(), BnMode::kEval);

  for (auto& [name, t] : net.params().entries())
    if (name.find("value") != std::string::npos)
      for (auto& v : const_cast<Tensor&>(t).data()) v *= 1.01;

  auto bumped = net.forward(obs, net.zero_state(), BnMode::kEval);
  CHECK(base.policy_logits.data() != bumped.policy_logits.data());
}

TEST_CASE("gradients reach the trunk through policy, value and variance") {
  NetworkConfig cfg = tiny_config();
  AbnNet net(cfg, 7);
  Tensor obs = random_obs(cfg, 2, 31);
  Tensor fe_w = net.registry().entries().front().second;

  auto grad_norm_via = [&](auto&& pick) {
    net.params().zero_grads();
    auto out = net.forward(obs, net.zero_state(), BnMode::kTrain);
    backward(sum(pick(out)));
    real n = 0;
    for (real g : fe_w.grad()) n += g * g;
    return std::sqrt(n);
  };

  CHECK(grad_norm_via([](NetworkOutputs& o) { return o.policy_logits; }) > 0);
  CHECK(grad_norm_via([](NetworkOutputs& o) { return o.values; }) > 0);
  CHECK(grad_norm_via([](NetworkOutputs& o) { return o.nus; }) > 0);
}

TEST_CASE("variance_detached stops variance gradients at the trunk") {
  NetworkConfig cfg = tiny_config();
  cfg.variance_detached = true;
  AbnNet net(cfg, 7);
  Tensor obs = random_obs(cfg, 2, 31);
  Tensor fe_w = net.registry().entries().front().second;

  net.params().zero_grads();
  auto out = net.forward(obs, net.zero_state(), BnMode::kTrain);
  backward(sum(out.nus));
  for (real g : fe_w.grad()) CHECK(g == 0.0);

  // variance-branch parameters themselves still learn
  for (const auto& [name, t] : net.registry().entries())
    if (name.find("variance.conv1.weight") != std::string::npos) {
      real n = 0;
      for (real g : t.grad()) n += std::abs(g);
      CHECK(n > 0);
    }
}

TEST_CASE("eval forward is deterministic and stateless") {
  NetworkConfig cfg = tiny_config();
  AbnNet net(cfg, 8);
  Tensor obs = random_obs(cfg, 3, 37);
  auto m1 = net.forward(obs, net.zero_state(), BnMode::kEval);
  auto m2 = net.forward(obs, net.zero_state(), BnMode::kEval);
  CHECK(m1.policy_logits.data() == m2.policy_logits.data());
  CHECK(m1.values.data() == m2.values.data());
  CHECK(m1.nus.data() == m2.nus.data());
}

TEST_CASE("lstm state threading changes later-step outputs") {
  NetworkConfig cfg = tiny_config();
  AbnNet net(cfg, 9);
  Tensor obs = random_obs(cfg, 1, 41);
  auto first = net.forward(obs, net.zero_state(), BnMode::kEval);
  auto second = net.forward(obs, first.lstm_state, BnMode::kEval);
  CHECK(first.policy_logits.data() != second.policy_logits.data());
  // value branch sits before the LSTM, so it is state-independent
  CHECK(first.values.data() == second.values.data());
}

TEST_CASE("model end-to-end gradient check") {
  NetworkConfig cfg = tiny_config();
  cfg.height = 7;
  cfg.width = 7;
  cfg.batchnorm_enabled = false;  // keep the FD function single-valued
  AbnNet net(cfg, 10);
  Tensor obs = random_obs(cfg, 2, 43);
  auto f = [&]() {
    auto out = net.forward(obs, net.zero_state(), BnMode::kEval);
    return add(sum(mul(out.policy_logits, out.policy_logits)),
               add(sum(out.values), sum(out.nus)));
  };
  real err = gradient_check(f, net.registry().tensors(), 1e-5, 4, 123);
  CHECK(err < 1e-5);
}

TEST_CASE("batchnorm-enabled model gradient check in train mode") {
  NetworkConfig cfg = tiny_config();
  cfg.height = 7;
  cfg.width = 7;
  AbnNet net(cfg, 11);
  Tensor obs = random_obs(cfg, 3, 47);
  auto f = [&]() {
    // restore BN buffers so each FD evaluation sees the same function
    std::vector<std::vector<real>> saved;
    for (auto* b : net.bn_buffers()) saved.push_back(*b);
    auto out = net.forward(obs, net.zero_state(), BnMode::kTrain);
    Tensor y = add(sum(mul(out.policy_logits, out.policy_logits)),
                   add(sum(out.values), sum(out.nus)));
    size_t i = 0;
    for (auto* b : net.bn_buffers()) *b = saved[i++];
    return y;
  };
  real err = gradient_check(f, net.registry().tensors(), 1e-5, 3, 321);
  CHECK(err < 1e-4);
}
