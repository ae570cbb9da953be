#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

#include "rlab/optimizer.hpp"

using namespace rlab;

namespace {

ParamRegistry make_reg(std::vector<real> a, std::vector<real> b = {}) {
  ParamRegistry reg;
  Tensor ta = reg.add("a", {static_cast<int>(a.size())});
  ta.data() = std::move(a);
  if (!b.empty()) {
    Tensor tb = reg.add("b", {static_cast<int>(b.size())});
    tb.data() = std::move(b);
  }
  return reg;
}

}  // namespace

TEST_CASE("gradient clipping") {
  // norm 5 vector clipped to max 2.5 halves every component
  std::vector<real> g = {3, 4};  // norm 5
  real pre = clip_gradients({&g}, 2.5);
  CHECK(pre == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(1.5));
  CHECK(g[1] == doctest::Approx(2.0));
  CHECK(std::hypot(g[0], g[1]) == doctest::Approx(2.5));

  // under the threshold: untouched
  std::vector<real> h = {0.3, -0.4};
  clip_gradients({&h}, 2.5);
  CHECK(h == std::vector<real>{0.3, -0.4});

  // max_norm <= 0 disables clipping
  std::vector<real> u = {30, 40};
  clip_gradients({&u}, 0.0);
  CHECK(u == std::vector<real>{30, 40});

  // norm spans all tensors jointly
  std::vector<real> p = {3, 0}, q = {0, 4};
  real joint = clip_gradients({&p, &q}, 1.0);
  CHECK(joint == doctest::Approx(5.0));
  CHECK(p[0] == doctest::Approx(0.6));
  CHECK(q[1] == doctest::Approx(0.8));
}

TEST_CASE("clipping preserves direction") {
  std::mt19937_64 rng(9);
  std::normal_distribution<real> dist;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<real> g(6);
    for (auto& x : g) x = 10 * dist(rng);
    auto orig = g;
    clip_gradients({&g}, 1.0);
    // post-clip vector is a positive scalar multiple of the original
    real norm = 0;
    for (real x : g) norm += x * x;
    CHECK(std::sqrt(norm) <= 1.0 + 1e-9);
    for (size_t i = 1; i < g.size(); ++i)
      CHECK(g[i] * orig[0] == doctest::Approx(g[0] * orig[i]).epsilon(1e-9));
  }
}

TEST_CASE("rmsprop first-step hand value") {
  // v starts 0; g = 1: v = (1-0.99)*1 = 0.01,
  // step = lr * 1 / (sqrt(0.01) + 1e-8) ~= 7e-4 / 0.1 = 7e-3
  RmspropConfig opt;
  ParamRegistry reg = make_reg({1.0});
  GlobalParams global(reg, opt);
  reg.tensors()[0].grad() = {1.0};
  CHECK(global.apply_gradients(reg));
  real expected_step = 7e-4 * 1.0 / (std::sqrt(0.01) + 1e-8);
  CHECK(global.tensor_values(0)[0] ==
        doctest::Approx(1.0 - expected_step).epsilon(1e-10));
  CHECK(global.second_moment(0)[0] == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(global.version() == 1);
}

TEST_CASE("zero gradient leaves parameters untouched") {
  GlobalParams global(make_reg({1.0, -2.0}), {});
  ParamRegistry reg = make_reg({1.0, -2.0});
  reg.tensors()[0].grad() = {0.0, 0.0};
  CHECK(global.apply_gradients(reg));
  CHECK(global.tensor_values(0) == std::vector<real>{1.0, -2.0});
  CHECK(global.second_moment(0) == std::vector<real>{0.0, 0.0});
}

TEST_CASE("equal and opposite gradients cancel in value, not in v") {
  RmspropConfig opt;
  GlobalParams global(make_reg({0.5}), opt);
  ParamRegistry reg = make_reg({0.5});
  reg.tensors()[0].grad() = {2.0};
  global.apply_gradients(reg);
  reg.tensors()[0].grad() = {-2.0};
  global.apply_gradients(reg);
  // same |g| both times: two steps of equal size, opposite sign
  real v1 = (1 - opt.decay) * 4.0;
  real v2 = opt.decay * v1 + (1 - opt.decay) * 4.0;
  real step1 = opt.learning_rate * 2.0 / (std::sqrt(v1) + opt.epsilon);
  real step2 = opt.learning_rate * 2.0 / (std::sqrt(v2) + opt.epsilon);
  CHECK(global.tensor_values(0)[0] ==
        doctest::Approx(0.5 - step1 + step2).epsilon(1e-10));
  CHECK(global.second_moment(0)[0] == doctest::Approx(v2).epsilon(1e-12));
}

TEST_CASE("second moment stays nonnegative under random updates") {
  std::mt19937_64 rng(77);
  std::normal_distribution<real> dist(0, 5);
  GlobalParams global(make_reg({0, 0, 0}, {0, 0}), {});
  ParamRegistry reg = make_reg({0, 0, 0}, {0, 0});
  for (int it = 0; it < 500; ++it) {
    for (auto& [name, t] : reg.entries()) {
      auto& g = const_cast<Tensor&>(t).grad();
      g.resize(t.numel());
      for (auto& x : g) x = dist(rng);
    }
    CHECK(global.apply_gradients(reg));
    for (size_t i = 0; i < global.tensor_count(); ++i)
      for (real v : global.second_moment(i)) CHECK(v >= 0.0);
  }
  CHECK(global.version() == 500);
}

TEST_CASE("descent on a quadratic bowl") {
  // f(p) = 1/2 p^2, g = p: RMSprop should shrink |p| substantially.  Near
  // steady state v ~ p^2, so the step is ~lr per iteration; give it a rate
  // that covers the distance within the budget.
  RmspropConfig opt;
  opt.learning_rate = 0.01;
  GlobalParams global(make_reg({3.0}), opt);
  ParamRegistry reg = make_reg({3.0});
  for (int it = 0; it < 2000; ++it) {
    global.snapshot_into(reg);
    real p = reg.tensors()[0].data()[0];
    reg.tensors()[0].grad() = {p};
    global.apply_gradients(reg);
  }
  CHECK(std::abs(global.tensor_values(0)[0]) < 0.1);
}

TEST_CASE("snapshot copies values and reports the version") {
  GlobalParams global(make_reg({1, 2}, {3}), {});
  ParamRegistry reg = make_reg({0, 0}, {0});
  uint64_t v0 = global.snapshot_into(reg);
  CHECK(v0 == 0);
  CHECK(reg.tensors()[0].data() == std::vector<real>{1, 2});
  CHECK(reg.tensors()[1].data() == std::vector<real>{3});

  reg.tensors()[0].grad() = {1, 1};
  reg.tensors()[1].grad() = {1};
  global.apply_gradients(reg);
  ParamRegistry reg2 = make_reg({0, 0}, {0});
  CHECK(global.snapshot_into(reg2) == 1);
  CHECK(reg2.tensors()[0].data() == global.tensor_values(0));
}

TEST_CASE("registry shape mismatch is rejected") {
  GlobalParams global(make_reg({1, 2}), {});
  ParamRegistry other = make_reg({1, 2, 3});
  CHECK_THROWS_AS(global.snapshot_into(other), ContractViolation);
  other.tensors()[0].grad() = {0, 0, 0};
  CHECK_THROWS_AS(global.apply_gradients(other), ContractViolation);
}

TEST_CASE("non-finite gradients reject the whole update") {
  GlobalParams global(make_reg({1.0}, {2.0}), {});
  ParamRegistry reg = make_reg({1.0}, {2.0});
  reg.tensors()[0].grad() = {0.5};
  reg.tensors()[1].grad() = {std::nan("")};
  CHECK_FALSE(global.apply_gradients(reg));
  // nothing applied, not even the finite tensor
  CHECK(global.tensor_values(0) == std::vector<real>{1.0});
  CHECK(global.tensor_values(1) == std::vector<real>{2.0});
  CHECK(global.rejected_updates() == 1);
  CHECK(global.version() == 0);

  reg.tensors()[1].grad() = {1.0 / 0.0};
  CHECK_FALSE(global.apply_gradients(reg));
  CHECK(global.rejected_updates() == 2);
}

TEST_CASE("concurrent updates all land") {
  // deterministic per-thread gradients; with per-tensor locking every one of
  // the n*k updates must be applied exactly once
  GlobalParams global(make_reg({0.0}), {});
  const int n_threads = 4, per_thread = 200;
  std::vector<std::thread> threads;
  for (int w = 0; w < n_threads; ++w) {
    threads.emplace_back([&global]() {
      ParamRegistry reg = make_reg({0.0});
      for (int it = 0; it < per_thread; ++it) {
        global.snapshot_into(reg);
        reg.tensors()[0].grad() = {1.0};
        global.apply_gradients(reg);
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(global.version() == n_threads * per_thread);
  CHECK(global.rejected_updates() == 0);
  // all gradients were -1-directional: the parameter moved monotonically down
  CHECK(global.tensor_values(0)[0] < 0.0);
}
