#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "rlab/trainer.hpp"

using namespace rlab;

namespace {

NetworkConfig tiny_net(int h, int w, int actions) {
  NetworkConfig cfg;
  cfg.height = h;
  cfg.width = w;
  cfg.actions = actions;
  cfg.fe_ch1 = 4;
  cfg.fe_ch2 = 4;
  cfg.value_ch1 = 4;
  cfg.value_ch2 = 4;
  cfg.variance_ch1 = 4;
  cfg.variance_ch2 = 4;
  cfg.policy_ch = 4;
  cfg.lstm_hidden = 8;
  return cfg;
}

TrainerConfig quick_trainer(long steps, int workers = 1) {
  TrainerConfig t;
  t.workers = workers;
  t.total_steps = steps;
  t.rollout_k = 5;
  t.seed = 3;
  return t;
}

EnvFactory catch_factory(real sigma2 = 0.0) {
  return [sigma2](int) {
    NoiseSpec n;
    n.sigma2 = sigma2;
    return std::make_unique<CatchEnv>(CatchConfig{7, 7, n});
  };
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name)
      : path((std::filesystem::temp_directory_path() / name).string()) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("metrics csv column contract") {
  MetricsSink sink;
  UpdateRow r;
  r.global_step = 10;
  r.worker_id = 2;
  r.policy_loss = 0.5;
  r.value_nll_loss = -1.25;
  r.entropy = 1.0;
  r.mean_nu = 0.125;
  r.grad_norm = 3.5;
  sink.log_update(r);
  r.global_step = 15;
  r.episode_return = 1.0;
  r.episode_length = 9;
  sink.log_update(r);

  std::string csv = sink.metrics_csv();
  CHECK(csv.rfind("global_step,worker_id,episode_return,episode_length,"
                  "policy_loss,value_nll_loss,entropy,mean_nu,grad_norm\n",
                  0) == 0);
  // row without an episode keeps the optional columns empty
  CHECK(csv.find("10,2,,,0.5,-1.25,1,0.125,3.5\n") != std::string::npos);
  CHECK(csv.find("15,2,1,9,0.5,-1.25,1,0.125,3.5\n") != std::string::npos);

  sink.log_eval({100, 0.75, 10});
  std::string ev = sink.eval_csv();
  CHECK(ev.rfind("global_step,mean_return,episodes\n", 0) == 0);
  CHECK(ev.find("100,0.75,10\n") != std::string::npos);
}

TEST_CASE("evaluate is deterministic and leaves the model untouched") {
  NetworkConfig ncfg = tiny_net(7, 7, 3);
  AbnNet net(ncfg, 5);
  CatchEnv env(CatchConfig{7, 7, {}});

  std::vector<std::vector<real>> before;
  for (const auto& [n, t] : net.registry().entries()) before.push_back(t.data());

  auto r1 = evaluate(net, env, 6, true, 99);
  auto r2 = evaluate(net, env, 6, true, 99);
  CHECK(r1 == r2);
  CHECK(r1.size() == 6);
  for (real r : r1) CHECK((r == 0.0 || r == 1.0));

  size_t i = 0;
  for (const auto& [n, t] : net.registry().entries())
    CHECK(t.data() == before[i++]);

  CHECK_THROWS_AS(evaluate(net, env, 0, true, 1), ContractViolation);
}

TEST_CASE("noisy env evaluation reports true returns") {
  // sigma2 > 0 perturbs the training signal but the eval metric reads the
  // telemetry channel, so returns stay on the {0, 1} lattice
  NetworkConfig ncfg = tiny_net(7, 7, 3);
  AbnNet net(ncfg, 6);
  NoiseSpec noise;
  noise.sigma2 = 0.05;
  CatchEnv env(CatchConfig{7, 7, noise});
  for (real r : evaluate(net, env, 10, false, 3)) CHECK((r == 0.0 || r == 1.0));
}

TEST_CASE("zero-step budget performs no updates") {
  MetricsSink sink;
  auto res = train(tiny_net(7, 7, 3), quick_trainer(0), {}, catch_factory(),
                   catch_factory(), sink);
  CHECK(sink.updates().empty());
  CHECK(res.global->version() == 0);
  CHECK(res.global->global_step.load() == 0);
}

TEST_CASE("single worker run: budget, rollout sizes and episode rows") {
  MetricsSink sink;
  TrainerConfig tcfg = quick_trainer(300);
  auto res = train(tiny_net(7, 7, 3), tcfg, {}, catch_factory(0.03),
                   catch_factory(), sink);
  auto rows = sink.updates();
  REQUIRE(!rows.empty());

  long prev = 0;
  int episode_rows = 0;
  for (const auto& r : rows) {
    CHECK(r.worker_id == 0);
    long delta = r.global_step - prev;
    CHECK(delta >= 1);
    CHECK(delta <= tcfg.rollout_k);
    prev = r.global_step;
    if (r.episode_return) {
      ++episode_rows;
      REQUIRE(r.episode_length.has_value());
      // catch episodes last exactly height-1 = 6 steps
      CHECK(*r.episode_length == 6);
    }
    CHECK(std::isfinite(r.policy_loss));
    CHECK(r.mean_nu > 0.0);
    CHECK(r.grad_norm >= 0.0);
  }
  CHECK(rows.back().global_step >= tcfg.total_steps);
  CHECK(episode_rows > 10);
  CHECK(res.global->version() == rows.size() - res.skipped_updates);
}

TEST_CASE("single worker training is bit-reproducible") {
  auto run = [](uint64_t seed) {
    MetricsSink sink;
    TrainerConfig tcfg = quick_trainer(150);
    tcfg.seed = seed;
    train(tiny_net(7, 7, 3), tcfg, {}, catch_factory(0.05), catch_factory(),
          sink);
    return sink.metrics_csv();
  };
  CHECK(run(11) == run(11));
  CHECK(run(11) != run(12));
}

TEST_CASE("baseline mode runs with the variance branch disabled") {
  NetworkConfig ncfg = tiny_net(7, 7, 3);
  ncfg.variance_branch_enabled = false;
  LossWeights w;
  w.baseline_mode = true;
  MetricsSink sink;
  train(ncfg, quick_trainer(100), w, catch_factory(0.05), catch_factory(), sink);
  for (const auto& r : sink.updates()) CHECK(r.mean_nu == 1.0);
}

TEST_CASE("eval hook fires on period boundaries") {
  MetricsSink sink;
  TrainerConfig tcfg = quick_trainer(200);
  tcfg.eval_period = 50;
  tcfg.eval_episodes = 3;
  train(tiny_net(7, 7, 3), tcfg, {}, catch_factory(), catch_factory(), sink);
  auto evals = sink.evals();
  REQUIRE(evals.size() >= 3);
  long prev = 0;
  for (const auto& e : evals) {
    CHECK(e.global_step > prev);
    prev = e.global_step;
    CHECK(e.episodes == 3);
    CHECK(e.mean_return >= 0.0);
    CHECK(e.mean_return <= 1.0);
  }
}

TEST_CASE("multi-worker run covers the budget and logs all workers") {
  MetricsSink sink;
  TrainerConfig tcfg = quick_trainer(400, 3);
  auto res = train(tiny_net(7, 7, 3), tcfg, {}, catch_factory(0.03),
                   catch_factory(), sink);
  auto rows = sink.updates();
  std::set<int> workers;
  for (const auto& r : rows) workers.insert(r.worker_id);
  CHECK(workers == std::set<int>{0, 1, 2});
  CHECK(res.global->global_step.load() >= 400);
  CHECK(res.global->version() + res.skipped_updates == rows.size());

  // worker 0's model ends synced with the shared store
  size_t i = 0;
  for (const auto& [n, t] : res.model->registry().entries())
    CHECK(t.data() == res.global->tensor_values(i++));
}

TEST_CASE("checkpoint round trip restores every tensor and buffer") {
  NetworkConfig ncfg = tiny_net(7, 7, 3);
  MetricsSink sink;
  auto res = train(ncfg, quick_trainer(100), {}, catch_factory(0.03),
                   catch_factory(), sink);
  AbnNet& net = *res.model;

  TempFile f("rlab_test_ckpt.bin");
  save_checkpoint(f.path, net, 0xfeedbeefull);

  std::vector<std::vector<real>> vals;
  for (const auto& [n, t] : net.registry().entries()) vals.push_back(t.data());
  std::vector<std::vector<real>> bufs;
  for (auto* b : net.bn_buffers()) bufs.push_back(*b);

  // scribble over everything, then restore
  for (const auto& [n, t] : net.registry().entries())
    for (auto& v : Tensor(t).data()) v = -99.0;
  for (auto* b : net.bn_buffers())
    for (auto& v : *b) v = -99.0;

  AbnNet fresh(ncfg, 123);
  uint64_t hash = load_checkpoint(f.path, fresh);
  CHECK(hash == 0xfeedbeefull);
  size_t i = 0;
  for (const auto& [n, t] : fresh.registry().entries())
    CHECK(t.data() == vals[i++]);
  i = 0;
  for (auto* b : fresh.bn_buffers()) CHECK(*b == bufs[i++]);

  // restored model behaves identically
  CatchEnv env(CatchConfig{7, 7, {}});
  AbnNet net2(ncfg, 1);
  load_checkpoint(f.path, net2);
  CHECK(evaluate(net2, env, 4, true, 5) == evaluate(fresh, env, 4, true, 5));
}

TEST_CASE("checkpoint validation rejects wrong files") {
  NetworkConfig ncfg = tiny_net(7, 7, 3);
  AbnNet net(ncfg, 1);
  TempFile f("rlab_test_ckpt2.bin");
  save_checkpoint(f.path, net, 1);

  // architecture mismatch: different tensor set
  NetworkConfig other = ncfg;
  other.variance_branch_enabled = false;
  AbnNet small(other, 1);
  CHECK_THROWS_AS(load_checkpoint(f.path, small), ContractViolation);

  // shape mismatch with the same tensor count
  NetworkConfig wide = ncfg;
  wide.lstm_hidden = 16;
  AbnNet wider(wide, 1);
  CHECK_THROWS_AS(load_checkpoint(f.path, wider), ContractViolation);

  // not a checkpoint at all
  TempFile g("rlab_test_ckpt3.bin");
  {
    std::ofstream os(g.path, std::ios::binary);
    os << "definitely not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(g.path, net), ContractViolation);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/nope.bin", net),
                  ContractViolation);
}
