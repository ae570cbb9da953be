// Command-line front end: train / eval / aggregate / export-map / compare.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "rlab/config.hpp"
#include "rlab/report.hpp"

namespace fs = std::filesystem;
using namespace rlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;
constexpr int kExitCensoredOnly = 4;

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  if (auto dir = fs::path(path).parent_path(); !dir.empty())
    fs::create_directories(dir);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
}

struct Overrides {
  std::string mode;
  double sigma2 = -1.0;
  std::vector<uint64_t> seeds;
  int workers = 0;
  std::string out;
  long total_steps = 0;
};

RunConfig load_config(const std::string& path, const Overrides& ov) {
  RunConfig cfg = parse_config(path);
  if (!ov.mode.empty()) cfg.mode = parse_run_mode(ov.mode);
  if (ov.sigma2 >= 0.0) cfg.noise.sigma2 = ov.sigma2;
  if (!ov.seeds.empty()) cfg.seeds = ov.seeds;
  if (ov.workers > 0) cfg.trainer.workers = ov.workers;
  if (!ov.out.empty()) cfg.out_dir = ov.out;
  if (ov.total_steps > 0) cfg.trainer.total_steps = ov.total_steps;
  if (cfg.mode == RunMode::kBaseline) cfg.network.variance_branch_enabled = false;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Actor-critic training lab with reward-variance estimation"};
  app.require_subcommand(1);

  Overrides ov;
  std::string config_path;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config JSON")->required();
    cmd->add_option("--mode", ov.mode, "variance|baseline|both");
    cmd->add_option("--sigma2", ov.sigma2, "reward noise variance");
    cmd->add_option("--seeds", ov.seeds, "seed list");
    cmd->add_option("--workers", ov.workers, "worker thread count");
    cmd->add_option("--out", ov.out, "output directory");
    cmd->add_option("--steps", ov.total_steps, "total env-step budget");
  };

  auto* train_cmd = app.add_subcommand("train", "train every (seed, mode) cell");
  add_common(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd);
  std::string ckpt_path;
  int eval_episodes = 10;
  bool eval_sampling = false;
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "episodes to run");
  eval_cmd->add_flag("--sampling", eval_sampling, "sample instead of greedy");

  auto* agg_cmd = app.add_subcommand("aggregate", "align eval CSVs into a curve bundle");
  std::vector<std::string> agg_inputs;
  std::string agg_out = "bundle.csv";
  agg_cmd->add_option("--inputs", agg_inputs, "eval CSV files")->required();
  agg_cmd->add_option("--out", agg_out, "bundle CSV output");

  auto* map_cmd = app.add_subcommand("export-map", "dump a branch feature map");
  add_common(map_cmd);
  std::string map_ckpt, map_which = "value", map_out = "map";
  bool map_overlay = false;
  uint64_t map_env_seed = 0;
  int map_env_steps = 0;
  map_cmd->add_option("--checkpoint", map_ckpt, "checkpoint file")->required();
  map_cmd->add_option("--which", map_which, "value|variance");
  map_cmd->add_option("--map-out", map_out, "output path stem");
  map_cmd->add_flag("--overlay", map_overlay, "also write obs overlay");
  map_cmd->add_option("--env-seed", map_env_seed, "probe episode seed");
  map_cmd->add_option("--env-steps", map_env_steps, "random steps before probing");

  auto* cmp_cmd = app.add_subcommand("compare", "convergence-speed comparison");
  std::string cmp_a, cmp_b, cmp_out = "compare.csv";
  double cmp_threshold = 0.8;
  cmp_cmd->add_option("--a", cmp_a, "curve bundle A (proposed)")->required();
  cmp_cmd->add_option("--b", cmp_b, "curve bundle B (baseline)")->required();
  cmp_cmd->add_option("--threshold", cmp_threshold, "score threshold");
  cmp_cmd->add_option("--out", cmp_out, "summary CSV output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      RunConfig cfg;
      try {
        cfg = load_config(config_path, ov);
      } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
      }
      auto res = run_experiment(cfg);
      std::cout << "wrote " << res.artifacts.size() << " artifacts; manifest: "
                << res.manifest_path << "\n";
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      RunConfig cfg;
      try {
        cfg = load_config(config_path, ov);
      } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
      }
      RunMode cell = cfg.mode == RunMode::kBoth ? RunMode::kVariance : cfg.mode;
      AbnNet net(cfg.resolved_network(cell), cfg.seeds.front());
      uint64_t stored = load_checkpoint(ckpt_path, net);
      if (stored != cfg.hash()) {
        std::cerr << "config error: checkpoint hash mismatch (checkpoint "
                  << std::hex << stored << ", config " << cfg.hash() << ")\n";
        return kExitConfigError;
      }
      auto env = cfg.build_env(false);
      auto rets = evaluate(net, *env, eval_episodes, !eval_sampling,
                           cfg.seeds.front());
      real mean = 0.0;
      for (real r : rets) mean += r;
      mean /= static_cast<real>(rets.size());
      std::cout << "episodes," << rets.size() << "\nmean_return," << mean << "\n";
      for (size_t i = 0; i < rets.size(); ++i)
        std::cout << "episode_" << i << "," << rets[i] << "\n";
      return kExitOk;
    }

    if (agg_cmd->parsed()) {
      std::vector<ScoreSeries> series;
      for (const auto& p : agg_inputs) {
        try {
          auto s = parse_eval_csv(read_file(p), fs::path(p).stem().string());
          if (s.points.empty()) {
            std::cerr << "warning: skipping empty series " << p << "\n";
            continue;
          }
          series.push_back(std::move(s));
        } catch (const std::exception& e) {
          std::cerr << "warning: skipping " << p << ": " << e.what() << "\n";
        }
      }
      if (series.empty()) {
        std::cerr << "error: no usable input series\n";
        return kExitRuntimeError;
      }
      write_file(agg_out, curve_bundle_csv(aggregate_curves(series)));
      std::cout << "wrote " << agg_out << "\n";
      return kExitOk;
    }

    if (map_cmd->parsed()) {
      RunConfig cfg;
      try {
        cfg = load_config(config_path, ov);
      } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
      }
      RunMode cell = cfg.mode == RunMode::kBoth ? RunMode::kVariance : cfg.mode;
      AbnNet net(cfg.resolved_network(cell), cfg.seeds.front());
      load_checkpoint(map_ckpt, net);
      auto env = cfg.build_env(false);
      env->seed(map_env_seed);
      Tensor obs = env->reset();
      std::mt19937_64 rng(map_env_seed + 1);
      for (int i = 0; i < map_env_steps; ++i) {
        auto s = env->step(static_cast<int>(
            rng() % static_cast<uint64_t>(env->num_actions())));
        obs = s.obs;
        if (s.terminal) obs = env->reset();
      }
      MapKind which = map_which == "variance" ? MapKind::kVariance : MapKind::kValue;
      auto e = export_feature_map(net, obs, which);
      write_file(map_out + ".pgm", feature_map_pgm(e));
      write_file(map_out + ".csv", feature_map_csv(e));
      if (map_overlay)
        write_file(map_out + "_overlay.pgm", feature_map_overlay_pgm(e, obs));
      std::cout << "wrote " << map_out << ".pgm / .csv\n";
      return kExitOk;
    }

    if (cmp_cmd->parsed()) {
      auto a = parse_curve_bundle_csv(read_file(cmp_a));
      auto b = parse_curve_bundle_csv(read_file(cmp_b));
      auto rep = compare_report(a, b, cmp_threshold);
      write_file(cmp_out, compare_report_csv(rep, cmp_threshold));
      std::cout << compare_report_csv(rep, cmp_threshold);
      if (rep.a.censored && rep.b.censored) return kExitCensoredOnly;
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
  return kExitOk;
}
