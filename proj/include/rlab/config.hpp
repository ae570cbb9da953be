#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rlab/envs.hpp"
#include "rlab/losses.hpp"
#include "rlab/model.hpp"
#include "rlab/optimizer.hpp"
#include "rlab/trainer.hpp"

namespace rlab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class RunMode { kVariance, kBaseline, kBoth };

struct EnvConfig {
  std::string name;  // catch | grid_collect | bandit | chain
  int width = 10;
  int height = 10;
  int pellets = 3;
  int step_limit = 40;
  real mu = 0.5;  // bandit mean reward
};

// Full experiment description; everything the CLI verbs need.
struct RunConfig {
  EnvConfig env;
  NoiseSpec noise;
  NetworkConfig network;
  TrainerConfig trainer;
  RmspropConfig optimizer;
  LossWeights loss;
  RunMode mode = RunMode::kVariance;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "runs/out";
  real score_threshold = 0.8;

  void validate() const;
  std::string canonical_json() const;
  uint64_t hash() const;  // FNV-1a over the canonical serialization

  std::unique_ptr<Env> build_env(bool with_noise) const;
  // Resolves network input extents and action count from the env.
  NetworkConfig resolved_network(RunMode cell_mode) const;
  LossWeights resolved_loss(RunMode cell_mode) const;
};

// Parses and validates a JSON run config.  Unknown keys and invalid values
// are rejected with descriptive errors.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);

std::string run_mode_name(RunMode m);
RunMode parse_run_mode(const std::string& s);

uint64_t fnv1a_hash(const std::string& s);

}  // namespace rlab
