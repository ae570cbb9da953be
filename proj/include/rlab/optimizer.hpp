#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "rlab/layers.hpp"
#include "rlab/tensor.hpp"

namespace rlab {

struct RmspropConfig {
  real learning_rate = 7e-4;
  real decay = 0.99;  // alpha, EMA decay of the squared gradient
  real epsilon = 1e-8;
  real max_grad_norm = 40.0;  // <= 0 disables clipping
};

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm; direction is preserved exactly.
real clip_gradients(std::vector<std::vector<real>*> grads, real max_norm);

// Globally shared parameter values plus the shared RMSprop second-moment
// EMA.  Each tensor carries its own lock: snapshot reads and updates are
// per-tensor atomic, workers may interleave between tensors.
class GlobalParams {
 public:
  explicit GlobalParams(const ParamRegistry& reg, RmspropConfig opt);

  size_t tensor_count() const { return entries_.size(); }
  const RmspropConfig& optimizer() const { return opt_; }

  // Copies the shared values into the registry's tensors (same order as
  // construction).  Returns the store version at snapshot time.
  uint64_t snapshot_into(ParamRegistry& reg) const;

  // v <- a*v + (1-a)*g^2 ; p <- p - lr * g / (sqrt(v) + eps), per tensor
  // under that tensor's lock.  A non-finite gradient rejects the whole
  // update (counted, nothing partially applied).  Returns false on reject.
  bool apply_gradients(const ParamRegistry& reg);

  uint64_t version() const { return version_.load(std::memory_order_acquire); }
  uint64_t rejected_updates() const { return rejected_.load(); }

  std::atomic<uint64_t> global_step{0};

  // test/telemetry access
  std::vector<real> tensor_values(size_t i) const;
  std::vector<real> second_moment(size_t i) const;
  const std::string& tensor_name(size_t i) const { return entries_[i]->name; }
  const std::vector<int>& tensor_shape(size_t i) const { return entries_[i]->shape; }

 private:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<real> value;
    std::vector<real> v;  // squared-gradient EMA, >= 0 elementwise
    mutable std::mutex m;
  };
  std::vector<std::unique_ptr<Entry>> entries_;
  RmspropConfig opt_;
  std::atomic<uint64_t> version_{0};
  std::atomic<uint64_t> rejected_{0};
};

}  // namespace rlab
