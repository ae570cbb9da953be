#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rlab/tensor.hpp"

namespace rlab {

// Trainable tensors, registered once each in creation order.  The order is
// the contract between a worker model and the shared global store.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, std::vector<int> shape);
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<Tensor> tensors() const;
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Uniform in +-1/sqrt(fan_in); the stream is derived from (seed, name) so a
// tensor's init does not depend on which other tensors exist in the model.
void init_uniform_fanin(Tensor t, int fan_in, uint64_t seed,
                        const std::string& name);

struct Dense {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  static Dense create(ParamRegistry& reg, const std::string& name, int in,
                      int out, uint64_t seed);
  Tensor forward(const Tensor& x) const;  // [batch,in] -> [batch,out]
};

struct Conv2d {
  Tensor weight;  // [out_ch, in_ch, kh, kw]
  Tensor bias;    // [out_ch]
  int stride = 1;
  int pad = 0;
  static Conv2d create(ParamRegistry& reg, const std::string& name, int in_ch,
                       int out_ch, int kernel, int stride, int pad,
                       uint64_t seed);
  Tensor forward(const Tensor& x) const;  // [n,c,h,w] -> [n,c',h',w']
  static int out_extent(int in, int kernel, int stride, int pad);
};

enum class BnMode { kTrain, kEval };

struct BatchNorm {
  Tensor gamma;  // [ch]
  Tensor beta;   // [ch]
  // Running stats are per-worker buffers, not shared parameters.
  std::vector<real> running_mean;
  std::vector<real> running_var;
  real momentum = 0.99;
  real epsilon = 1e-5;
  static BatchNorm create(ParamRegistry& reg, const std::string& name, int ch,
                          uint64_t seed);
  // Per-channel statistics over (batch, h, w).  Train mode also updates the
  // running stats.
  Tensor forward(const Tensor& x, BnMode mode);
};

struct LstmCell {
  Tensor w_ih;  // [4*hidden, in]   gate order: i, f, g, o
  Tensor w_hh;  // [4*hidden, hidden]
  Tensor bias;  // [4*hidden]
  int hidden = 0;
  static LstmCell create(ParamRegistry& reg, const std::string& name, int in,
                         int hidden, uint64_t seed);
  // x:[1,in], h/c:[1,hidden] -> (h',c')
  std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h,
                                 const Tensor& c) const;
};

}  // namespace rlab
