#include "rlab/layers.hpp"

#include <cmath>
#include <random>

namespace rlab {

namespace {

uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

Tensor ParamRegistry::add(const std::string& name, std::vector<int> shape) {
  for (const auto& [n, t] : entries_)
    if (n == name) throw ContractViolation("parameter registered twice: " + name);
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  entries_.emplace_back(name, t);
  return t;
}

std::vector<Tensor> ParamRegistry::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.push_back(t);
  return out;
}

void ParamRegistry::zero_grads() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

void init_uniform_fanin(Tensor t, int fan_in, uint64_t seed,
                        const std::string& name) {
  std::mt19937_64 rng(fnv1a64(name, seed ^ 0xcbf29ce484222325ull));
  real bound = 1.0 / std::sqrt(static_cast<real>(fan_in > 0 ? fan_in : 1));
  std::uniform_real_distribution<real> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
}

// --- dense -----------------------------------------------------------------

Dense Dense::create(ParamRegistry& reg, const std::string& name, int in,
                    int out, uint64_t seed) {
  Dense d;
  d.weight = reg.add(name + ".w", {in, out});
  d.bias = reg.add(name + ".b", {out});
  init_uniform_fanin(d.weight, in, seed, name + ".w");
  init_uniform_fanin(d.bias, in, seed, name + ".b");
  return d;
}

Tensor Dense::forward(const Tensor& x) const {
  if (x.ndim() != 2 || x.dim(1) != weight.dim(0))
    throw ContractViolation("dense: input extent mismatch");
  const int b = x.dim(0), in = weight.dim(0), out = weight.dim(1);
  std::vector<real> y(static_cast<size_t>(b) * out);
  for (int r = 0; r < b; ++r)
    for (int o = 0; o < out; ++o) {
      real acc = bias.data()[o];
      for (int i = 0; i < in; ++i)
        acc += x.data()[static_cast<size_t>(r) * in + i] *
               weight.data()[static_cast<size_t>(i) * out + o];
      y[static_cast<size_t>(r) * out + o] = acc;
    }
  auto xi = x.impl_ptr(), wi = weight.impl_ptr(), bi = bias.impl_ptr();
  return make_op_node({b, out}, std::move(y), {x, weight, bias},
                      [xi, wi, bi, b, in, out](TensorImpl& self) {
                        auto& gx = xi->ensure_grad();
                        auto& gw = wi->ensure_grad();
                        auto& gb = bi->ensure_grad();
                        for (int r = 0; r < b; ++r)
                          for (int o = 0; o < out; ++o) {
                            real up = self.grad[static_cast<size_t>(r) * out + o];
                            if (up == 0.0) continue;
                            gb[o] += up;
                            for (int i = 0; i < in; ++i) {
                              gx[static_cast<size_t>(r) * in + i] +=
                                  up * wi->val[static_cast<size_t>(i) * out + o];
                              gw[static_cast<size_t>(i) * out + o] +=
                                  up * xi->val[static_cast<size_t>(r) * in + i];
                            }
                          }
                      });
}

// --- conv2d ----------------------------------------------------------------

int Conv2d::out_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

Conv2d Conv2d::create(ParamRegistry& reg, const std::string& name, int in_ch,
                      int out_ch, int kernel, int stride, int pad,
                      uint64_t seed) {
  Conv2d c;
  c.weight = reg.add(name + ".w", {out_ch, in_ch, kernel, kernel});
  c.bias = reg.add(name + ".b", {out_ch});
  c.stride = stride;
  c.pad = pad;
  int fan_in = in_ch * kernel * kernel;
  init_uniform_fanin(c.weight, fan_in, seed, name + ".w");
  init_uniform_fanin(c.bias, fan_in, seed, name + ".b");
  return c;
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.ndim() != 4 || x.dim(1) != weight.dim(1))
    throw ContractViolation("conv2d: channel mismatch");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = weight.dim(0), k = weight.dim(2);
  const int ho = out_extent(h, k, stride, pad);
  const int wo = out_extent(w, k, stride, pad);
  if (ho <= 0 || wo <= 0)
    throw ContractViolation("conv2d: kernel larger than padded input");

  auto xat = [&](const std::vector<real>& v, int b, int c, int y_, int x_) {
    return v[((static_cast<size_t>(b) * ci + c) * h + y_) * w + x_];
  };
  std::vector<real> y(static_cast<size_t>(n) * co * ho * wo);
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          real acc = bias.data()[oc];
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < k; ++ky) {
              int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= w) continue;
                acc += xat(x.data(), b, ic, iy, ix) *
                       weight.data()[((static_cast<size_t>(oc) * ci + ic) * k + ky) * k + kx];
              }
            }
          y[((static_cast<size_t>(b) * co + oc) * ho + oy) * wo + ox] = acc;
        }

  auto xi = x.impl_ptr(), wi = weight.impl_ptr(), bi = bias.impl_ptr();
  int stride_ = stride, pad_ = pad;
  return make_op_node(
      {n, co, ho, wo}, std::move(y), {x, weight, bias},
      [xi, wi, bi, n, ci, h, w, co, k, ho, wo, stride_, pad_](TensorImpl& self) {
        auto& gx = xi->ensure_grad();
        auto& gw = wi->ensure_grad();
        auto& gb = bi->ensure_grad();
        for (int b = 0; b < n; ++b)
          for (int oc = 0; oc < co; ++oc)
            for (int oy = 0; oy < ho; ++oy)
              for (int ox = 0; ox < wo; ++ox) {
                real up = self.grad[((static_cast<size_t>(b) * co + oc) * ho + oy) * wo + ox];
                if (up == 0.0) continue;
                gb[oc] += up;
                for (int ic = 0; ic < ci; ++ic)
                  for (int ky = 0; ky < k; ++ky) {
                    int iy = oy * stride_ + ky - pad_;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                      int ix = ox * stride_ + kx - pad_;
                      if (ix < 0 || ix >= w) continue;
                      size_t xidx = ((static_cast<size_t>(b) * ci + ic) * h + iy) * w + ix;
                      size_t widx = ((static_cast<size_t>(oc) * ci + ic) * k + ky) * k + kx;
                      gx[xidx] += up * wi->val[widx];
                      gw[widx] += up * xi->val[xidx];
                    }
                  }
              }
      });
}

// --- batchnorm -------------------------------------------------------------

BatchNorm BatchNorm::create(ParamRegistry& reg, const std::string& name, int ch,
                            uint64_t seed) {
  (void)seed;
  BatchNorm bn;
  bn.gamma = reg.add(name + ".gamma", {ch});
  bn.beta = reg.add(name + ".beta", {ch});
  for (auto& v : bn.gamma.data()) v = 1.0;
  bn.running_mean.assign(static_cast<size_t>(ch), 0.0);
  bn.running_var.assign(static_cast<size_t>(ch), 1.0);
  return bn;
}

Tensor BatchNorm::forward(const Tensor& x, BnMode mode) {
  if (x.ndim() != 4 || x.dim(1) != gamma.dim(0))
    throw ContractViolation("batchnorm: channel mismatch");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const size_t per_ch = static_cast<size_t>(n) * hw;
  const real eps = epsilon;

  std::vector<real> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
  if (mode == BnMode::kTrain) {
    for (int ch = 0; ch < c; ++ch) {
      real m = 0.0;
      for (int b = 0; b < n; ++b) {
        const real* p = &x.data()[(static_cast<size_t>(b) * c + ch) * hw];
        for (int j = 0; j < hw; ++j) m += p[j];
      }
      m /= static_cast<real>(per_ch);
      real v = 0.0;
      for (int b = 0; b < n; ++b) {
        const real* p = &x.data()[(static_cast<size_t>(b) * c + ch) * hw];
        for (int j = 0; j < hw; ++j) v += (p[j] - m) * (p[j] - m);
      }
      v /= static_cast<real>(per_ch);
      mean[ch] = m;
      var[ch] = v;
      running_mean[ch] = momentum * running_mean[ch] + (1 - momentum) * m;
      running_var[ch] = momentum * running_var[ch] + (1 - momentum) * v;
    }
  } else {
    mean = running_mean;
    var = running_var;
  }

  std::vector<real> y(x.numel());
  std::vector<real> xhat(x.numel());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      real inv = 1.0 / std::sqrt(var[ch] + eps);
      const real* p = &x.data()[(static_cast<size_t>(b) * c + ch) * hw];
      real* xh = &xhat[(static_cast<size_t>(b) * c + ch) * hw];
      real* yo = &y[(static_cast<size_t>(b) * c + ch) * hw];
      for (int j = 0; j < hw; ++j) {
        xh[j] = (p[j] - mean[ch]) * inv;
        yo[j] = gamma.data()[ch] * xh[j] + beta.data()[ch];
      }
    }

  auto xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr();
  bool train = mode == BnMode::kTrain;
  auto xhat_p = std::make_shared<std::vector<real>>(std::move(xhat));
  auto var_p = std::make_shared<std::vector<real>>(var);
  return make_op_node(
      x.shape(), std::move(y), {x, gamma, beta},
      [xi, gi, bi, n, c, hw, eps, train, xhat_p, var_p](TensorImpl& self) {
        auto& gx = xi->ensure_grad();
        auto& gg = gi->ensure_grad();
        auto& gb = bi->ensure_grad();
        const size_t per_ch = static_cast<size_t>(n) * hw;
        for (int ch = 0; ch < c; ++ch) {
          real inv = 1.0 / std::sqrt((*var_p)[ch] + eps);
          real sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int b = 0; b < n; ++b) {
            const real* dy = &self.grad[(static_cast<size_t>(b) * c + ch) * hw];
            const real* xh = &(*xhat_p)[(static_cast<size_t>(b) * c + ch) * hw];
            for (int j = 0; j < hw; ++j) {
              sum_dy += dy[j];
              sum_dy_xhat += dy[j] * xh[j];
            }
          }
          gg[ch] += sum_dy_xhat;
          gb[ch] += sum_dy;
          real gam = gi->val[ch];
          for (int b = 0; b < n; ++b) {
            const real* dy = &self.grad[(static_cast<size_t>(b) * c + ch) * hw];
            const real* xh = &(*xhat_p)[(static_cast<size_t>(b) * c + ch) * hw];
            real* dx = &gx[(static_cast<size_t>(b) * c + ch) * hw];
            for (int j = 0; j < hw; ++j) {
              if (train) {
                dx[j] += gam * inv *
                         (dy[j] - sum_dy / per_ch - xh[j] * sum_dy_xhat / per_ch);
              } else {
                dx[j] += gam * inv * dy[j];
              }
            }
          }
        }
      });
}

// --- lstm ------------------------------------------------------------------

LstmCell LstmCell::create(ParamRegistry& reg, const std::string& name, int in,
                          int hidden, uint64_t seed) {
  LstmCell l;
  l.w_ih = reg.add(name + ".w_ih", {4 * hidden, in});
  l.w_hh = reg.add(name + ".w_hh", {4 * hidden, hidden});
  l.bias = reg.add(name + ".b", {4 * hidden});
  l.hidden = hidden;
  init_uniform_fanin(l.w_ih, in + hidden, seed, name + ".w_ih");
  init_uniform_fanin(l.w_hh, in + hidden, seed, name + ".w_hh");
  init_uniform_fanin(l.bias, in + hidden, seed, name + ".b");
  return l;
}

std::pair<Tensor, Tensor> LstmCell::step(const Tensor& x, const Tensor& h,
                                         const Tensor& c) const {
  const int in = w_ih.dim(1), hid = hidden;
  if (x.ndim() != 2 || x.dim(0) != 1 || x.dim(1) != in)
    throw ContractViolation("lstm: input extent mismatch");
  if (h.numel() != static_cast<size_t>(hid) || c.numel() != static_cast<size_t>(hid))
    throw ContractViolation("lstm: state extent mismatch");

  auto sigmoid = [](real z) { return 1.0 / (1.0 + std::exp(-z)); };
  // gate pre-activations: [i f g o] stacked
  std::vector<real> gates(static_cast<size_t>(4) * hid);
  for (int r = 0; r < 4 * hid; ++r) {
    real acc = bias.data()[r];
    for (int i = 0; i < in; ++i)
      acc += w_ih.data()[static_cast<size_t>(r) * in + i] * x.data()[i];
    for (int j = 0; j < hid; ++j)
      acc += w_hh.data()[static_cast<size_t>(r) * hid + j] * h.data()[j];
    gates[static_cast<size_t>(r)] = acc;
  }
  std::vector<real> ig(hid), fg(hid), gg(hid), og(hid), cn(hid), hn(hid);
  for (int j = 0; j < hid; ++j) {
    ig[j] = sigmoid(gates[j]);
    fg[j] = sigmoid(gates[hid + j]);
    gg[j] = std::tanh(gates[2 * hid + j]);
    og[j] = sigmoid(gates[3 * hid + j]);
    cn[j] = fg[j] * c.data()[j] + ig[j] * gg[j];
    hn[j] = og[j] * std::tanh(cn[j]);
  }

  auto saved = std::make_shared<std::vector<std::vector<real>>>();
  saved->push_back(ig);
  saved->push_back(fg);
  saved->push_back(gg);
  saved->push_back(og);
  saved->push_back(cn);

  auto xi = x.impl_ptr(), hi = h.impl_ptr(), ci = c.impl_ptr();
  auto wih = w_ih.impl_ptr(), whh = w_hh.impl_ptr(), bi = bias.impl_ptr();

  // c' is produced first; h' = o * tanh(c') hangs off it so the tape reaches
  // both outputs through a shared node.
  Tensor c_new = make_op_node(
      {1, hid}, std::move(cn), {x, h, c, w_ih, w_hh, bias},
      [xi, hi, ci, wih, whh, bi, in, hid, saved](TensorImpl& self) {
        const auto& ig = (*saved)[0];
        const auto& fg = (*saved)[1];
        const auto& gg = (*saved)[2];
        // self.grad is dL/dc' with the h'-path contribution already folded in
        // by the h' node below.
        auto& gx = xi->ensure_grad();
        auto& gh = hi->ensure_grad();
        auto& gc = ci->ensure_grad();
        auto& gwih = wih->ensure_grad();
        auto& gwhh = whh->ensure_grad();
        auto& gb = bi->ensure_grad();
        for (int j = 0; j < hid; ++j) {
          real dc = self.grad[j];
          gc[j] += dc * fg[j];
          real di = dc * gg[j] * ig[j] * (1 - ig[j]);
          real df = dc * ci->val[j] * fg[j] * (1 - fg[j]);
          real dg = dc * ig[j] * (1 - gg[j] * gg[j]);
          real rows[3] = {di, df, dg};
          int base[3] = {j, hid + j, 2 * hid + j};
          for (int t = 0; t < 3; ++t) {
            int r = base[t];
            real dz = rows[t];
            if (dz == 0.0) continue;
            gb[r] += dz;
            for (int i = 0; i < in; ++i) {
              gwih[static_cast<size_t>(r) * in + i] += dz * xi->val[i];
              gx[i] += dz * wih->val[static_cast<size_t>(r) * in + i];
            }
            for (int k = 0; k < hid; ++k) {
              gwhh[static_cast<size_t>(r) * hid + k] += dz * hi->val[k];
              gh[k] += dz * whh->val[static_cast<size_t>(r) * hid + k];
            }
          }
        }
      });

  Tensor h_new = make_op_node(
      {1, hid}, std::move(hn), {c_new, x, h, w_ih, w_hh, bias},
      [xi, hi, wih, whh, bi, in, hid, saved,
       cni = c_new.impl_ptr()](TensorImpl& self) {
        const auto& og = (*saved)[3];
        const auto& cn = (*saved)[4];
        auto& gx = xi->ensure_grad();
        auto& gh = hi->ensure_grad();
        auto& gwih = wih->ensure_grad();
        auto& gwhh = whh->ensure_grad();
        auto& gb = bi->ensure_grad();
        auto& gcn = cni->ensure_grad();
        for (int j = 0; j < hid; ++j) {
          real dh = self.grad[j];
          if (dh == 0.0) continue;
          real tc = std::tanh(cn[j]);
          gcn[j] += dh * og[j] * (1 - tc * tc);
          real dz = dh * tc * og[j] * (1 - og[j]);  // output gate row
          int r = 3 * hid + j;
          gb[r] += dz;
          for (int i = 0; i < in; ++i) {
            gwih[static_cast<size_t>(r) * in + i] += dz * xi->val[i];
            gx[i] += dz * wih->val[static_cast<size_t>(r) * in + i];
          }
          for (int k = 0; k < hid; ++k) {
            gwhh[static_cast<size_t>(r) * hid + k] += dz * hi->val[k];
            gh[k] += dz * whh->val[static_cast<size_t>(r) * hid + k];
          }
        }
      });

  return {h_new, c_new};
}

}  // namespace rlab
