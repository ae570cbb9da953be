#include "rlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

namespace rlab {

namespace {

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw ContractViolation("tensor extent must be positive");
    n *= static_cast<size_t>(e);
  }
  return n;
}

TensorImplPtr make_impl(std::vector<int> shape, std::vector<real> val,
                        bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->val = std::move(val);
  impl->requires_grad = requires_grad;
  if (impl->val.size() != shape_numel(impl->shape))
    throw ContractViolation("tensor data length does not match shape");
  return impl;
}

bool track(const Tensor& t) {
  return t.requires_grad() || t.impl()->backward_fn != nullptr ||
         !t.impl()->parents.empty();
}

}  // namespace

Tensor make_op_node(std::vector<int> shape, std::vector<real> val,
                    std::vector<Tensor> parents,
                    std::function<void(TensorImpl&)> bw) {
  auto impl = make_impl(std::move(shape), std::move(val), false);
  bool any = false;
  for (const auto& p : parents) any = any || track(p);
  if (any) {
    for (auto& p : parents) impl->parents.push_back(p.impl_ptr());
    impl->backward_fn = std::move(bw);
  }
  return Tensor(impl);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  size_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<real>(n, 0.0),
                          requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, real value, bool requires_grad) {
  size_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<real>(n, value),
                          requires_grad));
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<real> values,
                           bool requires_grad) {
  return Tensor(make_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
size_t Tensor::numel() const { return impl_->numel(); }
std::vector<real>& Tensor::data() { return impl_->val; }
const std::vector<real>& Tensor::data() const { return impl_->val; }

real Tensor::value() const {
  if (numel() != 1) throw ContractViolation("value() on non-scalar tensor");
  return impl_->val[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::has_grad() const { return impl_->grad.size() == impl_->val.size(); }
std::vector<real>& Tensor::grad() { return impl_->ensure_grad(); }
const std::vector<real>& Tensor::grad() const {
  if (!has_grad()) throw ContractViolation("grad not materialized");
  return impl_->grad;
}
void Tensor::zero_grad() { impl_->ensure_grad().assign(numel(), 0.0); }

Tensor Tensor::clone() const {
  return Tensor(make_impl(impl_->shape, impl_->val, impl_->requires_grad));
}

Tensor Tensor::detached() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->val = impl_->val;
  return Tensor(impl);
}

// --- backward --------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractViolation("backward expects a scalar loss");
  TensorImpl* root = loss.impl();
  if (root->backward_fn == nullptr && !root->requires_grad)
    throw ContractViolation("backward on untaped tensor");

  // Reverse topological order by iterative DFS.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl* p = node->parents[idx++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && node->grad.size() == node->val.size())
      node->backward_fn(*node);
  }
}

// --- elementwise -----------------------------------------------------------

Tensor relu(const Tensor& x) {
  std::vector<real> y(x.numel());
  const auto& xv = x.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0 ? xv[i] : 0.0;
  auto xi = x.impl_ptr();
  return make_op_node(x.shape(), std::move(y), {x}, [xi](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (xi->val[i] > 0) g[i] += self.grad[i];
  });
}

Tensor exp_op(const Tensor& x) {
  std::vector<real> y(x.numel());
  const auto& xv = x.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = std::exp(xv[i]);
  auto xi = x.impl_ptr();
  return make_op_node(x.shape(), std::move(y), {x}, [xi](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.val[i];
  });
}

Tensor clamp(const Tensor& x, real lo, real hi) {
  if (!(lo < hi)) throw ContractViolation("clamp requires lo < hi");
  std::vector<real> y(x.numel());
  const auto& xv = x.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = std::min(hi, std::max(lo, xv[i]));
  auto xi = x.impl_ptr();
  return make_op_node(x.shape(), std::move(y), {x}, [xi, lo, hi](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (xi->val[i] > lo && xi->val[i] < hi) g[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ContractViolation("add: shape mismatch");
  std::vector<real> y(a.numel());
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_op_node(a.shape(), std::move(y), {a, b}, [ai, bi](TensorImpl& self) {
    auto& ga = ai->ensure_grad();
    auto& gb = bi->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i];
      gb[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ContractViolation("mul: shape mismatch");
  std::vector<real> y(a.numel());
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_op_node(a.shape(), std::move(y), {a, b}, [ai, bi](TensorImpl& self) {
    auto& ga = ai->ensure_grad();
    auto& gb = bi->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * bi->val[i];
      gb[i] += self.grad[i] * ai->val[i];
    }
  });
}

Tensor scale(const Tensor& x, real c) {
  std::vector<real> y(x.numel());
  for (size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * c;
  auto xi = x.impl_ptr();
  return make_op_node(x.shape(), std::move(y), {x}, [xi, c](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

Tensor add_scalar(const Tensor& x, real c) {
  std::vector<real> y(x.numel());
  for (size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] + c;
  auto xi = x.impl_ptr();
  return make_op_node(x.shape(), std::move(y), {x}, [xi](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  real s = 0.0;
  for (real v : x.data()) s += v;
  auto xi = x.impl_ptr();
  return make_op_node({1}, {s}, {x}, [xi](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<real>(x.numel()));
}

Tensor weighted_sum(const std::vector<Tensor>& terms,
                    const std::vector<real>& coeffs) {
  if (terms.size() != coeffs.size() || terms.empty())
    throw ContractViolation("weighted_sum: term/coeff mismatch");
  real s = 0.0;
  for (size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].numel() != 1)
      throw ContractViolation("weighted_sum expects scalars");
    s += coeffs[i] * terms[i].value();
  }
  std::vector<TensorImplPtr> impls;
  for (const auto& t : terms) impls.push_back(t.impl_ptr());
  return make_op_node({1}, {s}, terms, [impls, coeffs](TensorImpl& self) {
    for (size_t i = 0; i < impls.size(); ++i)
      impls[i]->ensure_grad()[0] += self.grad[0] * coeffs[i];
  });
}

// --- softmax family --------------------------------------------------------

namespace {
void check_2d(const Tensor& t, const char* what) {
  if (t.ndim() != 2) throw ContractViolation(std::string(what) + ": expects [batch,n]");
}
}  // namespace

Tensor softmax(const Tensor& logits) {
  check_2d(logits, "softmax");
  const int b = logits.dim(0), n = logits.dim(1);
  std::vector<real> y(logits.numel());
  const auto& z = logits.data();
  for (int r = 0; r < b; ++r) {
    const real* zr = &z[static_cast<size_t>(r) * n];
    real m = *std::max_element(zr, zr + n);
    real denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(zr[j] - m);
    for (int j = 0; j < n; ++j)
      y[static_cast<size_t>(r) * n + j] = std::exp(zr[j] - m) / denom;
  }
  auto zi = logits.impl_ptr();
  return make_op_node(logits.shape(), std::move(y), {logits},
                   [zi, b, n](TensorImpl& self) {
                     auto& g = zi->ensure_grad();
                     for (int r = 0; r < b; ++r) {
                       const real* p = &self.val[static_cast<size_t>(r) * n];
                       const real* up = &self.grad[static_cast<size_t>(r) * n];
                       real dot = 0.0;
                       for (int j = 0; j < n; ++j) dot += up[j] * p[j];
                       for (int j = 0; j < n; ++j)
                         g[static_cast<size_t>(r) * n + j] += p[j] * (up[j] - dot);
                     }
                   });
}

Tensor log_softmax(const Tensor& logits) {
  check_2d(logits, "log_softmax");
  const int b = logits.dim(0), n = logits.dim(1);
  std::vector<real> y(logits.numel());
  const auto& z = logits.data();
  for (int r = 0; r < b; ++r) {
    const real* zr = &z[static_cast<size_t>(r) * n];
    real m = *std::max_element(zr, zr + n);
    real denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(zr[j] - m);
    real lse = m + std::log(denom);
    for (int j = 0; j < n; ++j) y[static_cast<size_t>(r) * n + j] = zr[j] - lse;
  }
  auto zi = logits.impl_ptr();
  return make_op_node(logits.shape(), std::move(y), {logits},
                   [zi, b, n](TensorImpl& self) {
                     auto& g = zi->ensure_grad();
                     for (int r = 0; r < b; ++r) {
                       const real* ls = &self.val[static_cast<size_t>(r) * n];
                       const real* up = &self.grad[static_cast<size_t>(r) * n];
                       real usum = 0.0;
                       for (int j = 0; j < n; ++j) usum += up[j];
                       for (int j = 0; j < n; ++j)
                         g[static_cast<size_t>(r) * n + j] +=
                             up[j] - std::exp(ls[j]) * usum;
                     }
                   });
}

// --- pooling ---------------------------------------------------------------

namespace {
void check_map(const Tensor& x, const char* what) {
  if (x.ndim() != 4 || x.dim(1) != 1)
    throw ContractViolation(std::string(what) + ": expects [n,1,h,w]");
}
}  // namespace

Tensor global_max_pool(const Tensor& x) {
  check_map(x, "global_max_pool");
  const int n = x.dim(0);
  const int hw = x.dim(2) * x.dim(3);
  std::vector<real> y(static_cast<size_t>(n));
  std::vector<int> argmax(static_cast<size_t>(n));
  for (int r = 0; r < n; ++r) {
    const real* m = &x.data()[static_cast<size_t>(r) * hw];
    int best = 0;
    // ties resolve to the first maximal element in row-major order
    for (int j = 1; j < hw; ++j)
      if (m[j] > m[best]) best = j;
    argmax[static_cast<size_t>(r)] = best;
    y[static_cast<size_t>(r)] = m[best];
  }
  auto xi = x.impl_ptr();
  return make_op_node({n, 1}, std::move(y), {x},
                   [xi, hw, argmax](TensorImpl& self) {
                     auto& g = xi->ensure_grad();
                     for (size_t r = 0; r < self.grad.size(); ++r)
                       g[r * hw + argmax[r]] += self.grad[r];
                   });
}

Tensor global_avg_pool(const Tensor& x) {
  check_map(x, "global_avg_pool");
  const int n = x.dim(0);
  const int hw = x.dim(2) * x.dim(3);
  std::vector<real> y(static_cast<size_t>(n));
  for (int r = 0; r < n; ++r) {
    real s = 0.0;
    const real* m = &x.data()[static_cast<size_t>(r) * hw];
    for (int j = 0; j < hw; ++j) s += m[j];
    y[static_cast<size_t>(r)] = s / hw;
  }
  auto xi = x.impl_ptr();
  return make_op_node({n, 1}, std::move(y), {x}, [xi, hw](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    const real inv = 1.0 / hw;
    for (size_t r = 0; r < self.grad.size(); ++r)
      for (int j = 0; j < hw; ++j) g[r * hw + j] += self.grad[r] * inv;
  });
}

// --- composition / shaping -------------------------------------------------

Tensor attention_compose(const Tensor& f, const Tensor& g) {
  if (f.ndim() != 4 || g.ndim() != 4 || f.dim(1) != 1 || f.dim(0) != g.dim(0) ||
      f.dim(2) != g.dim(2) || f.dim(3) != g.dim(3))
    throw ContractViolation("attention_compose: spatial mismatch");
  const int n = g.dim(0), c = g.dim(1), hw = g.dim(2) * g.dim(3);
  std::vector<real> y(g.numel());
  for (int r = 0; r < n; ++r)
    for (int ch = 0; ch < c; ++ch)
      for (int j = 0; j < hw; ++j) {
        size_t gi = (static_cast<size_t>(r) * c + ch) * hw + j;
        size_t fi = static_cast<size_t>(r) * hw + j;
        y[gi] = (1.0 + f.data()[fi]) * g.data()[gi];
      }
  auto fi_ = f.impl_ptr(), gi_ = g.impl_ptr();
  return make_op_node(g.shape(), std::move(y), {f, g},
                   [fi_, gi_, n, c, hw](TensorImpl& self) {
                     auto& gf = fi_->ensure_grad();
                     auto& gg = gi_->ensure_grad();
                     for (int r = 0; r < n; ++r)
                       for (int ch = 0; ch < c; ++ch)
                         for (int j = 0; j < hw; ++j) {
                           size_t gi = (static_cast<size_t>(r) * c + ch) * hw + j;
                           size_t fi = static_cast<size_t>(r) * hw + j;
                           gf[fi] += self.grad[gi] * gi_->val[gi];
                           gg[gi] += self.grad[gi] * (1.0 + fi_->val[fi]);
                         }
                   });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.numel())
    throw ContractViolation("reshape: element count mismatch");
  auto xi = x.impl_ptr();
  return make_op_node(std::move(shape), x.data(), {x}, [xi](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& x, int row_begin, int row_count) {
  if (x.ndim() < 1 || row_begin < 0 || row_count <= 0 ||
      row_begin + row_count > x.dim(0))
    throw ContractViolation("slice_rows: out of range");
  size_t stride = x.numel() / static_cast<size_t>(x.dim(0));
  std::vector<int> shape = x.shape();
  shape[0] = row_count;
  std::vector<real> y(stride * row_count);
  std::copy_n(x.data().begin() + stride * row_begin, y.size(), y.begin());
  auto xi = x.impl_ptr();
  size_t off = stride * row_begin;
  return make_op_node(std::move(shape), std::move(y), {x},
                   [xi, off](TensorImpl& self) {
                     auto& g = xi->ensure_grad();
                     for (size_t i = 0; i < self.grad.size(); ++i)
                       g[off + i] += self.grad[i];
                   });
}

Tensor concat_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ContractViolation("concat_rows: empty");
  std::vector<int> shape = rows[0].shape();
  size_t stride = rows[0].numel() / static_cast<size_t>(shape[0]);
  int total = 0;
  std::vector<real> y;
  for (const auto& r : rows) {
    auto s = r.shape();
    s[0] = shape[0];
    if (s != shape) throw ContractViolation("concat_rows: shape mismatch");
    total += r.dim(0);
    y.insert(y.end(), r.data().begin(), r.data().end());
  }
  shape[0] = total;
  std::vector<TensorImplPtr> impls;
  for (const auto& r : rows) impls.push_back(r.impl_ptr());
  return make_op_node(std::move(shape), std::move(y), rows,
                   [impls, stride](TensorImpl& self) {
                     size_t off = 0;
                     for (auto& p : impls) {
                       auto& g = p->ensure_grad();
                       for (size_t i = 0; i < g.size(); ++i)
                         g[i] += self.grad[off + i];
                       off += g.size();
                     }
                   });
}

// --- checks ----------------------------------------------------------------

bool all_finite(const Tensor& t) {
  for (real v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

void check_finite(const Tensor& t, const char* what) {
  if (!all_finite(t))
    throw ContractViolation(std::string("non-finite values in ") + what);
}

real gradient_check(const std::function<Tensor()>& f,
                    const std::vector<Tensor>& params, real eps,
                    int max_coords_per_tensor, uint64_t coord_seed,
                    real denom_floor) {
  if (!(eps > 0)) throw ContractViolation("gradient_check: eps must be > 0");
  for (auto p : params) p.zero_grad();
  Tensor loss = f();
  backward(loss);

  std::mt19937_64 rng(coord_seed);
  real worst = 0.0;
  for (auto p : params) {
    std::vector<size_t> coords;
    if (max_coords_per_tensor < 0 ||
        static_cast<size_t>(max_coords_per_tensor) >= p.numel()) {
      coords.resize(p.numel());
      for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      std::uniform_int_distribution<size_t> pick(0, p.numel() - 1);
      for (int i = 0; i < max_coords_per_tensor; ++i) coords.push_back(pick(rng));
    }
    for (size_t c : coords) {
      real saved = p.data()[c];
      p.data()[c] = saved + eps;
      real up = f().value();
      p.data()[c] = saved - eps;
      real down = f().value();
      p.data()[c] = saved;
      real numeric = (up - down) / (2 * eps);
      real analytic = p.grad()[c];
      real err = std::abs(analytic - numeric) /
                 std::max({std::abs(analytic), std::abs(numeric), denom_floor});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace rlab
