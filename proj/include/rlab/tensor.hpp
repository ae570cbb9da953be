#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlab {

using real = double;

struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Dense row-major tensor with an optional gradient slot.  Copying a Tensor
// copies the handle, not the storage; clone() makes a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, real value,
                     bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<real> values,
                            bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const { return shape().at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape().size()); }
  size_t numel() const;

  std::vector<real>& data();
  const std::vector<real>& data() const;
  real value() const;  // scalar tensors only

  bool requires_grad() const;
  bool has_grad() const;
  std::vector<real>& grad();            // allocates on first access
  const std::vector<real>& grad() const;
  void zero_grad();

  Tensor clone() const;           // deep copy, detached from any graph
  Tensor detached() const;        // shares storage, drops graph and grad flag

  TensorImpl* impl() const { return impl_.get(); }
  const TensorImplPtr& impl_ptr() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

struct TensorImpl {
  std::vector<int> shape;
  std::vector<real> val;
  std::vector<real> grad;  // empty until touched
  bool requires_grad = false;

  // Reverse-mode tape: parents plus a rule that scatters this node's grad
  // into the parents' grads.
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;

  size_t numel() const { return val.size(); }
  std::vector<real>& ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    return grad;
  }
};

// --- graph ops -------------------------------------------------------------

// Builds a taped node; the hook for implementing differentiable ops outside
// this header.  The backward fn scatters self.grad into the parents' grads.
// The node is untaped when no parent carries a graph or grad flag.
Tensor make_op_node(std::vector<int> shape, std::vector<real> val,
                    std::vector<Tensor> parents,
                    std::function<void(TensorImpl&)> backward_fn);

// Seeds d(loss)=1 and propagates through the tape in reverse topological
// order.  Gradients accumulate additively; call zero-grad on parameters
// between updates.
void backward(const Tensor& loss);

Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& logits);      // [batch,n], rowwise
Tensor log_softmax(const Tensor& logits);  // [batch,n], rowwise
Tensor exp_op(const Tensor& x);
Tensor clamp(const Tensor& x, real lo, real hi);
Tensor global_max_pool(const Tensor& x);  // [n,1,h,w] -> [n,1]
Tensor global_avg_pool(const Tensor& x);  // [n,1,h,w] -> [n,1]
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real c);
Tensor add_scalar(const Tensor& x, real c);
Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);
// y = sum_i c_i * terms_i, all scalar tensors
Tensor weighted_sum(const std::vector<Tensor>& terms,
                    const std::vector<real>& coeffs);
// (1 + f) * g with f:[n,1,h,w] broadcast over g's channels [n,c,h,w]
Tensor attention_compose(const Tensor& f, const Tensor& g);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor slice_rows(const Tensor& x, int row_begin, int row_count);
Tensor concat_rows(const std::vector<Tensor>& rows);

// --- checks ----------------------------------------------------------------

bool all_finite(const Tensor& t);
void check_finite(const Tensor& t, const char* what);

// Central-difference check of d(f)/d(params).  Returns the worst relative
// error |a-n| / max(|a|,|n|,denom_floor) over every checked coordinate;
// coordinates below denom_floor in magnitude are compared on an absolute
// scale, which keeps the finite-difference noise floor out of the ratio.
// max_coords_per_tensor < 0 checks all coordinates.
real gradient_check(const std::function<Tensor()>& f,
                    const std::vector<Tensor>& params, real eps,
                    int max_coords_per_tensor = -1,
                    uint64_t coord_seed = 0x9e3779b97f4a7c15ull,
                    real denom_floor = 1e-4);

}  // namespace rlab
