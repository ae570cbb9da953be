#include "rlab/optimizer.hpp"

#include <cmath>

namespace rlab {

real clip_gradients(std::vector<std::vector<real>*> grads, real max_norm) {
  real sq = 0.0;
  for (const auto* g : grads)
    for (real v : *g) sq += v * v;
  real norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    real s = max_norm / norm;
    for (auto* g : grads)
      for (real& v : *g) v *= s;
  }
  return norm;
}

GlobalParams::GlobalParams(const ParamRegistry& reg, RmspropConfig opt)
    : opt_(opt) {
  for (const auto& [name, t] : reg.entries()) {
    auto e = std::make_unique<Entry>();
    e->name = name;
    e->shape = t.shape();
    e->value = t.data();
    e->v.assign(t.numel(), 0.0);
    entries_.push_back(std::move(e));
  }
}

uint64_t GlobalParams::snapshot_into(ParamRegistry& reg) const {
  auto& dst = reg.entries();
  if (dst.size() != entries_.size())
    throw ContractViolation("snapshot: registry layout mismatch");
  uint64_t ver = version();
  for (size_t i = 0; i < entries_.size(); ++i) {
    const Entry& e = *entries_[i];
    Tensor t = dst[i].second;
    if (e.name != dst[i].first || t.numel() != e.value.size())
      throw ContractViolation("snapshot: tensor mismatch at " + e.name);
    std::lock_guard<std::mutex> lock(e.m);
    t.data() = e.value;
  }
  return ver;
}

bool GlobalParams::apply_gradients(const ParamRegistry& reg) {
  const auto& src = reg.entries();
  if (src.size() != entries_.size())
    throw ContractViolation("apply: registry layout mismatch");

  // Reject-before-apply: validate layout and scan every gradient first so a
  // non-finite update is never partially written.
  for (size_t i = 0; i < entries_.size(); ++i)
    if (src[i].first != entries_[i]->name ||
        src[i].second.numel() != entries_[i]->value.size())
      throw ContractViolation("apply: tensor mismatch at " + entries_[i]->name);
  for (const auto& [name, t] : src) {
    if (!t.has_grad()) continue;
    for (real g : t.grad())
      if (!std::isfinite(g)) {
        rejected_.fetch_add(1);
        return false;
      }
  }

  const real lr = opt_.learning_rate, a = opt_.decay, eps = opt_.epsilon;
  for (size_t i = 0; i < entries_.size(); ++i) {
    Entry& e = *entries_[i];
    const Tensor& t = src[i].second;
    if (!t.has_grad()) continue;
    const auto& g = t.grad();
    std::lock_guard<std::mutex> lock(e.m);
    for (size_t j = 0; j < g.size(); ++j) {
      e.v[j] = a * e.v[j] + (1 - a) * g[j] * g[j];
      e.value[j] -= lr * g[j] / (std::sqrt(e.v[j]) + eps);
    }
  }
  version_.fetch_add(1, std::memory_order_release);
  return true;
}

std::vector<real> GlobalParams::tensor_values(size_t i) const {
  std::lock_guard<std::mutex> lock(entries_[i]->m);
  return entries_[i]->value;
}

std::vector<real> GlobalParams::second_moment(size_t i) const {
  std::lock_guard<std::mutex> lock(entries_[i]->m);
  return entries_[i]->v;
}

}  // namespace rlab
