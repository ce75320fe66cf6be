#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "trajcl/autodiff.hpp"
#include "trajcl/tensor.hpp"

namespace trajcl {

/// Named trainable parameters with paired gradient accumulators and Adam
/// moments. Insertion order is the canonical (and serialized) order.
template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    Tensor<S> m, v;
    bool trainable = true;
  };

  Tensor<S>& add(const std::string& name, Tensor<S> init, bool trainable = true) {
    if (index_.count(name)) throw std::runtime_error("ParamStore: duplicate parameter " + name);
    Entry e;
    e.name = name;
    e.grad = Tensor<S>::zeros(init.dims);
    e.m = Tensor<S>::zeros(init.dims);
    e.v = Tensor<S>::zeros(init.dims);
    e.value = std::move(init);
    e.trainable = trainable;
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("ParamStore: unknown parameter " + name);
    return entries_[it->second];
  }
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("ParamStore: unknown parameter " + name);
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  int64_t step_count() const { return step_; }

  /// Tape leaf for a parameter; gradients accumulate into the entry's slot.
  Var<S> use(Tape<S>& tape, const std::string& name) {
    Entry& e = at(name);
    return tape.leaf(e.value, &e.grad);
  }

  void zero_grad() {
    for (auto& e : entries_) std::fill(e.grad.v.begin(), e.grad.v.end(), S(0));
  }

  /// Bias-corrected Adam update on trainable entries; zeroes gradients after.
  void adam_step(S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8)) {
    ++step_;
    const S bc1 = S(1) - std::pow(beta1, S(step_));
    const S bc2 = S(1) - std::pow(beta2, S(step_));
    for (auto& e : entries_) {
      if (e.trainable) {
        for (int64_t i = 0; i < e.value.numel(); ++i) {
          const S g = e.grad.v[i];
          e.m.v[i] = beta1 * e.m.v[i] + (S(1) - beta1) * g;
          e.v.v[i] = beta2 * e.v.v[i] + (S(1) - beta2) * g * g;
          const S mhat = e.m.v[i] / bc1;
          const S vhat = e.v.v[i] / bc2;
          e.value.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
      }
      std::fill(e.grad.v.begin(), e.grad.v.end(), S(0));
    }
  }

  double grad_norm() const {
    double acc = 0;
    for (const auto& e : entries_)
      for (S g : e.grad.v) acc += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(acc);
  }

  double param_norm() const {
    double acc = 0;
    for (const auto& e : entries_)
      for (S x : e.value.v) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
  }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<T>(), e.trainable);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
  int64_t step_ = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t entries_checked = 0;
};

/// Central finite differences against the tape gradient. `build` must be a
/// deterministic forward pass (any noise injected, not sampled); this is
/// verified by evaluating it twice. When `max_entries_per_param` > 0, a
/// seeded subset of entries is checked per parameter.
template <typename S>
GradCheckReport grad_check(ParamStore<S>& store,
                           const std::function<Var<S>(Tape<S>&)>& build, S eps = S(1e-6),
                           int64_t max_entries_per_param = -1, uint64_t sample_seed = 0) {
  auto eval = [&]() -> S {
    Tape<S> tape;
    return build(tape).val().v[0];
  };
  const S l1 = eval();
  const S l2 = eval();
  if (l1 != l2)
    throw NumericError("grad_check: loss function is not deterministic (" +
                       std::to_string(static_cast<double>(l1)) + " vs " +
                       std::to_string(static_cast<double>(l2)) + ")");

  store.zero_grad();
  {
    Tape<S> tape;
    Var<S> loss = build(tape);
    tape.backward(loss);
  }
  std::vector<Tensor<S>> analytic;
  analytic.reserve(store.size());
  for (auto& e : store.entries()) analytic.push_back(e.grad);

  GradCheckReport rep;
  std::mt19937_64 rng(sample_seed);
  for (size_t pi = 0; pi < store.size(); ++pi) {
    auto& e = store.entries()[pi];
    if (!e.trainable) continue;
    const int64_t n = e.value.numel();
    std::vector<int64_t> idx;
    if (max_entries_per_param > 0 && n > max_entries_per_param) {
      std::vector<int64_t> all(n);
      for (int64_t i = 0; i < n; ++i) all[i] = i;
      std::shuffle(all.begin(), all.end(), rng);
      idx.assign(all.begin(), all.begin() + max_entries_per_param);
    } else {
      idx.resize(n);
      for (int64_t i = 0; i < n; ++i) idx[i] = i;
    }
    for (int64_t i : idx) {
      const S saved = e.value.v[i];
      e.value.v[i] = saved + eps;
      const S lp = eval();
      e.value.v[i] = saved - eps;
      const S lm = eval();
      e.value.v[i] = saved;
      const double fd = (static_cast<double>(lp) - static_cast<double>(lm)) /
                        (2.0 * static_cast<double>(eps));
      const double ad = static_cast<double>(analytic[pi].v[i]);
      const double rel =
          std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-5});
      ++rep.entries_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = e.name;
        rep.worst_index = i;
      }
    }
  }
  store.zero_grad();
  return rep;
}

}  // namespace trajcl
