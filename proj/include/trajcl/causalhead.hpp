#pragma once

#include <random>
#include <string>
#include <vector>

#include "trajcl/ops.hpp"
#include "trajcl/param_store.hpp"
#include "trajcl/rng.hpp"

namespace trajcl {

/// 2-layer MLP classifier head (d -> d -> c).
template <typename S>
void add_head_params(ParamStore<S>& store, const std::string& prefix, int d, int n_classes,
                     std::mt19937_64& rng) {
  auto normal = [&](std::vector<int64_t> dims, double stdev) {
    Tensor<S> t(std::move(dims));
    std::normal_distribution<double> n(0.0, stdev);
    for (auto& x : t.v) x = static_cast<S>(n(rng));
    return t;
  };
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  store.add(prefix + ".l1w", normal({d, d}, inv_sqrt_d));
  store.add(prefix + ".l1b", Tensor<S>({d}));
  store.add(prefix + ".l2w", normal({d, n_classes}, inv_sqrt_d));
  store.add(prefix + ".l2b", Tensor<S>({n_classes}));
}

template <typename S>
struct HeadVars {
  Var<S> l1w, l1b, l2w, l2b;
};

template <typename S>
HeadVars<S> use_head(ParamStore<S>& store, Tape<S>& tape, const std::string& prefix) {
  return {store.use(tape, prefix + ".l1w"), store.use(tape, prefix + ".l1b"),
          store.use(tape, prefix + ".l2w"), store.use(tape, prefix + ".l2b")};
}

template <typename S>
Var<S> mlp_head(const HeadVars<S>& h, Var<S> z) {
  return linear(relu(linear(z, h.l1w, h.l1b)), h.l2w, h.l2b);
}

template <typename S>
Tensor<S> onehot_targets(const std::vector<int>& labels, int n_classes) {
  Tensor<S> t({static_cast<int64_t>(labels.size()), n_classes});
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes)
      throw NumericError("label " + std::to_string(labels[i]) + " out of range [0," +
                         std::to_string(n_classes) + ")");
    t.at(static_cast<int64_t>(i), labels[i]) = S(1);
  }
  return t;
}

template <typename S>
Tensor<S> uniform_targets(int64_t batch, int n_classes) {
  return Tensor<S>::full({batch, n_classes}, S(1) / S(n_classes));
}

/// Causal branch classification against the true travel-mode labels.
template <typename S>
Var<S> classify_causal(const HeadVars<S>& shared, Var<S> z_alpha, const std::vector<int>& labels,
                       int n_classes, Var<S>* logits_out = nullptr) {
  Var<S> logits = mlp_head(shared, z_alpha);
  if (logits_out) *logits_out = logits;
  return cross_entropy(logits, onehot_targets<S>(labels, n_classes));
}

/// Confounding branch pushed toward the uniform distribution.
template <typename S>
Var<S> classify_confound(const HeadVars<S>& conf, Var<S> z_beta, int n_classes) {
  Var<S> logits = mlp_head(conf, z_beta);
  return cross_entropy(logits, uniform_targets<S>(z_beta.val().dim(0), n_classes));
}

/// Uniform random batch permutation for the intervention; identity for b=1.
inline std::vector<int64_t> intervention_perm(int64_t batch, uint64_t seed) {
  std::vector<int64_t> perm(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i) perm[static_cast<size_t>(i)] = i;
  if (batch > 1) {
    auto rng = make_rng({seed, 0x1e7u});
    std::shuffle(perm.begin(), perm.end(), rng);
  }
  return perm;
}

/// Batch-shuffled intervention: the causal features keep their own labels
/// while the confounding features come from a random donor in the batch.
template <typename S>
Var<S> classify_intervened(const HeadVars<S>& shared, Var<S> z_alpha, Var<S> z_beta_shuffled,
                           const std::vector<int>& labels, int n_classes) {
  Var<S> logits = mlp_head(shared, add(z_alpha, z_beta_shuffled));
  return cross_entropy(logits, onehot_targets<S>(labels, n_classes));
}

struct LossWeights {
  double lambda = 1.0;
  double phi = 0.5;
  double eta = 0.5;
};

template <typename S>
Var<S> total_loss(Var<S> l_cau, Var<S> l_con, Var<S> l_int, const LossWeights& w) {
  if (w.lambda < 0 || w.phi < 0 || w.eta < 0)
    throw NumericError("loss weights must be non-negative");
  return weighted_sum<S>({l_cau, l_con, l_int},
                         {static_cast<S>(w.lambda), static_cast<S>(w.phi),
                          static_cast<S>(w.eta)});
}

}  // namespace trajcl
