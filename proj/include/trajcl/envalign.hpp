#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "trajcl/ops.hpp"
#include "trajcl/param_store.hpp"

namespace trajcl {

/// Learnable environment codebook with its degree head and the query/key
/// projections of the cross-attention that assigns each point a prototype.
template <typename S>
void add_codebook_params(ParamStore<S>& store, int k, int d, int m_env, std::mt19937_64& rng,
                         bool codebook_trainable = true) {
  auto normal = [&](std::vector<int64_t> dims, double stdev) {
    Tensor<S> t(std::move(dims));
    std::normal_distribution<double> n(0.0, stdev);
    for (auto& x : t.v) x = static_cast<S>(n(rng));
    return t;
  };
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  store.add("codebook.c", normal({k, d}, inv_sqrt_d), codebook_trainable);
  store.add("codebook.wv", normal({d, 1}, inv_sqrt_d));
  store.add("codebook.bv", Tensor<S>({1}));
  store.add("codebook.wq", normal({m_env, d}, 1.0 / std::sqrt(static_cast<double>(m_env))));
  store.add("codebook.bq", Tensor<S>({d}));
  store.add("codebook.wk", normal({d, d}, inv_sqrt_d));
  store.add("codebook.bk", Tensor<S>({d}));
}

template <typename S>
struct CodebookVars {
  Var<S> c, wv, bv, wq, bq, wk, bk;
  S tau = S(1);
};

template <typename S>
CodebookVars<S> use_codebook(ParamStore<S>& store, Tape<S>& tape, S tau) {
  CodebookVars<S> v;
  v.c = store.use(tape, "codebook.c");
  v.wv = store.use(tape, "codebook.wv");
  v.bv = store.use(tape, "codebook.bv");
  v.wq = store.use(tape, "codebook.wq");
  v.bq = store.use(tape, "codebook.bq");
  v.wk = store.use(tape, "codebook.wk");
  v.bk = store.use(tape, "codebook.bk");
  v.tau = tau;
  return v;
}

/// Per-prototype confounding degrees, squashed into (0,1) so the complement
/// mask stays a valid weight.
template <typename S>
Var<S> confound_degrees(const CodebookVars<S>& cb) {
  return sigmoid(linear(cb.c, cb.wv, cb.bv));  // (k, 1)
}

template <typename S>
struct SoftMasks {
  Var<S> m_alpha;  // (..., 1) confounding mask
  Var<S> m_beta;   // complement, computed not learned
  Var<S> assign;   // (..., k) prototype assignment weights (one-hot in eval)
};

enum class MaskMode { kTrain, kEval };

/// Eq.-style mask pipeline: Q from context, K from the codebook, scaled
/// dot-product scores, Gumbel-Softmax prototype selection (hard argmax in
/// eval mode), then degree mixing. `e_feats` is (T,b,m) or (n,m).
template <typename S>
SoftMasks<S> soft_masks(const CodebookVars<S>& cb, Var<S> e_feats, MaskMode mode,
                        std::optional<Var<S>> noise = std::nullopt) {
  Tape<S>& tape = *e_feats.tape;
  Var<S> q = linear(e_feats, cb.wq, cb.bq);
  Var<S> key = linear(cb.c, cb.wk, cb.bk);
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(cb.c.val().dim(1)));
  Var<S> scores = scale(matmul_nt(q, key), inv_sqrt_d);
  Var<S> assign;
  if (mode == MaskMode::kEval) {
    assign = tape.constant(argmax_onehot(scores.val()));
  } else {
    assign = gumbel_softmax(scores, cb.tau, noise);
  }
  Var<S> degrees = confound_degrees(cb);
  SoftMasks<S> out;
  out.assign = assign;
  out.m_alpha = matmul(assign, degrees);
  out.m_beta = one_minus(out.m_alpha);
  return out;
}

/// Eval-mode prototype ids per point (argmax over the score rows).
template <typename S>
std::vector<int> hard_prototype_ids(const Tensor<S>& assign_onehot) {
  const int64_t rows = assign_onehot.lead_count();
  const int64_t k = assign_onehot.last_dim();
  std::vector<int> ids(static_cast<size_t>(rows), 0);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < k; ++j)
      if (assign_onehot.v[i * k + j] > S(0.5)) ids[static_cast<size_t>(i)] = static_cast<int>(j);
  return ids;
}

/// Masked average pooling of both branches: Z_a from the confounding mask on
/// the causal states, Z_b from the complement on the confounding states.
template <typename S>
std::pair<Var<S>, Var<S>> disentangle(Var<S> h_alpha, Var<S> h_beta, const SoftMasks<S>& masks,
                                      const std::vector<int64_t>& lengths) {
  Var<S> z_alpha = masked_weighted_mean(h_alpha, std::optional(masks.m_alpha), lengths);
  Var<S> z_beta = masked_weighted_mean(h_beta, std::optional(masks.m_beta), lengths);
  return {z_alpha, z_beta};
}

}  // namespace trajcl
