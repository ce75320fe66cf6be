#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trajcl/causalhead.hpp"
#include "trajcl/encoder.hpp"
#include "trajcl/envalign.hpp"
#include "trajcl/trajdata.hpp"

namespace trajcl {

/// Which model is trained: the raw-trajectory baseline, the baseline with
/// context channels, or the full dual-encoder causal framework.
enum class RunMode { kBase, kEnv, kTrajCL };

/// Ablation wiring of the full framework.
enum class Variant { kFull, kNoEC, kNoCI, kNoDise, kNoEnv };

inline RunMode run_mode_from_string(const std::string& s) {
  if (s == "base") return RunMode::kBase;
  if (s == "env") return RunMode::kEnv;
  if (s == "trajcl") return RunMode::kTrajCL;
  throw std::invalid_argument("unknown run mode: " + s);
}

inline std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::kBase: return "base";
    case RunMode::kEnv: return "env";
    case RunMode::kTrajCL: return "trajcl";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::kFull;
  if (s == "no_ec") return Variant::kNoEC;
  if (s == "no_ci") return Variant::kNoCI;
  if (s == "no_dise") return Variant::kNoDise;
  if (s == "no_env") return Variant::kNoEnv;
  throw std::invalid_argument("unknown variant: " + s);
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoEC: return "no_ec";
    case Variant::kNoCI: return "no_ci";
    case Variant::kNoDise: return "no_dise";
    case Variant::kNoEnv: return "no_env";
  }
  return "?";
}

struct ModelConfig {
  RunMode mode = RunMode::kTrajCL;
  Variant variant = Variant::kFull;
  int f_traj = 3;
  int f_env = kNumContextFeatures;
  int d = 64;
  int k = 50;
  int n_classes = 2;
  double tau = 1.0;
  bool share_heads = true;
  bool detach_intervention = false;
  LossWeights weights;
};

/// Time-major padded batch. Rows beyond an instance's length are zero.
template <typename S>
struct Batch {
  Tensor<S> x;                   // (T, b, f_traj)
  Tensor<S> e;                   // (T, b, f_env)
  std::vector<int64_t> lengths;  // per-instance point counts
  std::vector<int> labels;
  int64_t T = 0, b = 0;
};

template <typename S>
Batch<S> build_batch(const std::vector<TrajInstance>& instances, const std::vector<size_t>& idx,
                     int f_traj) {
  Batch<S> batch;
  batch.b = static_cast<int64_t>(idx.size());
  for (size_t i : idx)
    batch.T = std::max(batch.T, static_cast<int64_t>(instances[i].points.size()));
  batch.x = Tensor<S>({batch.T, batch.b, f_traj});
  batch.e = Tensor<S>({batch.T, batch.b, kNumContextFeatures});
  for (int64_t bi = 0; bi < batch.b; ++bi) {
    const TrajInstance& inst = instances[idx[static_cast<size_t>(bi)]];
    if (!inst.normalized)
      throw NumericError("build_batch: instance " + inst.id + " is not normalized");
    if (inst.feat_dim != f_traj)
      throw ShapeError("build_batch: instance " + inst.id + " has feature dim " +
                       std::to_string(inst.feat_dim) + ", model expects " +
                       std::to_string(f_traj));
    const int64_t n = static_cast<int64_t>(inst.points.size());
    batch.lengths.push_back(n);
    batch.labels.push_back(inst.label);
    for (int64_t t = 0; t < n; ++t) {
      for (int64_t c = 0; c < f_traj; ++c)
        batch.x.at(t, bi, c) = static_cast<S>(inst.feat_traj[static_cast<size_t>(t * f_traj + c)]);
      for (int64_t c = 0; c < kNumContextFeatures; ++c)
        batch.e.at(t, bi, c) =
            static_cast<S>(inst.feat_env[static_cast<size_t>(t * kNumContextFeatures + c)]);
    }
  }
  return batch;
}

template <typename S>
Batch<S> build_batch(const std::vector<TrajInstance>& instances, int f_traj) {
  std::vector<size_t> idx(instances.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return build_batch<S>(instances, idx, f_traj);
}

template <typename S>
struct ForwardOut {
  Var<S> total, l_cau, l_con, l_int;
  Var<S> logits;                 // causal-branch logits (the inference head)
  Var<S> z_alpha;
  std::vector<int> proto_ids;    // eval mode only: per-point argmax prototype
  Tensor<S> m_alpha;             // eval mode only: per-point confounding mask
};

/// The complete TrajCL model: dual encoders, environment alignment,
/// classifier heads, and the three-loss objective, with base/env single
/// branch modes and the ablation variants wired per configuration.
template <typename S>
struct TrajCLModel {
  ModelConfig cfg;
  ParamStore<S> params;

  static TrajCLModel init(const ModelConfig& cfg, uint64_t seed) {
    TrajCLModel m;
    m.cfg = cfg;
    auto rng = make_rng({seed, 0x1417u});
    EncoderShape sh;
    sh.d = cfg.d;
    sh.f_in = cfg.mode == RunMode::kBase ? cfg.f_traj : cfg.f_traj + cfg.f_env;
    add_encoder_params(m.params, "alpha", sh, rng);
    if (cfg.mode == RunMode::kTrajCL) {
      add_encoder_params(m.params, "beta", sh, rng);
      add_codebook_params(m.params, cfg.k, cfg.d, cfg.f_env, rng,
                          /*codebook_trainable=*/cfg.variant != Variant::kNoEC);
    }
    add_head_params(m.params, "heads.shared", cfg.d, cfg.n_classes, rng);
    if (cfg.mode == RunMode::kTrajCL && !cfg.share_heads)
      add_head_params(m.params, "heads.int", cfg.d, cfg.n_classes, rng);
    if (cfg.mode == RunMode::kTrajCL)
      add_head_params(m.params, "heads.conf", cfg.d, cfg.n_classes, rng);
    return m;
  }

  /// Forward pass building the loss graph. In train mode `noise` must carry
  /// Gumbel draws of shape (T, b, k) and `perm_seed` keys the intervention
  /// shuffle; eval mode uses hard prototype assignment and the identity
  /// permutation.
  ForwardOut<S> forward(Tape<S>& tape, const Batch<S>& batch, MaskMode mask_mode,
                        std::optional<Tensor<S>> noise = std::nullopt,
                        uint64_t perm_seed = 0) const {
    ForwardOut<S> out;
    const bool zero_env = cfg.variant == Variant::kNoEnv;
    Var<S> x = tape.constant(batch.x);
    Var<S> e = tape.constant(zero_env && cfg.mode == RunMode::kTrajCL
                                 ? Tensor<S>::zeros(batch.e.dims)
                                 : batch.e);
    auto& store = const_cast<ParamStore<S>&>(params);
    EncoderVars<S> alpha = use_encoder(store, tape, "alpha");
    HeadVars<S> shared = use_head(store, tape, "heads.shared");

    if (cfg.mode != RunMode::kTrajCL) {
      std::optional<Var<S>> e_opt;
      if (cfg.mode == RunMode::kEnv) e_opt = e;
      Var<S> h = encode_branch(alpha, x, e_opt, batch.lengths);
      out.z_alpha = masked_weighted_mean(h, std::optional<Var<S>>(), batch.lengths);
      out.logits = mlp_head(shared, out.z_alpha);
      out.l_cau = cross_entropy(out.logits, onehot_targets<S>(batch.labels, cfg.n_classes));
      out.l_con = tape.constant(Tensor<S>::scalar(0));
      out.l_int = tape.constant(Tensor<S>::scalar(0));
      out.total = out.l_cau;
      if (mask_mode == MaskMode::kEval) {
        out.proto_ids.assign(static_cast<size_t>(batch.T * batch.b), 0);
        out.m_alpha = Tensor<S>::zeros({batch.T, batch.b, 1});
      }
      return out;
    }

    EncoderVars<S> beta = use_encoder(store, tape, "beta");
    Var<S> h_alpha = encode_branch(alpha, x, std::optional(e), batch.lengths);
    Var<S> h_beta = encode_branch(beta, x, std::optional(e), batch.lengths);

    SoftMasks<S> masks;
    if (cfg.variant == Variant::kNoDise) {
      masks.m_alpha = tape.constant(Tensor<S>::full({batch.T, batch.b, 1}, S(0.5)));
      masks.m_beta = one_minus(masks.m_alpha);
      masks.assign = tape.constant(Tensor<S>::zeros({batch.T, batch.b, cfg.k}));
    } else {
      CodebookVars<S> cb = use_codebook(store, tape, static_cast<S>(cfg.tau));
      std::optional<Var<S>> noise_var;
      if (mask_mode == MaskMode::kTrain) {
        if (!noise) throw NumericError("forward: train mode requires injected Gumbel noise");
        noise_var = tape.constant(*noise);
      }
      masks = soft_masks(cb, e, mask_mode, noise_var);
    }
    if (mask_mode == MaskMode::kEval) {
      out.proto_ids = hard_prototype_ids(masks.assign.val());
      out.m_alpha = masks.m_alpha.val();
    }

    auto [z_alpha, z_beta] = disentangle(h_alpha, h_beta, masks, batch.lengths);
    out.z_alpha = z_alpha;

    out.l_cau = classify_causal(shared, z_alpha, batch.labels, cfg.n_classes, &out.logits);
    HeadVars<S> conf = use_head(store, tape, "heads.conf");
    out.l_con = classify_confound(conf, z_beta, cfg.n_classes);

    Var<S> z_donor = cfg.detach_intervention ? detach(z_beta) : z_beta;
    std::vector<int64_t> perm(static_cast<size_t>(batch.b));
    if (mask_mode == MaskMode::kTrain) {
      perm = intervention_perm(batch.b, perm_seed);
    } else {
      for (int64_t i = 0; i < batch.b; ++i) perm[static_cast<size_t>(i)] = i;
    }
    Var<S> z_shuffled = gather_rows(z_donor, perm);
    const HeadVars<S> int_head =
        cfg.share_heads ? shared : use_head(store, tape, "heads.int");
    out.l_int = classify_intervened(int_head, z_alpha, z_shuffled, batch.labels, cfg.n_classes);

    LossWeights w = cfg.weights;
    if (cfg.variant == Variant::kNoCI) w.eta = 0.0;
    out.total = total_loss(out.l_cau, out.l_con, out.l_int, w);
    return out;
  }

  /// Deterministic eval-mode predictions (argmax of the causal head).
  std::vector<int> predict(const Batch<S>& batch, Tensor<S>* z_alpha_out = nullptr,
                           std::vector<int>* proto_ids = nullptr,
                           Tensor<S>* m_alpha = nullptr) const {
    Tape<S> tape;
    tape.check_finite = false;
    ForwardOut<S> out = forward(tape, batch, MaskMode::kEval);
    if (z_alpha_out) *z_alpha_out = out.z_alpha.val();
    if (proto_ids) *proto_ids = out.proto_ids;
    if (m_alpha) *m_alpha = out.m_alpha;
    const Tensor<S>& logits = out.logits.val();
    std::vector<int> pred(static_cast<size_t>(batch.b));
    for (int64_t i = 0; i < batch.b; ++i) {
      int best = 0;
      for (int c = 1; c < cfg.n_classes; ++c)
        if (logits.at(i, c) > logits.at(i, best)) best = c;
      pred[static_cast<size_t>(i)] = best;
    }
    return pred;
  }
};

}  // namespace trajcl
