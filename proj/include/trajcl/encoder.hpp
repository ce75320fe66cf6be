#pragma once

#include <optional>
#include <random>
#include <string>

#include "trajcl/ops.hpp"
#include "trajcl/param_store.hpp"
#include "trajcl/rng.hpp"

namespace trajcl {

/// One sequence-encoder branch: two fusion convolutions (kernel 3) over the
/// concatenated trajectory+context channels, then a GRU. The two branches of
/// the dual encoder share this architecture but never share parameters.
struct EncoderShape {
  int f_in = 27;  // conv input channels (trajectory + context)
  int d = 64;     // conv output channels and GRU hidden size
};

template <typename S>
void add_encoder_params(ParamStore<S>& store, const std::string& prefix, const EncoderShape& sh,
                        std::mt19937_64& rng) {
  auto normal = [&](std::vector<int64_t> dims, double stdev) {
    Tensor<S> t(std::move(dims));
    std::normal_distribution<double> n(0.0, stdev);
    for (auto& x : t.v) x = static_cast<S>(n(rng));
    return t;
  };
  const double conv1_std = 1.0 / std::sqrt(3.0 * sh.f_in);
  const double conv2_std = 1.0 / std::sqrt(3.0 * sh.d);
  const double gru_std = 1.0 / std::sqrt(static_cast<double>(sh.d));
  store.add(prefix + ".conv1.w", normal({3, sh.f_in, sh.d}, conv1_std));
  store.add(prefix + ".conv1.b", Tensor<S>({sh.d}));
  store.add(prefix + ".conv2.w", normal({3, sh.d, sh.d}, conv2_std));
  store.add(prefix + ".conv2.b", Tensor<S>({sh.d}));
  for (const char* gate : {"z", "r", "h"}) {
    store.add(prefix + ".gru.w" + std::string(gate), normal({sh.d, sh.d}, gru_std));
    store.add(prefix + ".gru.u" + std::string(gate), normal({sh.d, sh.d}, gru_std));
    store.add(prefix + ".gru.b" + std::string(gate), Tensor<S>({sh.d}));
  }
}

template <typename S>
struct EncoderVars {
  Var<S> conv1_w, conv1_b, conv2_w, conv2_b;
  GruVars<S> gru;
};

template <typename S>
EncoderVars<S> use_encoder(ParamStore<S>& store, Tape<S>& tape, const std::string& prefix) {
  EncoderVars<S> v;
  v.conv1_w = store.use(tape, prefix + ".conv1.w");
  v.conv1_b = store.use(tape, prefix + ".conv1.b");
  v.conv2_w = store.use(tape, prefix + ".conv2.w");
  v.conv2_b = store.use(tape, prefix + ".conv2.b");
  v.gru = {store.use(tape, prefix + ".gru.wz"), store.use(tape, prefix + ".gru.uz"),
           store.use(tape, prefix + ".gru.bz"), store.use(tape, prefix + ".gru.wr"),
           store.use(tape, prefix + ".gru.ur"), store.use(tape, prefix + ".gru.br"),
           store.use(tape, prefix + ".gru.wh"), store.use(tape, prefix + ".gru.uh"),
           store.use(tape, prefix + ".gru.bh")};
  return v;
}

/// concat -> conv -> relu -> conv -> relu. Padded rows are re-zeroed after
/// each convolution so a short sequence inside a padded batch sees exactly
/// the same zero boundary it would alone.
template <typename S>
Var<S> fuse_inputs(const EncoderVars<S>& enc, Var<S> x_feats, std::optional<Var<S>> e_feats,
                   const std::vector<int64_t>& lengths) {
  Var<S> input = e_feats ? concat_last(x_feats, *e_feats) : x_feats;
  Var<S> c1 = relu(conv1d(input, enc.conv1_w, enc.conv1_b));
  if (input.val().rank() == 3) c1 = seq_mask(c1, lengths);
  Var<S> c2 = relu(conv1d(c1, enc.conv2_w, enc.conv2_b));
  if (input.val().rank() == 3) c2 = seq_mask(c2, lengths);
  return c2;
}

/// Full state sequence of one branch (the masks pool per-step states later).
template <typename S>
Var<S> encode_branch(const EncoderVars<S>& enc, Var<S> x_feats, std::optional<Var<S>> e_feats,
                     const std::vector<int64_t>& lengths) {
  Var<S> fused = fuse_inputs(enc, x_feats, e_feats, lengths);
  const int64_t d = enc.gru.uz.val().dim(0);
  return gru_forward(fused, enc.gru, Tensor<S>({d}));
}

}  // namespace trajcl
