#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trajcl/autodiff.hpp"
#include "trajcl/tensor.hpp"

namespace trajcl {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

template <typename S>
inline EMap<S> as_mat(Tensor<S>& t, int64_t rows, int64_t cols) {
  return EMap<S>(t.data(), rows, cols);
}
template <typename S>
inline ECMap<S> as_cmat(const Tensor<S>& t, int64_t rows, int64_t cols) {
  return ECMap<S>(t.data(), rows, cols);
}

template <typename S>
inline bool needs_grad(const Var<S>& v) {
  return v.n->requires_grad;
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra primitives
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  require_same_shape(a.val(), b.val(), "add");
  Tape<S>& t = *a.tape;
  Tensor<S> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.v[i] += b.val().v[i];
  auto* an = a.n;
  auto* bn = b.n;
  return t.make(std::move(out), needs_grad(a) || needs_grad(b),
                [an, bn](Tape<S>& tp, Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  if (an->requires_grad) {
                    Tensor<S>& ga = tp.grad_of(*an);
                    for (int64_t i = 0; i < g.numel(); ++i) ga.v[i] += g.v[i];
                  }
                  if (bn->requires_grad) {
                    Tensor<S>& gb = tp.grad_of(*bn);
                    for (int64_t i = 0; i < g.numel(); ++i) gb.v[i] += g.v[i];
                  }
                });
}

template <typename S>
Var<S> hadamard(Var<S> a, Var<S> b) {
  require_same_shape(a.val(), b.val(), "hadamard");
  Tape<S>& t = *a.tape;
  Tensor<S> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.v[i] *= b.val().v[i];
  auto* an = a.n;
  auto* bn = b.n;
  return t.make(std::move(out), needs_grad(a) || needs_grad(b),
                [an, bn](Tape<S>& tp, Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  if (an->requires_grad) {
                    Tensor<S>& ga = tp.grad_of(*an);
                    const Tensor<S>& bv = bn->val();
                    for (int64_t i = 0; i < g.numel(); ++i) ga.v[i] += g.v[i] * bv.v[i];
                  }
                  if (bn->requires_grad) {
                    Tensor<S>& gb = tp.grad_of(*bn);
                    const Tensor<S>& av = an->val();
                    for (int64_t i = 0; i < g.numel(); ++i) gb.v[i] += g.v[i] * av.v[i];
                  }
                });
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
  Tape<S>& t = *a.tape;
  Tensor<S> out = a.val();
  for (auto& x : out.v) x *= c;
  auto* an = a.n;
  return t.make(std::move(out), needs_grad(a), [an, c](Tape<S>& tp, Node<S>& n) {
    const Tensor<S>& g = tp.grad_of(n);
    Tensor<S>& ga = tp.grad_of(*an);
    for (int64_t i = 0; i < g.numel(); ++i) ga.v[i] += c * g.v[i];
  });
}

template <typename S>
Var<S> one_minus(Var<S> a) {
  Tape<S>& t = *a.tape;
  Tensor<S> out = a.val();
  for (auto& x : out.v) x = S(1) - x;
  auto* an = a.n;
  return t.make(std::move(out), needs_grad(a), [an](Tape<S>& tp, Node<S>& n) {
    const Tensor<S>& g = tp.grad_of(n);
    Tensor<S>& ga = tp.grad_of(*an);
    for (int64_t i = 0; i < g.numel(); ++i) ga.v[i] -= g.v[i];
  });
}

/// Identity value, gradient blocked.
template <typename S>
Var<S> detach(Var<S> a) {
  return a.tape->constant(a.val());
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  Tensor<S> out = a.val();
  for (auto& x : out.v) x = S(1) / (S(1) + std::exp(-x));
  auto* an = a.n;
  return t.make(std::move(out), needs_grad(a), [an](Tape<S>& tp, Node<S>& n) {
    const Tensor<S>& g = tp.grad_of(n);
    const Tensor<S>& y = n.val();
    Tensor<S>& ga = tp.grad_of(*an);
    for (int64_t i = 0; i < g.numel(); ++i) ga.v[i] += g.v[i] * y.v[i] * (S(1) - y.v[i]);
  });
}

template <typename S>
Var<S> tanh_op(Var<S> a) {
  Tape<S>& t = *a.tape;
  Tensor<S> out = a.val();
  for (auto& x : out.v) x = std::tanh(x);
  auto* an = a.n;
  return t.make(std::move(out), needs_grad(a), [an](Tape<S>& tp, Node<S>& n) {
    const Tensor<S>& g = tp.grad_of(n);
    const Tensor<S>& y = n.val();
    Tensor<S>& ga = tp.grad_of(*an);
    for (int64_t i = 0; i < g.numel(); ++i) ga.v[i] += g.v[i] * (S(1) - y.v[i] * y.v[i]);
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Tape<S>& t = *a.tape;
  Tensor<S> out = a.val();
  for (auto& x : out.v) x = x > S(0) ? x : S(0);
  auto* an = a.n;
  return t.make(std::move(out), needs_grad(a), [an](Tape<S>& tp, Node<S>& n) {
    const Tensor<S>& g = tp.grad_of(n);
    const Tensor<S>& y = n.val();
    Tensor<S>& ga = tp.grad_of(*an);
    for (int64_t i = 0; i < g.numel(); ++i)
      if (y.v[i] > S(0)) ga.v[i] += g.v[i];
  });
}

/// C = A·B. A may be rank 2 or 3 (leading dims flattened to rows); B is 2-D.
template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  const Tensor<S>& av = a.val();
  const Tensor<S>& bv = b.val();
  if (bv.rank() != 2 || av.rank() < 2 || av.rank() > 3)
    throw ShapeError("matmul: unsupported ranks " + av.shape() + " x " + bv.shape());
  const int64_t q = av.last_dim();
  if (q != bv.dim(0))
    throw ShapeError("matmul: inner extents differ " + av.shape() + " x " + bv.shape());
  const int64_t p = av.lead_count();
  const int64_t r = bv.dim(1);
  std::vector<int64_t> out_dims(av.dims.begin(), av.dims.end() - 1);
  out_dims.push_back(r);
  Tensor<S> out(out_dims);
  as_mat(out, p, r).noalias() = as_cmat(av, p, q) * as_cmat(bv, q, r);
  Tape<S>& t = *a.tape;
  auto* an = a.n;
  auto* bn = b.n;
  return t.make(std::move(out), needs_grad(a) || needs_grad(b),
                [an, bn, p, q, r](Tape<S>& tp, Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  if (an->requires_grad) {
                    Tensor<S>& ga = tp.grad_of(*an);
                    as_mat(ga, p, q).noalias() +=
                        as_cmat(g, p, r) * as_cmat(bn->val(), q, r).transpose();
                  }
                  if (bn->requires_grad) {
                    Tensor<S>& gb = tp.grad_of(*bn);
                    as_mat(gb, q, r).noalias() +=
                        as_cmat(an->val(), p, q).transpose() * as_cmat(g, p, r);
                  }
                });
}

/// C = A·Bᵀ with A (..., d) and B (k, d); used for attention scores.
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  const Tensor<S>& av = a.val();
  const Tensor<S>& bv = b.val();
  if (bv.rank() != 2 || av.rank() < 2 || av.rank() > 3)
    throw ShapeError("matmul_nt: unsupported ranks " + av.shape() + " x " + bv.shape());
  const int64_t d = av.last_dim();
  if (d != bv.dim(1))
    throw ShapeError("matmul_nt: inner extents differ " + av.shape() + " x " + bv.shape());
  const int64_t p = av.lead_count();
  const int64_t k = bv.dim(0);
  std::vector<int64_t> out_dims(av.dims.begin(), av.dims.end() - 1);
  out_dims.push_back(k);
  Tensor<S> out(out_dims);
  as_mat(out, p, k).noalias() = as_cmat(av, p, d) * as_cmat(bv, k, d).transpose();
  Tape<S>& t = *a.tape;
  auto* an = a.n;
  auto* bn = b.n;
  return t.make(std::move(out), needs_grad(a) || needs_grad(b),
                [an, bn, p, d, k](Tape<S>& tp, Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  if (an->requires_grad) {
                    Tensor<S>& ga = tp.grad_of(*an);
                    as_mat(ga, p, d).noalias() += as_cmat(g, p, k) * as_cmat(bn->val(), k, d);
                  }
                  if (bn->requires_grad) {
                    Tensor<S>& gb = tp.grad_of(*bn);
                    as_mat(gb, k, d).noalias() +=
                        as_cmat(g, p, k).transpose() * as_cmat(an->val(), p, d);
                  }
                });
}

/// Adds a length-d bias to every row of a (..., d) tensor.
template <typename S>
Var<S> add_bias(Var<S> a, Var<S> bias) {
  const Tensor<S>& av = a.val();
  const Tensor<S>& bv = bias.val();
  const int64_t d = av.last_dim();
  if (bv.numel() != d)
    throw ShapeError("add_bias: bias " + bv.shape() + " does not match last extent of " +
                     av.shape());
  const int64_t rows = av.lead_count();
  Tensor<S> out = av;
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < d; ++j) out.v[i * d + j] += bv.v[j];
  Tape<S>& t = *a.tape;
  auto* an = a.n;
  auto* bn = bias.n;
  return t.make(std::move(out), needs_grad(a) || needs_grad(bias),
                [an, bn, rows, d](Tape<S>& tp, Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  if (an->requires_grad) {
                    Tensor<S>& ga = tp.grad_of(*an);
                    for (int64_t i = 0; i < g.numel(); ++i) ga.v[i] += g.v[i];
                  }
                  if (bn->requires_grad) {
                    Tensor<S>& gb = tp.grad_of(*bn);
                    for (int64_t i = 0; i < rows; ++i)
                      for (int64_t j = 0; j < d; ++j) gb.v[j] += g.v[i * d + j];
                  }
                });
}

template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
  return add_bias(matmul(x, w), b);
}

/// Broadcast multiply of (..., d) by a per-row scalar (..., 1).
template <typename S>
Var<S> row_scale(Var<S> a, Var<S> s) {
  const Tensor<S>& av = a.val();
  const Tensor<S>& sv = s.val();
  const int64_t rows = av.lead_count();
  const int64_t d = av.last_dim();
  if (sv.last_dim() != 1 || sv.lead_count() != rows)
    throw ShapeError("row_scale: scale " + sv.shape() + " incompatible with " + av.shape());
  Tensor<S> out = av;
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < d; ++j) out.v[i * d + j] *= sv.v[i];
  Tape<S>& t = *a.tape;
  auto* an = a.n;
  auto* sn = s.n;
  return t.make(std::move(out), needs_grad(a) || needs_grad(s),
                [an, sn, rows, d](Tape<S>& tp, Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  if (an->requires_grad) {
                    Tensor<S>& ga = tp.grad_of(*an);
                    const Tensor<S>& sv = sn->val();
                    for (int64_t i = 0; i < rows; ++i)
                      for (int64_t j = 0; j < d; ++j) ga.v[i * d + j] += g.v[i * d + j] * sv.v[i];
                  }
                  if (sn->requires_grad) {
                    Tensor<S>& gs = tp.grad_of(*sn);
                    const Tensor<S>& av = an->val();
                    for (int64_t i = 0; i < rows; ++i) {
                      S acc = 0;
                      for (int64_t j = 0; j < d; ++j) acc += g.v[i * d + j] * av.v[i * d + j];
                      gs.v[i] += acc;
                    }
                  }
                });
}

/// Concatenates along the last axis; leading extents must agree.
template <typename S>
Var<S> concat_last(Var<S> a, Var<S> b) {
  const Tensor<S>& av = a.val();
  const Tensor<S>& bv = b.val();
  if (av.rank() != bv.rank())
    throw ShapeError("concat_last: rank mismatch " + av.shape() + " vs " + bv.shape());
  for (int i = 0; i + 1 < av.rank(); ++i)
    if (av.dim(i) != bv.dim(i))
      throw ShapeError("concat_last: leading extents differ " + av.shape() + " vs " + bv.shape());
  const int64_t rows = av.lead_count();
  const int64_t p = av.last_dim();
  const int64_t q = bv.last_dim();
  std::vector<int64_t> out_dims(av.dims.begin(), av.dims.end() - 1);
  out_dims.push_back(p + q);
  Tensor<S> out(out_dims);
  for (int64_t i = 0; i < rows; ++i) {
    std::copy_n(av.data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(bv.data() + i * q, q, out.data() + i * (p + q) + p);
  }
  Tape<S>& t = *a.tape;
  auto* an = a.n;
  auto* bn = b.n;
  return t.make(std::move(out), needs_grad(a) || needs_grad(b),
                [an, bn, rows, p, q](Tape<S>& tp, Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  if (an->requires_grad) {
                    Tensor<S>& ga = tp.grad_of(*an);
                    for (int64_t i = 0; i < rows; ++i)
                      for (int64_t j = 0; j < p; ++j) ga.v[i * p + j] += g.v[i * (p + q) + j];
                  }
                  if (bn->requires_grad) {
                    Tensor<S>& gb = tp.grad_of(*bn);
                    for (int64_t i = 0; i < rows; ++i)
                      for (int64_t j = 0; j < q; ++j) gb.v[i * q + j] += g.v[i * (p + q) + p + j];
                  }
                });
}

/// Mean over one axis of a 2-D tensor.
template <typename S>
Var<S> mean_over_axis(Var<S> a, int axis) {
  const Tensor<S>& av = a.val();
  if (av.rank() != 2) throw ShapeError("mean_over_axis: expected rank 2, got " + av.shape());
  if (axis != 0 && axis != 1) throw ShapeError("mean_over_axis: axis must be 0 or 1");
  const int64_t rows = av.dim(0), cols = av.dim(1);
  Tensor<S> out(axis == 0 ? std::vector<int64_t>{cols} : std::vector<int64_t>{rows});
  if (axis == 0) {
    for (int64_t j = 0; j < cols; ++j) {
      S acc = 0;
      for (int64_t i = 0; i < rows; ++i) acc += av.v[i * cols + j];
      out.v[j] = acc / S(rows);
    }
  } else {
    for (int64_t i = 0; i < rows; ++i) {
      S acc = 0;
      for (int64_t j = 0; j < cols; ++j) acc += av.v[i * cols + j];
      out.v[i] = acc / S(cols);
    }
  }
  Tape<S>& t = *a.tape;
  auto* an = a.n;
  return t.make(std::move(out), needs_grad(a),
                [an, axis, rows, cols](Tape<S>& tp, Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  Tensor<S>& ga = tp.grad_of(*an);
                  if (axis == 0) {
                    for (int64_t i = 0; i < rows; ++i)
                      for (int64_t j = 0; j < cols; ++j) ga.v[i * cols + j] += g.v[j] / S(rows);
                  } else {
                    for (int64_t i = 0; i < rows; ++i)
                      for (int64_t j = 0; j < cols; ++j) ga.v[i * cols + j] += g.v[i] / S(cols);
                  }
                });
}

namespace detail {
/// Rowwise stable softmax of pre-divided logits; shared by softmax and
/// gumbel_softmax backward (identical Jacobian up to the 1/tau factor).
template <typename S>
void softmax_rows(const S* in, S* out, int64_t rows, int64_t k) {
  for (int64_t i = 0; i < rows; ++i) {
    const S* r = in + i * k;
    S* o = out + i * k;
    S mx = r[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, r[j]);
    S sum = 0;
    for (int64_t j = 0; j < k; ++j) {
      o[j] = std::exp(r[j] - mx);
      sum += o[j];
    }
    for (int64_t j = 0; j < k; ++j) o[j] /= sum;
  }
}

template <typename S>
void softmax_backward_rows(const Tensor<S>& y, const Tensor<S>& g, Tensor<S>& ga, S inv_tau) {
  const int64_t k = y.last_dim();
  const int64_t rows = y.lead_count();
  for (int64_t i = 0; i < rows; ++i) {
    const S* yr = y.data() + i * k;
    const S* gr = g.data() + i * k;
    S* gar = ga.data() + i * k;
    S dot = 0;
    for (int64_t j = 0; j < k; ++j) dot += yr[j] * gr[j];
    for (int64_t j = 0; j < k; ++j) gar[j] += inv_tau * yr[j] * (gr[j] - dot);
  }
}
}  // namespace detail

/// Rowwise softmax over the last axis.
template <typename S>
Var<S> softmax_lastaxis(Var<S> a) {
  const Tensor<S>& av = a.val();
  Tensor<S> out(av.dims);
  detail::softmax_rows(av.data(), out.data(), av.lead_count(), av.last_dim());
  Tape<S>& t = *a.tape;
  auto* an = a.n;
  return t.make(std::move(out), needs_grad(a), [an](Tape<S>& tp, Node<S>& n) {
    detail::softmax_backward_rows(n.val(), tp.grad_of(n), tp.grad_of(*an), S(1));
  });
}

/// Rowwise Gumbel-Softmax relaxation: softmax((logits + g)/tau). Noise is
/// injected (tests pass fixed draws; training passes a seeded stream); an
/// absent noise var means zero noise. Gradient flows through the soft sample.
template <typename S>
Var<S> gumbel_softmax(Var<S> logits, S tau, std::optional<Var<S>> noise = std::nullopt) {
  if (!(tau > S(0))) throw NumericError("gumbel_softmax: tau must be > 0");
  const Tensor<S>& lv = logits.val();
  if (noise) require_same_shape(lv, noise->val(), "gumbel_softmax");
  const int64_t rows = lv.lead_count();
  const int64_t k = lv.last_dim();
  Tensor<S> shifted = lv;
  if (noise)
    for (int64_t i = 0; i < shifted.numel(); ++i) shifted.v[i] += noise->val().v[i];
  for (auto& x : shifted.v) x /= tau;
  Tensor<S> out(lv.dims);
  detail::softmax_rows(shifted.data(), out.data(), rows, k);
  Tape<S>& t = *logits.tape;
  auto* ln = logits.n;
  return t.make(std::move(out), needs_grad(logits),
                [ln, tau](Tape<S>& tp, Node<S>& n) {
                  detail::softmax_backward_rows(n.val(), tp.grad_of(n), tp.grad_of(*ln),
                                                S(1) / tau);
                });
}

/// Rowwise argmax one-hot (deterministic: first maximal index wins).
template <typename S>
Tensor<S> argmax_onehot(const Tensor<S>& logits) {
  const int64_t rows = logits.lead_count();
  const int64_t k = logits.last_dim();
  Tensor<S> out(logits.dims);
  for (int64_t i = 0; i < rows; ++i) {
    const S* r = logits.data() + i * k;
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j)
      if (r[j] > r[best]) best = j;
    out.v[i * k + best] = S(1);
  }
  return out;
}

/// Mean softmax cross-entropy with explicit target distributions, computed
/// through log-sum-exp. Target rows must be non-negative and sum to 1.
template <typename S>
Var<S> cross_entropy(Var<S> logits, const Tensor<S>& target) {
  const Tensor<S>& lv = logits.val();
  require_same_shape(lv, target, "cross_entropy");
  if (lv.rank() != 2) throw ShapeError("cross_entropy: expected rank 2, got " + lv.shape());
  const int64_t b = lv.dim(0), c = lv.dim(1);
  for (int64_t i = 0; i < b; ++i) {
    S sum = 0;
    for (int64_t j = 0; j < c; ++j) {
      S x = target.v[i * c + j];
      if (x < S(-1e-9)) throw NumericError("cross_entropy: negative target entry");
      sum += x;
    }
    if (std::abs(static_cast<double>(sum) - 1.0) > 1e-6)
      throw NumericError("cross_entropy: target row " + std::to_string(i) +
                         " sums to " + std::to_string(static_cast<double>(sum)));
  }
  Tensor<S> probs(lv.dims);
  detail::softmax_rows(lv.data(), probs.data(), b, c);
  S loss = 0;
  for (int64_t i = 0; i < b; ++i) {
    const S* r = lv.data() + i * c;
    S mx = r[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, r[j]);
    S lse = 0;
    for (int64_t j = 0; j < c; ++j) lse += std::exp(r[j] - mx);
    lse = std::log(lse) + mx;
    S dot = 0;
    for (int64_t j = 0; j < c; ++j) dot += target.v[i * c + j] * r[j];
    loss += lse - dot;
  }
  loss /= S(b);
  Tape<S>& t = *logits.tape;
  auto* ln = logits.n;
  return t.make(Tensor<S>::scalar(loss), needs_grad(logits),
                [ln, probs = std::move(probs), target, b, c](Tape<S>& tp,
                                                             Node<S>& n) {
                  const S g = tp.grad_of(n).v[0];
                  Tensor<S>& ga = tp.grad_of(*ln);
                  for (int64_t i = 0; i < b * c; ++i)
                    ga.v[i] += g * (probs.v[i] - target.v[i]) / S(b);
                });
}

/// Length-aware weighted time pooling: out[i] = (1/len_i) Σ_{t<len_i} h[t,i,:]·w[t,i].
/// `h` is (T,b,d) (or (n,d) treated as b=1); `weights` is (T,b,1) or absent (plain mean).
template <typename S>
Var<S> masked_weighted_mean(Var<S> h, std::optional<Var<S>> weights,
                            std::vector<int64_t> lengths) {
  const Tensor<S>& hv = h.val();
  int64_t T, b, d;
  if (hv.rank() == 3) {
    T = hv.dim(0);
    b = hv.dim(1);
    d = hv.dim(2);
  } else if (hv.rank() == 2) {
    T = hv.dim(0);
    b = 1;
    d = hv.dim(1);
  } else {
    throw ShapeError("masked_weighted_mean: expected rank 2 or 3, got " + hv.shape());
  }
  if (T == 0) throw ShapeError("masked_weighted_mean: empty time axis");
  if (static_cast<int64_t>(lengths.size()) != b)
    throw ShapeError("masked_weighted_mean: lengths size " + std::to_string(lengths.size()) +
                     " != batch " + std::to_string(b));
  for (int64_t len : lengths)
    if (len < 1 || len > T) throw ShapeError("masked_weighted_mean: length out of range");
  if (weights) {
    const Tensor<S>& wv = weights->val();
    if (wv.lead_count() != T * b || wv.last_dim() != 1)
      throw ShapeError("masked_weighted_mean: weights " + wv.shape() + " incompatible with " +
                       hv.shape());
  }
  Tensor<S> out({b, d});
  const S* w = weights ? weights->val().data() : nullptr;
  for (int64_t i = 0; i < b; ++i) {
    S* o = out.data() + i * d;
    for (int64_t t = 0; t < lengths[i]; ++t) {
      const S* row = hv.data() + (t * b + i) * d;
      const S wt = w ? w[t * b + i] : S(1);
      for (int64_t j = 0; j < d; ++j) o[j] += wt * row[j];
    }
    for (int64_t j = 0; j < d; ++j) o[j] /= S(lengths[i]);
  }
  Tape<S>& t = *h.tape;
  auto* hn = h.n;
  auto* wn = weights ? weights->n : nullptr;
  return t.make(
      std::move(out), needs_grad(h) || (weights && needs_grad(*weights)),
      [hn, wn, b, d, lengths = std::move(lengths)](Tape<S>& tp, Node<S>& n) {
        const Tensor<S>& g = tp.grad_of(n);
        const S* w = wn ? wn->val().data() : nullptr;
        if (hn->requires_grad) {
          Tensor<S>& gh = tp.grad_of(*hn);
          for (int64_t i = 0; i < b; ++i) {
            const S inv = S(1) / S(lengths[i]);
            for (int64_t t = 0; t < lengths[i]; ++t) {
              S* row = gh.data() + (t * b + i) * d;
              const S wt = (w ? w[t * b + i] : S(1)) * inv;
              for (int64_t j = 0; j < d; ++j) row[j] += wt * g.v[i * d + j];
            }
          }
        }
        if (wn && wn->requires_grad) {
          Tensor<S>& gw = tp.grad_of(*wn);
          const Tensor<S>& hv = hn->val();
          for (int64_t i = 0; i < b; ++i) {
            const S inv = S(1) / S(lengths[i]);
            for (int64_t t = 0; t < lengths[i]; ++t) {
              const S* row = hv.data() + (t * b + i) * d;
              S acc = 0;
              for (int64_t j = 0; j < d; ++j) acc += row[j] * g.v[i * d + j];
              gw.v[t * b + i] += acc * inv;
            }
          }
        }
      });
}

/// Zeroes rows of (T,b,d) beyond each sequence's length (gradient likewise).
template <typename S>
Var<S> seq_mask(Var<S> x, std::vector<int64_t> lengths) {
  const Tensor<S>& xv = x.val();
  if (xv.rank() != 3) throw ShapeError("seq_mask: expected rank 3, got " + xv.shape());
  const int64_t T = xv.dim(0), b = xv.dim(1), d = xv.dim(2);
  if (static_cast<int64_t>(lengths.size()) != b)
    throw ShapeError("seq_mask: lengths size mismatch");
  Tensor<S> out = xv;
  for (int64_t i = 0; i < b; ++i)
    for (int64_t t = lengths[i]; t < T; ++t)
      std::fill_n(out.data() + (t * b + i) * d, d, S(0));
  Tape<S>& t = *x.tape;
  auto* xn = x.n;
  return t.make(std::move(out), needs_grad(x),
                [xn, T, b, d, lengths = std::move(lengths)](Tape<S>& tp,
                                                            Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  Tensor<S>& gx = tp.grad_of(*xn);
                  for (int64_t i = 0; i < b; ++i)
                    for (int64_t t = 0; t < lengths[i]; ++t) {
                      const int64_t off = (t * b + i) * d;
                      for (int64_t j = 0; j < d; ++j) gx.v[off + j] += g.v[off + j];
                    }
                });
}

/// out[i] = z[perm[i]] on rows of a (b,d) tensor; backward scatters.
template <typename S>
Var<S> gather_rows(Var<S> z, std::vector<int64_t> perm) {
  const Tensor<S>& zv = z.val();
  if (zv.rank() != 2) throw ShapeError("gather_rows: expected rank 2, got " + zv.shape());
  const int64_t b = zv.dim(0), d = zv.dim(1);
  if (static_cast<int64_t>(perm.size()) != b) throw ShapeError("gather_rows: perm size mismatch");
  Tensor<S> out({b, d});
  for (int64_t i = 0; i < b; ++i) {
    const int64_t src = perm[i];
    if (src < 0 || src >= b) throw ShapeError("gather_rows: index out of range");
    std::copy_n(zv.data() + src * d, d, out.data() + i * d);
  }
  Tape<S>& t = *z.tape;
  auto* zn = z.n;
  return t.make(std::move(out), needs_grad(z),
                [zn, b, d, perm = std::move(perm)](Tape<S>& tp, Node<S>& n) {
                  const Tensor<S>& g = tp.grad_of(n);
                  Tensor<S>& gz = tp.grad_of(*zn);
                  for (int64_t i = 0; i < b; ++i)
                    for (int64_t j = 0; j < d; ++j) gz.v[perm[i] * d + j] += g.v[i * d + j];
                });
}

/// Scalar probe: Σ_i a_i·w_i against a fixed weight tensor.
template <typename S>
Var<S> reduce_dot(Var<S> a, const Tensor<S>& w) {
  require_same_shape(a.val(), w, "reduce_dot");
  S acc = 0;
  for (int64_t i = 0; i < w.numel(); ++i) acc += a.val().v[i] * w.v[i];
  Tape<S>& t = *a.tape;
  auto* an = a.n;
  return t.make(Tensor<S>::scalar(acc), needs_grad(a),
                [an, w](Tape<S>& tp, Node<S>& n) {
                  const S g = tp.grad_of(n).v[0];
                  Tensor<S>& ga = tp.grad_of(*an);
                  for (int64_t i = 0; i < w.numel(); ++i) ga.v[i] += g * w.v[i];
                });
}

/// Weighted sum of scalar losses.
template <typename S>
Var<S> weighted_sum(const std::vector<Var<S>>& terms, const std::vector<S>& coeffs) {
  if (terms.empty() || terms.size() != coeffs.size())
    throw ShapeError("weighted_sum: terms/coeffs size mismatch");
  S total = 0;
  bool rg = false;
  std::vector<Node<S>*> nodes;
  for (size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].val().numel() != 1) throw ShapeError("weighted_sum: non-scalar term");
    total += coeffs[i] * terms[i].val().v[0];
    rg = rg || needs_grad(terms[i]);
    nodes.push_back(terms[i].n);
  }
  Tape<S>& t = *terms[0].tape;
  return t.make(Tensor<S>::scalar(total), rg,
                [nodes, coeffs](Tape<S>& tp, Node<S>& n) {
                  const S g = tp.grad_of(n).v[0];
                  for (size_t i = 0; i < nodes.size(); ++i)
                    if (nodes[i]->requires_grad) tp.grad_of(*nodes[i]).v[0] += coeffs[i] * g;
                });
}

// ---------------------------------------------------------------------------
// Fused sequence ops: 1-D convolution and GRU
// ---------------------------------------------------------------------------

/// Same-length 1-D convolution (cross-correlation) along the sequence axis
/// with zero padding. Input is (n, c_in) or (T, b, c_in); kernel is
/// (ks, c_in, c_out) with ks odd; bias is (c_out).
template <typename S>
Var<S> conv1d(Var<S> x, Var<S> kernel, Var<S> bias) {
  const Tensor<S>& xv = x.val();
  const Tensor<S>& kv = kernel.val();
  const Tensor<S>& bv = bias.val();
  if (kv.rank() != 3) throw ShapeError("conv1d: kernel must be rank 3, got " + kv.shape());
  const int64_t ks = kv.dim(0), cin = kv.dim(1), cout = kv.dim(2);
  if (ks % 2 == 0) throw ShapeError("conv1d: only odd kernel sizes are supported");
  int64_t T, b;
  if (xv.rank() == 2) {
    T = xv.dim(0);
    b = 1;
  } else if (xv.rank() == 3) {
    T = xv.dim(0);
    b = xv.dim(1);
  } else {
    throw ShapeError("conv1d: input must be rank 2 or 3, got " + xv.shape());
  }
  if (T < 1) throw ShapeError("conv1d: empty sequence");
  if (xv.last_dim() != cin)
    throw ShapeError("conv1d: input channels " + xv.shape() + " do not match kernel " +
                     kv.shape());
  if (bv.numel() != cout) throw ShapeError("conv1d: bias size mismatch");
  const int64_t pad = ks / 2;
  std::vector<int64_t> out_dims = xv.dims;
  out_dims.back() = cout;
  Tensor<S> out(out_dims);
  // bias first, then accumulate the ks shifted partial products
  for (int64_t i = 0; i < T * b; ++i)
    std::copy_n(bv.data(), cout, out.data() + i * cout);
  for (int64_t k = 0; k < ks; ++k) {
    const int64_t shift = k - pad;
    const int64_t t0 = std::max<int64_t>(0, -shift);
    const int64_t t1 = T - 1 - std::max<int64_t>(0, shift);
    if (t1 < t0) continue;
    const int64_t rows = (t1 - t0 + 1) * b;
    ECMap<S> xin(xv.data() + (t0 + shift) * b * cin, rows, cin);
    ECMap<S> kk(kv.data() + k * cin * cout, cin, cout);
    EMap<S> o(out.data() + t0 * b * cout, rows, cout);
    o.noalias() += xin * kk;
  }
  Tape<S>& t = *x.tape;
  auto* xn = x.n;
  auto* kn = kernel.n;
  auto* bn = bias.n;
  return t.make(
      std::move(out), needs_grad(x) || needs_grad(kernel) || needs_grad(bias),
      [xn, kn, bn, T, b, ks, cin, cout, pad](Tape<S>& tp, Node<S>& n) {
        const Tensor<S>& g = tp.grad_of(n);
        if (bn->requires_grad) {
          Tensor<S>& gb = tp.grad_of(*bn);
          for (int64_t i = 0; i < T * b; ++i)
            for (int64_t j = 0; j < cout; ++j) gb.v[j] += g.v[i * cout + j];
        }
        for (int64_t k = 0; k < ks; ++k) {
          const int64_t shift = k - pad;
          const int64_t t0 = std::max<int64_t>(0, -shift);
          const int64_t t1 = T - 1 - std::max<int64_t>(0, shift);
          if (t1 < t0) continue;
          const int64_t rows = (t1 - t0 + 1) * b;
          ECMap<S> go(g.data() + t0 * b * cout, rows, cout);
          if (kn->requires_grad) {
            Tensor<S>& gk = tp.grad_of(*kn);
            EMap<S> gkk(gk.data() + k * cin * cout, cin, cout);
            ECMap<S> xin(xn->val().data() + (t0 + shift) * b * cin, rows, cin);
            gkk.noalias() += xin.transpose() * go;
          }
          if (xn->requires_grad) {
            Tensor<S>& gx = tp.grad_of(*xn);
            EMap<S> gxin(gx.data() + (t0 + shift) * b * cin, rows, cin);
            ECMap<S> kk(kn->val().data() + k * cin * cout, cin, cout);
            gxin.noalias() += go * kk.transpose();
          }
        }
      });
}

template <typename S>
struct GruVars {
  Var<S> wz, uz, bz;  // update gate
  Var<S> wr, ur, br;  // reset gate
  Var<S> wh, uh, bh;  // candidate state
};

/// GRU over a full sequence: h_t = (1-z_t)⊙h_{t-1} + z_t⊙h̃_t with
/// z_t = σ(x_t·Wz + h_{t-1}·Uz + bz), r_t = σ(x_t·Wr + h_{t-1}·Ur + br),
/// h̃_t = tanh(x_t·Wh + (r_t⊙h_{t-1})·Uh + bh). Input is (n, f) or (T, b, f);
/// h0 is a length-d start state shared across the batch. Returns the full
/// state sequence.
template <typename S>
Var<S> gru_forward(Var<S> x, const GruVars<S>& p, const Tensor<S>& h0) {
  const Tensor<S>& xv = x.val();
  int64_t T, b;
  if (xv.rank() == 2) {
    T = xv.dim(0);
    b = 1;
  } else if (xv.rank() == 3) {
    T = xv.dim(0);
    b = xv.dim(1);
  } else {
    throw ShapeError("gru_forward: input must be rank 2 or 3, got " + xv.shape());
  }
  if (T == 0) throw ShapeError("gru_forward: empty sequence");
  const int64_t f = xv.last_dim();
  const int64_t d = p.wz.val().dim(1);
  auto check = [&](const Var<S>& w, int64_t r, int64_t c, const char* name) {
    if (w.val().rank() != 2 || w.val().dim(0) != r || w.val().dim(1) != c)
      throw ShapeError(std::string("gru_forward: ") + name + " has shape " + w.val().shape() +
                       ", expected (" + std::to_string(r) + "," + std::to_string(c) + ")");
  };
  check(p.wz, f, d, "Wz");
  check(p.wr, f, d, "Wr");
  check(p.wh, f, d, "Wh");
  check(p.uz, d, d, "Uz");
  check(p.ur, d, d, "Ur");
  check(p.uh, d, d, "Uh");
  if (p.bz.val().numel() != d || p.br.val().numel() != d || p.bh.val().numel() != d)
    throw ShapeError("gru_forward: bias size mismatch");
  if (h0.numel() != d) throw ShapeError("gru_forward: h0 size mismatch");
  if (!h0.all_finite()) throw NumericError("gru_forward: h0 must be finite");

  const int64_t rows = T * b;
  // input projections for all steps at once
  Tensor<S> pz({rows, d}), pr({rows, d}), ph({rows, d});
  as_mat(pz, rows, d).noalias() = as_cmat(xv, rows, f) * as_cmat(p.wz.val(), f, d);
  as_mat(pr, rows, d).noalias() = as_cmat(xv, rows, f) * as_cmat(p.wr.val(), f, d);
  as_mat(ph, rows, d).noalias() = as_cmat(xv, rows, f) * as_cmat(p.wh.val(), f, d);

  Tensor<S> Z({rows, d}), R({rows, d}), HC({rows, d}), RH({rows, d});
  std::vector<int64_t> out_dims = xv.dims;
  out_dims.back() = d;
  Tensor<S> H(out_dims);

  Tensor<S> hprev({b, d});
  for (int64_t i = 0; i < b; ++i) std::copy_n(h0.data(), d, hprev.data() + i * d);

  Tensor<S> tmp({b, d});
  for (int64_t t = 0; t < T; ++t) {
    const int64_t off = t * b * d;
    // z
    as_mat(tmp, b, d).noalias() = as_cmat(hprev, b, d) * as_cmat(p.uz.val(), d, d);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < d; ++j) {
        const S a = pz.v[off + i * d + j] + tmp.v[i * d + j] + p.bz.val().v[j];
        Z.v[off + i * d + j] = S(1) / (S(1) + std::exp(-a));
      }
    // r
    as_mat(tmp, b, d).noalias() = as_cmat(hprev, b, d) * as_cmat(p.ur.val(), d, d);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < d; ++j) {
        const S a = pr.v[off + i * d + j] + tmp.v[i * d + j] + p.br.val().v[j];
        R.v[off + i * d + j] = S(1) / (S(1) + std::exp(-a));
      }
    // candidate
    for (int64_t i = 0; i < b * d; ++i) RH.v[off + i] = R.v[off + i] * hprev.v[i];
    ECMap<S> rh(RH.data() + off, b, d);
    as_mat(tmp, b, d).noalias() = rh * as_cmat(p.uh.val(), d, d);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < d; ++j) {
        const S a = ph.v[off + i * d + j] + tmp.v[i * d + j] + p.bh.val().v[j];
        HC.v[off + i * d + j] = std::tanh(a);
      }
    // state
    for (int64_t i = 0; i < b * d; ++i) {
      const S z = Z.v[off + i];
      const S h = (S(1) - z) * hprev.v[i] + z * HC.v[off + i];
      H.v[off + i] = h;
      hprev.v[i] = h;
    }
  }

  Tape<S>& t = *x.tape;
  auto* xn = x.n;
  struct Ctx {
    Node<S> *wz, *uz, *bz, *wr, *ur, *br, *wh, *uh, *bh;
  };
  Ctx cx{p.wz.n, p.uz.n, p.bz.n, p.wr.n, p.ur.n, p.br.n, p.wh.n, p.uh.n, p.bh.n};
  const bool rg = needs_grad(x) || needs_grad(p.wz) || needs_grad(p.uz) || needs_grad(p.bz) ||
                  needs_grad(p.wr) || needs_grad(p.ur) || needs_grad(p.br) || needs_grad(p.wh) ||
                  needs_grad(p.uh) || needs_grad(p.bh);

  return t.make(
      std::move(H), rg,
      [xn, cx, h0, T, b, d, f, Z = std::move(Z), R = std::move(R), HC = std::move(HC),
       RH = std::move(RH)](Tape<S>& tp, Node<S>& n) {
        const Tensor<S>& H = n.val();
        const Tensor<S>& gH = tp.grad_of(n);
        const int64_t rows = T * b;
        Tensor<S> dAz({rows, d}), dAr({rows, d}), dAh({rows, d});
        Tensor<S> dh({b, d}), drh({b, d});
        Tensor<S> gUz({d, d}), gUr({d, d}), gUh({d, d});
        Tensor<S> h0row({b, d});
        for (int64_t i = 0; i < b; ++i) std::copy_n(h0.data(), d, h0row.data() + i * d);

        for (int64_t t2 = T - 1; t2 >= 0; --t2) {
          const int64_t off = t2 * b * d;
          const S* hprev = t2 > 0 ? H.data() + off - b * d : h0row.data();
          for (int64_t i = 0; i < b * d; ++i) dh.v[i] += gH.v[off + i];
          for (int64_t i = 0; i < b * d; ++i) {
            const S z = Z.v[off + i], hc = HC.v[off + i];
            const S dhi = dh.v[i];
            const S dz = dhi * (hc - hprev[i]);
            const S dhc = dhi * z;
            dh.v[i] = dhi * (S(1) - z);  // becomes dh_prev; more added below
            dAh.v[off + i] = dhc * (S(1) - hc * hc);
            dAz.v[off + i] = dz * z * (S(1) - z);
          }
          // through candidate's recurrent term
          ECMap<S> dah(dAh.data() + off, b, d);
          as_mat(drh, b, d).noalias() = dah * as_cmat(cx.uh->val(), d, d).transpose();
          if (cx.uh->requires_grad)
            as_mat(gUh, d, d).noalias() += ECMap<S>(RH.data() + off, b, d).transpose() * dah;
          for (int64_t i = 0; i < b * d; ++i) {
            const S r = R.v[off + i];
            const S dr = drh.v[i] * hprev[i];
            dh.v[i] += drh.v[i] * r;
            dAr.v[off + i] = dr * r * (S(1) - r);
          }
          ECMap<S> daz(dAz.data() + off, b, d);
          ECMap<S> dar(dAr.data() + off, b, d);
          ECMap<S> hp(hprev, b, d);
          as_mat(dh, b, d).noalias() += daz * as_cmat(cx.uz->val(), d, d).transpose();
          as_mat(dh, b, d).noalias() += dar * as_cmat(cx.ur->val(), d, d).transpose();
          if (cx.uz->requires_grad) as_mat(gUz, d, d).noalias() += hp.transpose() * daz;
          if (cx.ur->requires_grad) as_mat(gUr, d, d).noalias() += hp.transpose() * dar;
        }

        const Tensor<S>& xv = xn->val();
        auto add_into = [&](Node<S>* pn, const Tensor<S>& src) {
          if (!pn->requires_grad) return;
          Tensor<S>& g = tp.grad_of(*pn);
          for (int64_t i = 0; i < src.numel(); ++i) g.v[i] += src.v[i];
        };
        add_into(cx.uz, gUz);
        add_into(cx.ur, gUr);
        add_into(cx.uh, gUh);
        auto weight_grads = [&](Node<S>* wn, Node<S>* bn2,
                                const Tensor<S>& dA) {
          if (wn->requires_grad) {
            Tensor<S>& gw = tp.grad_of(*wn);
            as_mat(gw, f, d).noalias() +=
                as_cmat(xv, rows, f).transpose() * as_cmat(dA, rows, d);
          }
          if (bn2->requires_grad) {
            Tensor<S>& gb = tp.grad_of(*bn2);
            for (int64_t i = 0; i < rows; ++i)
              for (int64_t j = 0; j < d; ++j) gb.v[j] += dA.v[i * d + j];
          }
        };
        weight_grads(cx.wz, cx.bz, dAz);
        weight_grads(cx.wr, cx.br, dAr);
        weight_grads(cx.wh, cx.bh, dAh);
        if (xn->requires_grad) {
          Tensor<S>& gx = tp.grad_of(*xn);
          as_mat(gx, rows, f).noalias() +=
              as_cmat(dAz, rows, d) * as_cmat(cx.wz->val(), f, d).transpose();
          as_mat(gx, rows, f).noalias() +=
              as_cmat(dAr, rows, d) * as_cmat(cx.wr->val(), f, d).transpose();
          as_mat(gx, rows, f).noalias() +=
              as_cmat(dAh, rows, d) * as_cmat(cx.wh->val(), f, d).transpose();
        }
      });
}

}  // namespace trajcl
