// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <concepts>
#include <cstddef>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "tripletformer/rng.hpp"
#include "tripletformer/tensor.hpp"

namespace tripletformer {

enum class Activation { relu, gelu };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation a);
Tensor activate(const Tensor& x, Activation a);

/// Affine map x * weight + bias, weight [in x out], bias [out].
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
};

/// Xavier-uniform weight, zero bias.
Linear init_linear(std::size_t in, std::size_t out, Rng& rng);
Tensor apply(const Linear& layer, const Tensor& x);

/// Pointwise two-layer network: out(act(hidden(x))).
struct FeedForward {
  Linear hidden;
  Linear out;
  Activation activation = Activation::relu;
};

FeedForward init_feed_forward(std::size_t in, std::size_t hidden, std::size_t out, Activation act, Rng& rng);
Tensor apply(const FeedForward& ff, const Tensor& x);

/// Multi-head attention projections. Head h reads queries through w_q[h]
/// [query_dim x head_dim] and keys/values through w_k[h], w_v[h]
/// [key_dim x head_dim]; the concatenated heads go through w_o [d x d].
struct MhaParams {
  std::vector<Tensor> w_q;
  std::vector<Tensor> w_k;
  std::vector<Tensor> w_v;
  Tensor w_o;
  std::size_t num_heads = 1;
  std::size_t model_dim = 0;

  std::size_t head_dim() const { return model_dim / num_heads; }
  std::size_t key_dim() const { return w_k.empty() ? 0 : w_k.front().rows(); }
  void validate() const;
};

MhaParams init_mha(std::size_t model_dim, std::size_t key_dim, std::size_t num_heads, Rng& rng);

/// Multihead attention block: H = act(q + MHA(q, k, v)); out = act(H + MLP(H)).
/// No layer normalization.
struct MabParams {
  MhaParams mha;
  FeedForward mlp;
  Activation activation = Activation::relu;

  std::size_t model_dim() const { return mha.model_dim; }
};

/// The MLP hidden width equals the model dimension.
MabParams init_mab(std::size_t model_dim, std::size_t key_dim, std::size_t num_heads, Activation act,
                   Rng& rng);

/// Induced block: `induced` [l x d] attends to the keys through `inner`, then
/// the queries attend to that summary through `outer`.
struct ImabParams {
  MabParams inner;
  MabParams outer;
  Tensor induced;

  std::size_t num_induced() const { return induced.rows(); }
};

/// Induced points are drawn from N(0, sd = 1/sqrt(d)).
ImabParams init_imab(std::size_t model_dim, std::size_t key_dim, std::size_t num_induced,
                     std::size_t num_heads, Activation act, Rng& rng);

/// softmax(Q K^T / sqrt(d'), key_mask) V.
///
/// Adds L_q*L_k*d' to op_counters().score_macs; the two products also count
/// L_q*L_k*d' + L_q*L_k*d_v towards matmul_macs.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& key_mask = {});

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& params,
                            const Mask& key_mask = {});

/// Returns H = act(q + MHA(q, k, v)), the first half of a MAB.
Tensor mab_attention_sublayer(const Tensor& q, const Tensor& k, const Tensor& v, const MabParams& params,
                              const Mask& key_mask = {});
/// Returns act(H + MLP(H)), the second half of a MAB.
Tensor mab_feed_forward_sublayer(const Tensor& h, const MabParams& params);

Tensor mab(const Tensor& q, const Tensor& k, const Tensor& v, const MabParams& params,
           const Mask& key_mask = {});

/// IMAB(q, k, v) = MAB(q, H, H) with H = MAB(induced, k, v).
///
/// `query_mask` only marks rows whose outputs the caller will discard; a query
/// row never influences another, so nothing is suppressed inside the block.
/// Query-key scores cost (L_q*l + l*L_k)*d rather than L_q*L_k*d.
Tensor imab(const Tensor& q, const Tensor& k, const Tensor& v, const ImabParams& params,
            const Mask& query_mask = {}, const Mask& key_mask = {});

// Parameter enumeration in a fixed order. `fn(name, tensor)` is invoked with
// `Tensor&` or `const Tensor&` depending on the constness of the block.

template <class L, class F>
  requires std::same_as<std::remove_const_t<L>, Linear>
void for_each_param(L& layer, const std::string& prefix, F&& fn) {
  fn(prefix + ".weight", layer.weight);
  fn(prefix + ".bias", layer.bias);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, FeedForward>
void for_each_param(P& ff, const std::string& prefix, F&& fn) {
  for_each_param(ff.hidden, prefix + ".hidden", fn);
  for_each_param(ff.out, prefix + ".out", fn);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, MhaParams>
void for_each_param(P& mha, const std::string& prefix, F&& fn) {
  for (std::size_t h = 0; h < mha.w_q.size(); ++h) {
    const std::string head = prefix + ".head" + std::to_string(h);
    fn(head + ".w_q", mha.w_q[h]);
    fn(head + ".w_k", mha.w_k[h]);
    fn(head + ".w_v", mha.w_v[h]);
  }
  fn(prefix + ".w_o", mha.w_o);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, MabParams>
void for_each_param(P& block, const std::string& prefix, F&& fn) {
  for_each_param(block.mha, prefix + ".mha", fn);
  for_each_param(block.mlp, prefix + ".mlp", fn);
}

template <class P, class F>
  requires std::same_as<std::remove_const_t<P>, ImabParams>
void for_each_param(P& block, const std::string& prefix, F&& fn) {
  fn(prefix + ".induced", block.induced);
  for_each_param(block.inner, prefix + ".inner", fn);
  for_each_param(block.outer, prefix + ".outer", fn);
}

}  // namespace tripletformer
