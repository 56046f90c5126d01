// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "tripletformer/attention.hpp"

#include <cmath>

#include "tripletformer/errors.hpp"

namespace tripletformer {

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

Tensor activate(const Tensor& x, Activation a) { return a == Activation::relu ? relu(x) : gelu(x); }

Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return Linear{Tensor({in, out}, std::move(w)), Tensor::zeros({out})};
}

Tensor apply(const Linear& layer, const Tensor& x) { return add_row(matmul(x, layer.weight), layer.bias); }

FeedForward init_feed_forward(std::size_t in, std::size_t hidden, std::size_t out, Activation act, Rng& rng) {
  FeedForward ff;
  ff.hidden = init_linear(in, hidden, rng);
  ff.out = init_linear(hidden, out, rng);
  ff.activation = act;
  return ff;
}

Tensor apply(const FeedForward& ff, const Tensor& x) {
  return apply(ff.out, activate(apply(ff.hidden, x), ff.activation));
}

void MhaParams::validate() const {
  if (num_heads == 0 || model_dim == 0 || model_dim % num_heads != 0) {
    throw DimensionError("MHA: model_dim " + std::to_string(model_dim) + " not divisible by " +
                         std::to_string(num_heads) + " heads");
  }
  if (w_q.size() != num_heads || w_k.size() != num_heads || w_v.size() != num_heads) {
    throw DimensionError("MHA: expected one projection per head");
  }
  const std::size_t hd = head_dim();
  const std::size_t kd = key_dim();
  for (std::size_t h = 0; h < num_heads; ++h) {
    if (w_q[h].shape() != Shape{model_dim, hd} || w_k[h].shape() != Shape{kd, hd} ||
        w_v[h].shape() != Shape{kd, hd}) {
      throw DimensionError("MHA: head " + std::to_string(h) + " projections have inconsistent shapes");
    }
  }
  if (w_o.shape() != Shape{model_dim, model_dim}) {
    throw DimensionError("MHA: output projection " + w_o.shape_string() + " is not " +
                         shape_string({model_dim, model_dim}));
  }
}

MhaParams init_mha(std::size_t model_dim, std::size_t key_dim, std::size_t num_heads, Rng& rng) {
  MhaParams p;
  p.num_heads = num_heads;
  p.model_dim = model_dim;
  if (num_heads == 0 || model_dim % num_heads != 0) p.validate();  // throws
  const std::size_t hd = model_dim / num_heads;
  for (std::size_t h = 0; h < num_heads; ++h) {
    p.w_q.push_back(init_linear(model_dim, hd, rng).weight);
    p.w_k.push_back(init_linear(key_dim, hd, rng).weight);
    p.w_v.push_back(init_linear(key_dim, hd, rng).weight);
  }
  p.w_o = init_linear(model_dim, model_dim, rng).weight;
  return p;
}

MabParams init_mab(std::size_t model_dim, std::size_t key_dim, std::size_t num_heads, Activation act,
                   Rng& rng) {
  MabParams p;
  p.mha = init_mha(model_dim, key_dim, num_heads, rng);
  p.mlp = init_feed_forward(model_dim, model_dim, model_dim, act, rng);
  p.activation = act;
  return p;
}

ImabParams init_imab(std::size_t model_dim, std::size_t key_dim, std::size_t num_induced,
                     std::size_t num_heads, Activation act, Rng& rng) {
  if (num_induced == 0) throw std::invalid_argument("IMAB needs at least one induced point");
  ImabParams p;
  const double sd = 1.0 / std::sqrt(static_cast<double>(model_dim));
  std::vector<double> h(num_induced * model_dim);
  for (auto& v : h) v = rng.normal(0.0, sd);
  p.induced = Tensor({num_induced, model_dim}, std::move(h));
  p.inner = init_mab(model_dim, key_dim, num_heads, act, rng);
  p.outer = init_mab(model_dim, model_dim, num_heads, act, rng);
  return p;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& key_mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("attention: expected rank-2 q, k, v");
  }
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query width " + q.shape_string() + " differs from key width " +
                         k.shape_string());
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: keys " + k.shape_string() + " and values " + v.shape_string() +
                         " have different lengths");
  }
  if (k.rows() == 0) throw EmptyAttentionSupport();
  op_counters().score_macs += static_cast<std::uint64_t>(q.rows()) * k.rows() * q.cols();

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
  return matmul(softmax_rows(scores, key_mask), v);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& params,
                            const Mask& key_mask) {
  params.validate();
  if (q.cols() != params.model_dim) {
    throw DimensionError("MHA: query " + q.shape_string() + " does not match model_dim " +
                         std::to_string(params.model_dim));
  }
  if (k.cols() != params.key_dim() || v.cols() != params.key_dim()) {
    throw DimensionError("MHA: keys " + k.shape_string() + " / values " + v.shape_string() +
                         " do not match key_dim " + std::to_string(params.key_dim()));
  }
  std::vector<Tensor> heads;
  heads.reserve(params.num_heads);
  for (std::size_t h = 0; h < params.num_heads; ++h) {
    heads.push_back(scaled_dot_attention(matmul(q, params.w_q[h]), matmul(k, params.w_k[h]),
                                         matmul(v, params.w_v[h]), key_mask));
  }
  return matmul(concat_cols(heads), params.w_o);
}

Tensor mab_attention_sublayer(const Tensor& q, const Tensor& k, const Tensor& v, const MabParams& params,
                              const Mask& key_mask) {
  return activate(add(q, multi_head_attention(q, k, v, params.mha, key_mask)), params.activation);
}

Tensor mab_feed_forward_sublayer(const Tensor& h, const MabParams& params) {
  return activate(add(h, apply(params.mlp, h)), params.activation);
}

Tensor mab(const Tensor& q, const Tensor& k, const Tensor& v, const MabParams& params, const Mask& key_mask) {
  return mab_feed_forward_sublayer(mab_attention_sublayer(q, k, v, params, key_mask), params);
}

Tensor imab(const Tensor& q, const Tensor& k, const Tensor& v, const ImabParams& params,
            const Mask& query_mask, const Mask& key_mask) {
  if (!query_mask.empty() && query_mask.size() != q.rows()) {
    throw DimensionError("IMAB: query mask of length " + std::to_string(query_mask.size()) + " for " +
                         q.shape_string());
  }
  Tensor summary = mab(params.induced, k, v, params.inner, key_mask);
  return mab(q, summary, summary, params.outer);
}

}  // namespace tripletformer
