// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "tripletformer/attention.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tripletformer/errors.hpp"
#include "tripletformer/rng.hpp"

namespace tripletformer {
namespace {

// Plain nested-vector reference implementation.
using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t p = 0; p < b.size(); ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

Mat ref_attention(const Mat& q, const Mat& k, const Mat& v, const Mask& mask) {
  const double d = static_cast<double>(q[0].size());
  Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> w(k.size(), 0.0);
    double z = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      if (!mask.empty() && !mask[j]) continue;
      double s = 0.0;
      for (std::size_t p = 0; p < q[i].size(); ++p) s += q[i][p] * k[j][p];
      w[j] = std::exp(s / std::sqrt(d));
      z += w[j];
    }
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t p = 0; p < v[0].size(); ++p) out[i][p] += w[j] / z * v[j][p];
  }
  return out;
}

Mat ref_mha(const Mat& q, const Mat& k, const Mat& v, const MhaParams& p, const Mask& mask) {
  Mat concat(q.size());
  for (std::size_t h = 0; h < p.num_heads; ++h) {
    const Mat head = ref_attention(mm(q, to_mat(p.w_q[h])), mm(k, to_mat(p.w_k[h])), mm(v, to_mat(p.w_v[h])), mask);
    for (std::size_t i = 0; i < q.size(); ++i) concat[i].insert(concat[i].end(), head[i].begin(), head[i].end());
  }
  return mm(concat, to_mat(p.w_o));
}

double act(double x, Activation a) {
  return a == Activation::relu ? std::max(x, 0.0) : 0.5 * x * std::erfc(-x / std::sqrt(2.0));
}

Mat ref_linear(const Mat& x, const Linear& l) {
  Mat y = mm(x, to_mat(l.weight));
  for (auto& row : y)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += l.bias[j];
  return y;
}

Mat ref_mab(const Mat& q, const Mat& k, const Mat& v, const MabParams& p, const Mask& mask) {
  const Mat att = ref_mha(q, k, v, p.mha, mask);
  Mat h = q;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h[i].size(); ++j) h[i][j] = act(q[i][j] + att[i][j], p.activation);
  Mat hidden = ref_linear(h, p.mlp.hidden);
  for (auto& row : hidden)
    for (auto& x : row) x = act(x, p.mlp.activation);
  const Mat ff = ref_linear(hidden, p.mlp.out);
  Mat out = h;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h[i].size(); ++j) out[i][j] = act(h[i][j] + ff[i][j], p.activation);
  return out;
}

Tensor random_tensor(Shape shape, Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v));
}

void expect_close(const Tensor& got, const Mat& want, double tol) {
  ASSERT_EQ(got.rows(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    ASSERT_EQ(got.cols(), want[i].size());
    for (std::size_t j = 0; j < want[i].size(); ++j) EXPECT_NEAR(got.at(i, j), want[i][j], tol) << i << "," << j;
  }
}

// ---- layers --------------------------------------------------------------------

TEST(Linear, XavierBoundsAndZeroBias) {
  Rng rng(1);
  const Linear l = init_linear(10, 6, rng);
  const double bound = std::sqrt(6.0 / 16.0);
  for (double w : l.weight.values()) EXPECT_LE(std::abs(w), bound);
  for (double b : l.bias.values()) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(l.in_features(), 10u);
  EXPECT_EQ(l.out_features(), 6u);
}

TEST(Activation, ParseAndApply) {
  EXPECT_EQ(parse_activation("gelu"), Activation::gelu);
  EXPECT_EQ(to_string(Activation::relu), "relu");
  EXPECT_THROW(parse_activation("tanh"), std::invalid_argument);
}

// ---- attention -------------------------------------------------------------------

TEST(Attention, MatchesBruteForceWithMask) {
  Rng rng(2);
  const Tensor q = random_tensor({3, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 2}, rng);
  const Mask mask{true, true, false, true, false};
  expect_close(scaled_dot_attention(q, k, v, mask), ref_attention(to_mat(q), to_mat(k), to_mat(v), mask), 1e-14);
  expect_close(scaled_dot_attention(q, k, v), ref_attention(to_mat(q), to_mat(k), to_mat(v), {}), 1e-14);
}

TEST(Attention, CountsScoreMultiplyAdds) {
  Rng rng(3);
  const Tensor q = random_tensor({7, 4}, rng), k = random_tensor({9, 4}, rng);
  reset_op_counters();
  scaled_dot_attention(q, k, k);
  EXPECT_EQ(op_counters().score_macs, 7u * 9u * 4u);
}

TEST(Attention, RejectsEmptyOrFullyMaskedKeys) {
  const Tensor q = Tensor::zeros({2, 3});
  EXPECT_THROW(scaled_dot_attention(q, Tensor::zeros({0, 3}), Tensor::zeros({0, 3})), EmptyAttentionSupport);
  EXPECT_THROW(scaled_dot_attention(q, Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), Mask{false, false}),
               EmptyAttentionSupport);
  EXPECT_THROW(scaled_dot_attention(q, Tensor::zeros({2, 4}), Tensor::zeros({2, 4})), DimensionError);
  EXPECT_THROW(scaled_dot_attention(q, Tensor::zeros({2, 3}), Tensor::zeros({3, 3})), DimensionError);
}

TEST(Mha, MatchesHeadByHeadOracle) {
  Rng rng(4);
  const MhaParams p = init_mha(6, 5, 3, rng);
  EXPECT_EQ(p.head_dim(), 2u);
  EXPECT_EQ(p.key_dim(), 5u);
  const Tensor q = random_tensor({4, 6}, rng), k = random_tensor({7, 5}, rng), v = random_tensor({7, 5}, rng);
  const Mask mask{true, false, true, true, true, false, true};
  expect_close(multi_head_attention(q, k, v, p, mask), ref_mha(to_mat(q), to_mat(k), to_mat(v), p, mask), 1e-13);
}

TEST(Mha, ValidatesShapes) {
  Rng rng(5);
  EXPECT_THROW(init_mha(6, 6, 4, rng), DimensionError);
  const MhaParams p = init_mha(4, 4, 2, rng);
  EXPECT_THROW(multi_head_attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 4}), Tensor::zeros({2, 4}), p),
               DimensionError);
  EXPECT_THROW(multi_head_attention(Tensor::zeros({2, 4}), Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), p),
               DimensionError);
}

class MabOracle : public ::testing::TestWithParam<Activation> {};

TEST_P(MabOracle, MatchesReference) {
  Rng rng(6);
  const MabParams p = init_mab(4, 3, 2, GetParam(), rng);
  const Tensor q = random_tensor({5, 4}, rng), k = random_tensor({6, 3}, rng);
  const Mask mask{true, true, false, true, false, true};
  expect_close(mab(q, k, k, p, mask), ref_mab(to_mat(q), to_mat(k), to_mat(k), p, mask), 1e-13);
}

INSTANTIATE_TEST_SUITE_P(Activations, MabOracle, ::testing::Values(Activation::relu, Activation::gelu),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Mab, IsCompositionOfItsSublayers) {
  Rng rng(7);
  const MabParams p = init_mab(4, 4, 1, Activation::relu, rng);
  const Tensor q = random_tensor({3, 4}, rng), k = random_tensor({5, 4}, rng);
  const Tensor h = mab_attention_sublayer(q, k, k, p);
  EXPECT_EQ(mab(q, k, k, p).values(), mab_feed_forward_sublayer(h, p).values());
}

// ---- induced block -------------------------------------------------------------------

TEST(Imab, EqualsTwoStackedMabsBitwise) {
  Rng rng(8);
  const ImabParams p = init_imab(8, 8, 4, 2, Activation::relu, rng);
  const Tensor x = random_tensor({10, 8}, rng);
  const Mask mask{true, true, true, false, true, true, false, true, true, true};
  const Tensor h = mab(p.induced, x, x, p.inner, mask);
  EXPECT_EQ(imab(x, x, x, p, {}, mask).values(), mab(x, h, h, p.outer).values());
}

TEST(Imab, InducedPointInitialization) {
  Rng rng(9);
  const ImabParams p = init_imab(16, 16, 64, 1, Activation::relu, rng);
  EXPECT_EQ(p.num_induced(), 64u);
  double ss = 0.0;
  for (double v : p.induced.values()) ss += v * v;
  EXPECT_NEAR(ss / static_cast<double>(p.induced.size()), 1.0 / 16.0, 0.01);
  EXPECT_THROW(init_imab(16, 16, 0, 1, Activation::relu, rng), std::invalid_argument);
}

TEST(Imab, ScoreCountsFollowClosedForms) {
  Rng rng(10);
  const std::size_t d = 8, l = 3, lq = 11, lk = 13;
  const MabParams m = init_mab(d, d, 2, Activation::relu, rng);
  const ImabParams im = init_imab(d, d, l, 2, Activation::relu, rng);
  const Tensor q = random_tensor({lq, d}, rng), k = random_tensor({lk, d}, rng);
  reset_op_counters();
  mab(q, k, k, m);
  EXPECT_EQ(op_counters().score_macs, lq * lk * d);
  reset_op_counters();
  imab(q, k, k, im);
  EXPECT_EQ(op_counters().score_macs, (lq * l + l * lk) * d);
}

TEST(Imab, MaskedKeysAreInvisible) {
  Rng rng(11);
  const ImabParams p = init_imab(4, 4, 2, 1, Activation::relu, rng);
  const Tensor q = random_tensor({3, 4}, rng);
  Tensor k = random_tensor({5, 4}, rng);
  const Mask mask{true, false, true, false, true};
  const Tensor before = imab(q, k, k, p, {}, mask);
  std::vector<double> vals = k.values();
  for (std::size_t j = 0; j < 4; ++j) {
    vals[1 * 4 + j] = 100.0 * (j + 1);
    vals[3 * 4 + j] = -50.0;
  }
  k = Tensor(k.shape(), vals);
  EXPECT_EQ(imab(q, k, k, p, {}, mask).values(), before.values());
  EXPECT_THROW(imab(q, k, k, p, Mask{true}, mask), DimensionError);
}

// ---- gradients --------------------------------------------------------------------------

TEST(AttentionGradients, MabAndImabPassFiniteDifferences) {
  Rng rng(12);
  const MabParams m = init_mab(4, 3, 2, Activation::gelu, rng);
  const ImabParams im = init_imab(4, 4, 2, 2, Activation::gelu, rng);
  const Tensor q = random_tensor({3, 4}, rng), k = random_tensor({4, 3}, rng), x = random_tensor({5, 4}, rng);
  const Mask mask{true, false, true, true};

  std::vector<Tensor> flat;
  for_each_param(m, "mab", [&](const std::string&, const Tensor& t) { flat.push_back(t); });
  for_each_param(im, "imab", [&](const std::string&, const Tensor& t) { flat.push_back(t); });
  flat.push_back(q);

  auto f = [&](std::span<const Tensor> p) {
    MabParams mm = m;
    ImabParams ii = im;
    std::size_t i = 0;
    for_each_param(mm, "mab", [&](const std::string&, Tensor& t) { t = p[i++]; });
    for_each_param(ii, "imab", [&](const std::string&, Tensor& t) { t = p[i++]; });
    const Tensor& qq = p[i];
    return add(sum(square(mab(qq, k, k, mm, mask))), mean(imab(x, x, x, ii)));
  };
  const GradCheckResult r = grad_check(f, flat, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-6) << "param " << r.worst_param << " index " << r.worst_index;
}

TEST(ForEachParam, NamesAndOrder) {
  Rng rng(13);
  const ImabParams p = init_imab(4, 4, 2, 2, Activation::relu, rng);
  std::vector<std::string> names;
  for_each_param(p, "enc0", [&](const std::string& n, const Tensor&) { names.push_back(n); });
  ASSERT_FALSE(names.empty());
  EXPECT_EQ(names.front().rfind("enc0.", 0), 0u);
  EXPECT_NE(std::find(names.begin(), names.end(), "enc0.induced"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "enc0.inner.mha.head1.w_q"), names.end());
  // 2 MABs x (3 per head x 2 heads + w_o + 2 linear x 2) + induced.
  EXPECT_EQ(names.size(), 2u * (6 + 1 + 4) + 1);
}

}  // namespace
}  // namespace tripletformer
