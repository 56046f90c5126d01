// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "tripletformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "tripletformer/errors.hpp"

namespace tripletformer {

namespace {

constexpr std::size_t kNoParent = std::numeric_limits<std::size_t>::max();

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + t.shape_string());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

using ValuePtr = std::shared_ptr<const std::vector<double>>;

template <class Forward, class Derivative>
Tensor unary(const Tensor& x, Forward forward, Derivative derivative) {
  std::vector<double> out(x.size());
  const auto& in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  ValuePtr saved = x.storage();
  return make_result(Tensor(x.shape(), std::move(out)), {x},
                     [saved, derivative](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       auto& gx = *grads[0];
                       const auto& v = *saved;
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(v[i]);
                     });
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() : shape_{0}, data_(std::make_shared<const std::vector<double>>()) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (numel(shape_) != data.size()) {
    throw DimensionError("tensor shape " + tripletformer::shape_string(shape_) + " needs " +
                         std::to_string(numel(shape_)) + " values, got " + std::to_string(data.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("Tensor::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::column(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n, 1}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() == 0) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() < 2) return 1;
  return shape_[1];
}

double Tensor::at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item(): tensor " + shape_string() + " is not a scalar");
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = 0;
  t.generation_ = 0;
  return t;
}

std::string Tensor::shape_string() const { return tripletformer::shape_string(shape_); }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Gradients / Tape -----------------------------------------------------

const Tensor& Gradients::of(const Tensor& watched) const {
  if (watched.tape() != tape_ || watched.generation_ != generation_) {
    throw std::invalid_argument("Gradients::of: tensor was not watched on this tape pass");
  }
  auto it = by_node_.find(watched.node());
  if (it == by_node_.end()) throw std::invalid_argument("Gradients::of: tensor is not a watched leaf");
  return it->second;
}

bool Gradients::contains(const Tensor& watched) const {
  return watched.tape() == tape_ && watched.generation_ == generation_ &&
         by_node_.contains(watched.node());
}

void Tape::check_owned(const Tensor& t) const {
  if (t.tape_ != this) throw std::invalid_argument("tensor belongs to a different tape");
  if (t.generation_ != generation_ || t.node_ >= nodes_.size()) {
    throw std::invalid_argument("tensor was recorded before the tape was cleared");
  }
}

Tensor Tape::watch(const Tensor& value) {
  Node node;
  node.numel = value.size();
  node.shape = value.shape();
  node.leaf = true;
  nodes_.push_back(std::move(node));
  Tensor t = value.detach();
  t.tape_ = this;
  t.node_ = nodes_.size() - 1;
  t.generation_ = generation_;
  return t;
}

Tensor Tape::record(Tensor value, std::vector<Tensor> inputs, BackwardFn backward) {
  Node node;
  node.numel = value.size();
  node.parents.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tracked()) {
      check_owned(in);
      node.parents.push_back(in.node());
    } else {
      node.parents.push_back(kNoParent);
    }
  }
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  Tensor t = value.detach();
  t.tape_ = this;
  t.node_ = nodes_.size() - 1;
  t.generation_ = generation_;
  return t;
}

Gradients Tape::backward(const Tensor& loss) {
  check_owned(loss);
  if (loss.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " + loss.shape_string());
  }
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[loss.node()] = {1.0};

  std::vector<std::vector<double>*> parent_grads;
  for (std::size_t i = loss.node() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.leaf || grads[i].empty()) continue;
    parent_grads.assign(node.parents.size(), nullptr);
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      const auto parent = node.parents[p];
      if (parent == kNoParent) continue;
      if (grads[parent].empty()) grads[parent].assign(nodes_[parent].numel, 0.0);
      parent_grads[p] = &grads[parent];
    }
    node.backward(grads[i], parent_grads);
    std::vector<double>().swap(grads[i]);
  }

  Gradients out;
  out.tape_ = this;
  out.generation_ = generation_;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].leaf) continue;
    auto g = std::move(grads[i]);
    if (g.empty()) g.assign(nodes_[i].numel, 0.0);
    out.by_node_.emplace(i, Tensor(nodes_[i].shape, std::move(g)));
  }
  nodes_.clear();
  ++generation_;
  return out;
}

Tensor make_result(Tensor value, std::vector<Tensor> inputs, Tape::BackwardFn backward) {
  Tape* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.tracked()) continue;
    if (tape && in.tape() != tape) throw std::invalid_argument("operation mixes tensors from two tapes");
    tape = in.tape();
  }
  if (!tape) return value;
  return tape->record(std::move(value), std::move(inputs), std::move(backward));
}

OpCounters& op_counters() {
  thread_local OpCounters counters;
  return counters;
}

void reset_op_counters() { op_counters() = OpCounters{}; }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + a.shape_string() + " x " +
                         b.shape_string());
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  op_counters().matmul_macs += static_cast<std::uint64_t>(m) * k * n;

  ValuePtr va = a.storage(), vb = b.storage();
  return make_result(
      Tensor({m, n}, std::move(out)), {a, b},
      [va, vb, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> grads) {
        const double* pa = va->data();
        const double* pb = vb->data();
        if (grads[0]) {
          double* ga = grads[0]->data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb[p * n + j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (grads[1]) {
          double* gb = grads[1]->data();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = pa[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto& in = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  return make_result(Tensor({n, m}, std::move(out)), {a},
                     [m, n](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       auto& ga = *grads[0];
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                     });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(Tensor(a.shape(), std::move(out)), {a, b},
                     [](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       for (auto* gx : grads) {
                         if (!gx) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(Tensor(a.shape(), std::move(out)), {a, b},
                     [](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       if (grads[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                       if (grads[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  ValuePtr va = a.storage(), vb = b.storage();
  return make_result(Tensor(a.shape(), std::move(out)), {a, b},
                     [va, vb](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       if (grads[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * (*vb)[i];
                       if (grads[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * (*va)[i];
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  ValuePtr va = a.storage(), vb = b.storage();
  return make_result(Tensor(a.shape(), std::move(out)), {a, b},
                     [va, vb](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       const auto& x = *va;
                       const auto& y = *vb;
                       if (grads[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] / y[i];
                       if (grads[1])
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*grads[1])[i] -= g[i] * x[i] / (y[i] * y[i]);
                     });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result(Tensor(a.shape(), std::move(out)), {a},
                     [factor](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * factor;
                     });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + value;
  return make_result(Tensor(a.shape(), std::move(out)), {a},
                     [](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                     });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require_rank2(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.size() != n) {
    throw DimensionError("add_row: bias " + bias.shape_string() + " does not match " + a.shape_string());
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + bias[j];
  return make_result(Tensor({m, n}, std::move(out)), {a, bias},
                     [m, n](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       if (grads[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                       if (grads[1])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) (*grads[1])[j] += g[i * n + j];
                     });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x, [](double v) { return v * 0.5 * std::erfc(-v * kInvSqrt2); },
      [](double v) { return 0.5 * std::erfc(-v * kInvSqrt2) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v) { return sigmoid(v); });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

// ---- softmax --------------------------------------------------------------

Tensor softmax_rows(const Tensor& x, const Mask& key_mask) {
  require_rank2(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  const bool masked = !key_mask.empty();
  if (masked && key_mask.size() != n) {
    throw DimensionError("softmax_rows: mask of length " + std::to_string(key_mask.size()) +
                         " for " + x.shape_string());
  }
  auto active = [&](std::size_t j) { return !masked || key_mask[j]; };
  bool any = false;
  for (std::size_t j = 0; j < n && !any; ++j) any = active(j);
  if (!any) throw EmptyAttentionSupport();

  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (active(j)) hi = std::max(hi, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!active(j)) continue;
      out[i * n + j] = std::exp(row[j] - hi);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j)
      if (active(j)) out[i * n + j] /= total;
  }

  Tensor y({m, n}, std::move(out));
  ValuePtr vy = y.storage();
  return make_result(std::move(y), {x},
                     [vy, m, n](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       const auto& p = *vy;
                       auto& gx = *grads[0];
                       for (std::size_t i = 0; i < m; ++i) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += p[i * n + j] * g[i * n + j];
                         for (std::size_t j = 0; j < n; ++j)
                           gx[i * n + j] += p[i * n + j] * (g[i * n + j] - dot);
                       }
                     });
}

// ---- structural -----------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + parts.front().shape_string() + " vs " +
                           p.shape_string());
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + offset + j] = parts[k][i * widths[k] + j];
    offset += widths[k];
  }
  return make_result(Tensor({m, total}, std::move(out)), parts,
                     [m, total, widths](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (grads[k]) {
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               (*grads[k])[i * widths[k] + j] += g[i * total + offset + j];
                         }
                         offset += widths[k];
                       }
                     });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank2(a, "gather_rows");
  const std::size_t n = a.cols();
  std::vector<std::size_t> index(rows.begin(), rows.end());
  std::vector<double> out;
  out.reserve(index.size() * n);
  for (auto r : index) {
    if (r >= a.rows()) throw DimensionError("gather_rows: row " + std::to_string(r) + " out of " + a.shape_string());
    out.insert(out.end(), a.data().begin() + r * n, a.data().begin() + (r + 1) * n);
  }
  return make_result(Tensor({index.size(), n}, std::move(out)), {a},
                     [index, n](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       auto& ga = *grads[0];
                       for (std::size_t k = 0; k < index.size(); ++k)
                         for (std::size_t j = 0; j < n; ++j) ga[index[k] * n + j] += g[k * n + j];
                     });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result(Tensor::scalar(total), {a},
                     [](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       for (auto& v : *grads[0]) v += g[0];
                     });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty tensor");
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result(Tensor::scalar(total / n), {a},
                     [n](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                       for (auto& v : *grads[0]) v += g[0] / n;
                     });
}

// ---- gradient checking ----------------------------------------------------

GradCheckResult grad_check(const ScalarFunction& f, std::span<const Tensor> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  std::vector<Tensor> base;
  base.reserve(params.size());
  for (const auto& p : params) base.push_back(p.detach());

  std::vector<std::vector<double>> analytic(base.size());
  {
    Tape tape;
    std::vector<Tensor> watched;
    watched.reserve(base.size());
    for (const auto& p : base) watched.push_back(tape.watch(p));
    Tensor loss = f(watched);
    if (loss.size() != 1) throw DimensionError("grad_check: f must return a scalar");
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: f is not finite at the base point");
    if (loss.tracked()) {
      Gradients grads = tape.backward(loss);
      for (std::size_t i = 0; i < base.size(); ++i) analytic[i] = grads.of(watched[i]).values();
    } else {
      for (std::size_t i = 0; i < base.size(); ++i) analytic[i].assign(base[i].size(), 0.0);
    }
  }

  auto evaluate = [&](std::size_t which, std::size_t entry, double delta) {
    std::vector<Tensor> shifted = base;
    std::vector<double> values = base[which].values();
    values[entry] += delta;
    shifted[which] = Tensor(base[which].shape(), std::move(values));
    const double v = f(shifted).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: f is not finite at a perturbed point");
    return v;
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (std::size_t j = 0; j < base[i].size(); ++j) {
      const double numeric = (evaluate(i, j, eps) - evaluate(i, j, -eps)) / (2.0 * eps);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (rel > result.max_relative_error || result.entries_checked == 1) {
        result.max_relative_error = rel;
        result.worst_param = i;
        result.worst_index = j;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace tripletformer
