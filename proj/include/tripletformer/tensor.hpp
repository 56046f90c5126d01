// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tripletformer {

using Shape = std::vector<std::size_t>;

/// Row/column selection flags. An empty mask means "everything selected".
using Mask = std::vector<bool>;

class Tape;

/// Dense row-major double tensor.
///
/// The value buffer is shared and immutable, so copies are cheap and an
/// untracked tensor can be handed to other threads freely. A tensor produced
/// by an operation on a tracked input carries a handle to the tape that
/// recorded it; such tensors belong to the tape's thread.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Rank-2 tensor from nested rows, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  /// Column vector [n x 1].
  static Tensor column(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return *data_; }
  const std::vector<double>& values() const { return *data_; }
  std::shared_ptr<const std::vector<double>> storage() const { return data_; }

  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const;
  /// The single value of a one-element tensor.
  double item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  /// Same values, no tape handle.
  Tensor detach() const;

  std::string shape_string() const;

 private:
  friend class Tape;
  friend class Gradients;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
  std::uint64_t generation_ = 0;
};

std::string shape_string(const Shape& shape);

/// Gradients of a scalar loss with respect to the tensors watched on a tape.
class Gradients {
 public:
  /// Gradient for a tensor previously returned by Tape::watch. Watched tensors
  /// that did not influence the loss get an all-zero gradient.
  const Tensor& of(const Tensor& watched) const;
  bool contains(const Tensor& watched) const;
  std::size_t size() const { return by_node_.size(); }

 private:
  friend class Tape;
  std::uint64_t generation_ = 0;
  const Tape* tape_ = nullptr;
  std::unordered_map<std::size_t, Tensor> by_node_;
};

/// Dynamic reverse-mode tape.
///
/// Nodes are appended in execution order, so parents always precede children.
/// backward() walks the nodes once in reverse, then clears the tape; tensors
/// recorded before the clear can no longer be used with it.
class Tape {
 public:
  /// Called once per node during backward. `input_grads[i]` is the gradient
  /// buffer of input i (same size as that input) or null when input i is not
  /// tracked. Implementations accumulate with +=.
  using BackwardFn = std::function<void(std::span<const double> grad_out,
                                        std::span<std::vector<double>* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf; the returned tensor shares `value`'s data.
  Tensor watch(const Tensor& value);

  /// Records `value` as the output of an operation over `inputs`.
  Tensor record(Tensor value, std::vector<Tensor> inputs, BackwardFn backward);

  Gradients backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }

 private:
  struct Node {
    std::size_t numel = 0;
    Shape shape;  // leaves only
    std::vector<std::size_t> parents;  // npos for untracked inputs
    BackwardFn backward;
    bool leaf = false;
  };

  void check_owned(const Tensor& t) const;

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

/// Builds the result of a differentiable operation. When no input is tracked
/// the plain value is returned; otherwise it is recorded on the inputs' tape
/// (mixing tapes is an error). Custom operations outside this file use this.
Tensor make_result(Tensor value, std::vector<Tensor> inputs, Tape::BackwardFn backward);

/// Instrumentation, per thread.
struct OpCounters {
  /// m*k*n for every forward matmul.
  std::uint64_t matmul_macs = 0;
  /// Query-key score products inside attention (L_q * L_k * d per call).
  std::uint64_t score_macs = 0;
};

OpCounters& op_counters();
void reset_op_counters();

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// a[m x n] + bias broadcast over rows; bias holds n values (any shape).
Tensor add_row(const Tensor& a, const Tensor& bias);

Tensor relu(const Tensor& x);
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);
/// max(x, 0) + log1p(exp(-|x|)).
Tensor softplus(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);

/// Row-wise softmax over the columns selected by `key_mask` (length n, or
/// empty for all). Masked columns are exactly zero.
Tensor softmax_rows(const Tensor& x, const Mask& key_mask = {});

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- gradient checking ----------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

/// Compares the tape gradient of `f` at `params` against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps) for every entry. The relative error of
/// an entry is |a - b| / max(|a|, |b|, 1e-8).
GradCheckResult grad_check(const ScalarFunction& f, std::span<const Tensor> params, double eps);

}  // namespace tripletformer
