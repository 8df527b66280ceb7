// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynaip/tensor.hpp"

namespace dynaip {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode result: one gradient per recorded node.
class Gradients {
 public:
  /// Gradient with the shape of v; exactly zero when v does not reach the loss.
  Tensor of(Var v) const;
  /// Gradient of a leaf registered through Tape::named_leaf; zero tensor of
  /// `like`'s shape when the name was never bound.
  Tensor named(const std::string& name, const Tensor& like) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> grads_;
};

/// Dynamic operation record built during the forward pass. Records are
/// appended in execution order, so every record's inputs precede it and the
/// backward sweep is a single reverse scan.
///
/// A Tape is single-threaded and pinned in memory (Vars hold its address).
class Tape {
 public:
  using Backward = std::function<void(std::span<const double> grad_out,
                                      std::vector<std::vector<double>>& grads)>;

  explicit Tape(bool record_gradients = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Differentiable input.
  Var leaf(Tensor value);
  /// Leaf cached by name: the first call binds, later calls return the same Var.
  Var named_leaf(const std::string& name, const Tensor& value, bool requires_grad);
  bool has_named(const std::string& name) const;

  Gradients backward(Var loss) const;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const;
  bool requires_grad(std::size_t id) const;

  /// Appends a record. `backward` is dropped when no input needs a gradient.
  Var push(Tensor value, std::vector<Var> inputs, Backward backward);

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
  };

  bool recording_;
  std::deque<Node> nodes_;  // deque: values stay put while the tape grows
  std::unordered_map<std::string, std::size_t> named_;

  friend class Gradients;
};

// Differentiable operations. All inputs must live on the same tape.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_const(Var a, double c);
/// a (p x q) + row (1 x q) broadcast over rows.
Var add_row(Var a, Var row);
/// a (p x q) * row (1 x q) broadcast over rows.
Var mul_row(Var a, Var row);
/// a (p x q) * col (p x 1) broadcast over columns.
Var mul_col(Var a, Var col);
/// a * s for a 1 x 1 Var s.
Var mul_scalar(Var a, Var s);
Var softmax_rows(Var a);
Var layer_norm(Var a, Var gamma, Var beta, double eps);
Var gelu(Var a);
Var tanh(Var a);
/// Elementwise 1 / a.
Var reciprocal(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var slice_cols(Var a, std::size_t start, std::size_t count);
/// Pairwise planar rotation of columns (2k, 2k+1) by per-row angles given as
/// cos/sin tables of shape p x (q/2).
Var rotate_pairs(Var a, const Tensor& cos, const Tensor& sin);
Var reshape(Var a, Shape shape);
Var sum(Var a);
/// mean((a - b)^2) as a 1 x 1 Var.
Var mse(Var a, Var b);

/// x W + b for x (p x in), W (in x out), b (1 x out).
Var linear(Var x, Var weight, Var bias);

}  // namespace dynaip
