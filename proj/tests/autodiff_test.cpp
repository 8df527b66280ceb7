// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "dynaip/attention.hpp"
#include "dynaip/error.hpp"
#include "dynaip/rng.hpp"
#include "test_support.hpp"

namespace dynaip {
namespace {

using testing::op_gradcheck;
using Inputs = std::vector<Var>;

constexpr double kTol = 1e-7;

Tensor rnd(Rng& rng, Shape s, double scale = 1.0) { return rng.normal_tensor(std::move(s), scale, DType::F64); }

/// Reduces a matrix to a scalar through fixed random weights so that
/// symmetric outputs (softmax rows, normalized rows) still carry gradient.
Var project(Tape& tape, Var y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, tape.constant(rng.normal_tensor(y.shape(), 1.0, DType::F64))));
}

TEST(Autodiff, ElementwiseOps) {
  Rng rng(1);
  const Tensor a = rnd(rng, {3, 4}), b = rnd(rng, {3, 4});
  EXPECT_LT(op_gradcheck({a, b}, [](Tape& t, Inputs& v) { return project(t, add(v[0], v[1])); }), kTol);
  EXPECT_LT(op_gradcheck({a, b}, [](Tape& t, Inputs& v) { return project(t, sub(v[0], v[1])); }), kTol);
  EXPECT_LT(op_gradcheck({a, b}, [](Tape& t, Inputs& v) { return project(t, mul(v[0], v[1])); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape& t, Inputs& v) { return project(t, scale(v[0], -2.5)); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape& t, Inputs& v) { return project(t, add_const(v[0], 0.7)); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape& t, Inputs& v) { return project(t, gelu(v[0])); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape& t, Inputs& v) { return project(t, tanh(v[0])); }), kTol);
  const Tensor pos = Tensor::full({3, 4}, 2.0, DType::F64);
  EXPECT_LT(op_gradcheck({ops::add(pos, ops::scale(a, 0.3))}, [](Tape& t, Inputs& v) { return project(t, reciprocal(v[0])); }),
            kTol);
}

TEST(Autodiff, BroadcastOps) {
  Rng rng(2);
  const Tensor a = rnd(rng, {3, 4}), r = rnd(rng, {1, 4}), c = rnd(rng, {3, 1}), s = rnd(rng, {1, 1});
  EXPECT_LT(op_gradcheck({a, r}, [](Tape& t, Inputs& v) { return project(t, add_row(v[0], v[1])); }), kTol);
  EXPECT_LT(op_gradcheck({a, r}, [](Tape& t, Inputs& v) { return project(t, mul_row(v[0], v[1])); }), kTol);
  EXPECT_LT(op_gradcheck({a, c}, [](Tape& t, Inputs& v) { return project(t, mul_col(v[0], v[1])); }), kTol);
  EXPECT_LT(op_gradcheck({a, s}, [](Tape& t, Inputs& v) { return project(t, mul_scalar(v[0], v[1])); }), kTol);
}

TEST(Autodiff, MatrixOps) {
  Rng rng(3);
  const Tensor a = rnd(rng, {3, 5}), b = rnd(rng, {5, 2}), bias = rnd(rng, {1, 2});
  EXPECT_LT(op_gradcheck({a, b}, [](Tape& t, Inputs& v) { return project(t, matmul(v[0], v[1])); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape& t, Inputs& v) { return project(t, transpose(v[0])); }), kTol);
  EXPECT_LT(op_gradcheck({a, b, bias}, [](Tape& t, Inputs& v) { return project(t, linear(v[0], v[1], v[2])); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape& t, Inputs& v) { return project(t, reshape(v[0], {5, 3})); }), kTol);
}

TEST(Autodiff, NormalizationOps) {
  Rng rng(4);
  const Tensor a = rnd(rng, {3, 6}, 2.0), g = rnd(rng, {1, 6}), b = rnd(rng, {1, 6});
  EXPECT_LT(op_gradcheck({a}, [](Tape& t, Inputs& v) { return project(t, softmax_rows(v[0])); }), kTol);
  EXPECT_LT(op_gradcheck({a, g, b}, [](Tape& t, Inputs& v) { return project(t, layer_norm(v[0], v[1], v[2], 1e-5)); }),
            kTol);
}

TEST(Autodiff, StructuralOps) {
  Rng rng(5);
  const Tensor a = rnd(rng, {3, 4}), b = rnd(rng, {2, 4}), c = rnd(rng, {3, 2});
  EXPECT_LT(op_gradcheck({a, b}, [](Tape& t, Inputs& v) {
              std::array<Var, 2> parts{v[0], v[1]};
              return project(t, concat_rows(parts));
            }),
            kTol);
  EXPECT_LT(op_gradcheck({a, c}, [](Tape& t, Inputs& v) {
              std::array<Var, 2> parts{v[0], v[1]};
              return project(t, concat_cols(parts));
            }),
            kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape& t, Inputs& v) { return project(t, slice_rows(v[0], 1, 2)); }), kTol);
  EXPECT_LT(op_gradcheck({a}, [](Tape& t, Inputs& v) { return project(t, slice_cols(v[0], 1, 2)); }), kTol);
  EXPECT_LT(op_gradcheck({a, b}, [](Tape&, Inputs& v) { return mse(v[0], slice_rows(concat_rows(std::array<Var, 2>{v[1], v[0]}), 2, 3)); }),
            kTol);
  Rng angles(6);
  const Tensor cos_t = angles.uniform_tensor({3, 2}, -1.0, 1.0, DType::F64);
  std::vector<double> sin_v;
  for (double x : cos_t.data()) sin_v.push_back(std::sqrt(1.0 - x * x));
  const Tensor sin_t({3, 2}, sin_v, DType::F64);
  EXPECT_LT(op_gradcheck({a}, [&](Tape& t, Inputs& v) { return project(t, rotate_pairs(v[0], cos_t, sin_t)); }), kTol);
}

TEST(Autodiff, MultiHeadAttention) {
  Rng rng(7);
  const Tensor q = rnd(rng, {4, 8}), k = rnd(rng, {5, 8}), v = rnd(rng, {5, 8});
  EXPECT_LT(op_gradcheck({q, k, v}, [](Tape& t, Inputs& x) { return project(t, multi_head_attention(x[0], x[1], x[2], 2)); }),
            kTol);
}

TEST(Autodiff, AttentionRowsAreIndependent) {
  // Each output row depends only on its own query row.
  Rng rng(8);
  const Tensor q = rnd(rng, {4, 8}), k = rnd(rng, {5, 8}), v = rnd(rng, {5, 8});
  Tape tape(false);
  const Tensor full = multi_head_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2).value();
  const Tensor tail = multi_head_attention(tape.constant(q.row_slice(2, 2)), tape.constant(k), tape.constant(v), 2).value();
  EXPECT_TRUE(full.row_slice(2, 2).bit_equal(tail));
}

TEST(Autodiff, FanOutAccumulates) {
  Tape tape(true);
  Var x = tape.leaf(Tensor({1, 1}, {3.0}, DType::F64));
  Var y = mul(x, x);  // x^2
  Var z = add(y, x);  // x^2 + x
  const Gradients g = tape.backward(sum(z));
  EXPECT_DOUBLE_EQ(g.of(x).item(), 7.0);
}

TEST(Autodiff, UnusedLeafGetsExactZero) {
  Tape tape(true);
  Var x = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}, DType::F64));
  Var unused = tape.leaf(Tensor({1, 3}, {1, 2, 3}, DType::F64));
  const Gradients g = tape.backward(sum(x));
  EXPECT_EQ(g.of(unused).max_abs(), 0.0);
  EXPECT_EQ(g.named("never.bound", Tensor::zeros({2, 2})).max_abs(), 0.0);
}

TEST(Autodiff, NamedLeafBindsOnce) {
  Tape tape(true);
  const Tensor w = Tensor::full({1, 1}, 2.0, DType::F64);
  Var a = tape.named_leaf("w", w, true);
  Var b = tape.named_leaf("w", w, true);
  EXPECT_EQ(a.id(), b.id());
  const Gradients g = tape.backward(sum(mul(a, b)));
  EXPECT_DOUBLE_EQ(g.named("w", w).item(), 4.0);
}

TEST(Autodiff, BackwardNeedsScalar) {
  Tape tape(true);
  Var x = tape.leaf(Tensor::zeros({2, 2}, DType::F64));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Autodiff, NoGradTapeRecordsNoClosures) {
  Tape tape(false);
  Var x = tape.leaf(Tensor::zeros({2, 2}, DType::F64));
  EXPECT_FALSE(tape.requires_grad(add(x, x)));
}

TEST(Tape, ValueReferencesSurviveGrowth) {
  Tape tape(false);
  Var a = tape.constant(Tensor::full({2, 2}, 3.0));
  const Tensor& ref = a.value();
  for (int i = 0; i < 5000; ++i) tape.constant(Tensor::zeros({1, 1}));
  EXPECT_EQ(ref[0], 3.0);
  EXPECT_EQ(&ref, &a.value());
}

}  // namespace
}  // namespace dynaip
