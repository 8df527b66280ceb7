// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/attention.hpp"

#include <cmath>
#include <vector>

#include "dynaip/error.hpp"

namespace dynaip {

namespace {

std::size_t head_width(Var q, Var k, Var* v, std::size_t heads) {
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (k.cols() != d || (v && v->cols() != d) || (v && v->rows() != k.rows())) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) +
                         (v ? ", v " + shape_string(v->shape()) : std::string()));
  }
  return d / heads;
}

Var head_probs(Var q, Var k, std::size_t h, std::size_t hd) {
  Var qh = slice_cols(q, h * hd, hd);
  Var kh = slice_cols(k, h * hd, hd);
  return softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(hd))));
}

}  // namespace

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads) {
  const std::size_t hd = head_width(q, k, &v, heads);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(matmul(head_probs(q, k, h, hd), slice_cols(v, h * hd, hd)));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

Var head_averaged_probs(Var q, Var k, std::size_t heads) {
  const std::size_t hd = head_width(q, k, nullptr, heads);
  Var acc = head_probs(q, k, 0, hd);
  for (std::size_t h = 1; h < heads; ++h) acc = add(acc, head_probs(q, k, h, hd));
  return heads == 1 ? acc : scale(acc, 1.0 / static_cast<double>(heads));
}

}  // namespace dynaip
