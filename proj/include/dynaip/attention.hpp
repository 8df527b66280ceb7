// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "dynaip/autodiff.hpp"

namespace dynaip {

/// Multi-head scaled dot-product attention. q is p x d, k and v are r x d;
/// heads split the d columns into contiguous blocks of d / heads and every
/// head uses the 1/sqrt(d / heads) temperature. Returns p x d.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads);

/// Attention probabilities averaged over heads (p x r).
Var head_averaged_probs(Var q, Var k, std::size_t heads);

}  // namespace dynaip
