// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "dynaip/tensor.hpp"

namespace dynaip {

/// Seeded random source. Every stochastic step in the library takes one of
/// these explicitly, so a fixed seed reproduces a run bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  /// Derives an independent child stream.
  Rng fork() { return Rng(engine_()); }
  std::uint64_t next_u64() { return engine_(); }

  Tensor normal_tensor(Shape shape, double stddev, DType dtype = DType::F32) {
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = stddev * normal();
    return Tensor(std::move(shape), std::move(data), dtype);
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi, DType dtype = DType::F32) {
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = uniform(lo, hi);
    return Tensor(std::move(shape), std::move(data), dtype);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dynaip
