// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynaip/autodiff.hpp"
#include "dynaip/rng.hpp"
#include "dynaip/tensor.hpp"

namespace dynaip {

struct Param {
  std::string name;
  Tensor value;
  bool trainable = true;
};

/// Named parameter collection in insertion order. Names are unique.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.contains(name); }
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor value);
  Param& param(const std::string& name);

  std::span<const Param> params() const { return params_; }
  std::span<Param> params() { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  /// Binds `name` to the tape (once per tape). Trainable parameters become
  /// differentiable leaves when the tape records gradients.
  Var bind(Tape& tape, const std::string& name) const;

  void set_trainable(const std::function<bool(const std::string&)>& predicate);
  ParamStore cast(DType dtype) const;

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight of shape fan_in x fan_out.
Tensor init_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out, DType dtype = DType::F32);

}  // namespace dynaip
