// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/params.hpp"

#include <cmath>

#include "dynaip/error.hpp"

namespace dynaip {

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back(Param{name, std::move(value), trainable});
}

Param& ParamStore::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return params_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return params_[it->second].value;
}

void ParamStore::set(const std::string& name, Tensor value) {
  Param& p = param(name);
  if (p.value.shape() != value.shape()) {
    throw DimensionError("parameter " + name + ": shape " + shape_string(value.shape()) +
                         " does not match " + shape_string(p.value.shape()));
  }
  p.value = std::move(value);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.value.numel();
  return n;
}

Var ParamStore::bind(Tape& tape, const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  const Param& p = params_[it->second];
  return tape.named_leaf(name, p.value, p.trainable && tape.recording());
}

void ParamStore::set_trainable(const std::function<bool(const std::string&)>& predicate) {
  for (Param& p : params_) p.trainable = predicate(p.name);
}

ParamStore ParamStore::cast(DType dtype) const {
  ParamStore out;
  for (const Param& p : params_) out.add(p.name, p.value.cast(dtype), p.trainable);
  return out;
}

Tensor init_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out, DType dtype) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_tensor({fan_in, fan_out}, -bound, bound, dtype);
}

}  // namespace dynaip
