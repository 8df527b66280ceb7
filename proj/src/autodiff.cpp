// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "dynaip/error.hpp"

namespace dynaip {

namespace {

Tape& same_tape(std::initializer_list<Var> vars, const char* op) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw ContractError(std::string(op) + ": unbound Var");
    if (tape && v.tape() != tape) throw ContractError(std::string(op) + ": inputs live on different tapes");
    tape = v.tape();
  }
  return *tape;
}

void accumulate(std::vector<double>& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

void require_shape(const Tensor& t, const Shape& expected, const char* op) {
  if (t.shape() != expected) {
    throw DimensionError(std::string(op) + ": expected " + shape_string(expected) + ", got " +
                         shape_string(t.shape()));
  }
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() of unbound Var");
  return tape_->value(id_);
}

Tensor Gradients::of(Var v) const {
  if (v.tape() != tape_) throw ContractError("Gradients::of: Var from another tape");
  const Tensor& like = v.value();
  if (grads_[v.id()].empty()) return Tensor::zeros(like.shape(), DType::F64);
  return Tensor(like.shape(), grads_[v.id()], DType::F64);
}

Tensor Gradients::named(const std::string& name, const Tensor& like) const {
  auto it = tape_->named_.find(name);
  if (it == tape_->named_.end() || grads_[it->second].empty()) {
    return Tensor::zeros(like.shape(), DType::F64);
  }
  return Tensor(like.shape(), grads_[it->second], DType::F64);
}

Tape::Tape(bool record_gradients) : recording_(record_gradients) {}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), recording_, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::named_leaf(const std::string& name, const Tensor& value, bool requires_grad) {
  if (auto it = named_.find(name); it != named_.end()) return Var(this, it->second);
  Var v = requires_grad ? leaf(value) : constant(value);
  named_.emplace(name, v.id());
  return v;
}

bool Tape::has_named(const std::string& name) const { return named_.contains(name); }

bool Tape::requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

bool Tape::requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

Var Tape::push(Tensor value, std::vector<Var> inputs, Backward backward) {
  bool needs = false;
  if (recording_) {
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape() != this) throw ContractError("backward: loss was not produced on this tape");
  if (nodes_[loss.id()].value.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got " +
                        shape_string(nodes_[loss.id()].value.shape()));
  }
  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  if (!nodes_[loss.id()].requires_grad) return out;
  out.grads_[loss.id()] = {1.0};
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (!node.requires_grad || !node.backward || out.grads_[k].empty()) continue;
    const std::vector<double> gout = out.grads_[k];
    node.backward(gout, out.grads_);
  }
  return out;
}

namespace {

// Lazily sized gradient slot for node `id`.
std::vector<double>& slot(std::vector<std::vector<double>>& grads, const Tape& tape, std::size_t id) {
  auto& g = grads[id];
  if (g.empty()) g.assign(tape.value(id).numel(), 0.0);
  return g;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape({a, b}, "matmul");
  Tensor out = ops::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(std::move(out), {a, b},
                   [&tape, ia, ib](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     const Tensor& bv = tape.value(ib);
                     const std::size_t p = av.rows(), q = av.cols(), r = bv.cols();
                     // dA = G B^T
                     if (tape.requires_grad(ia)) {
                       auto& ga = slot(grads, tape, ia);
                       for (std::size_t i = 0; i < p; ++i)
                         for (std::size_t k = 0; k < q; ++k) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < r; ++j) acc += g[i * r + j] * bv[k * r + j];
                           ga[i * q + k] += acc;
                         }
                     }
                     if (!tape.requires_grad(ib)) return;
                     // dB = A^T G
                     auto& gb = slot(grads, tape, ib);
                     for (std::size_t i = 0; i < p; ++i)
                       for (std::size_t k = 0; k < q; ++k) {
                         const double aik = av[i * q + k];
                         for (std::size_t j = 0; j < r; ++j) gb[k * r + j] += aik * g[i * r + j];
                       }
                   });
}

Var transpose(Var a) {
  Tape& tape = same_tape({a}, "transpose");
  const std::size_t ia = a.id();
  const std::size_t p = a.rows(), q = a.cols();
  return tape.push(ops::transpose(a.value()), {a},
                   [&tape, ia, p, q](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < p; ++i)
                       for (std::size_t j = 0; j < q; ++j) ga[i * q + j] += g[j * p + i];
                   });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape({a, b}, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(ops::add(a.value(), b.value()), {a, b},
                   [&tape, ia, ib](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     accumulate(slot(grads, tape, ia), g);
                     accumulate(slot(grads, tape, ib), g);
                   });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape({a, b}, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(ops::sub(a.value(), b.value()), {a, b},
                   [&tape, ia, ib](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     accumulate(slot(grads, tape, ia), g);
                     auto& gb = slot(grads, tape, ib);
                     for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                   });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape({a, b}, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(ops::mul(a.value(), b.value()), {a, b},
                   [&tape, ia, ib](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     const Tensor& bv = tape.value(ib);
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                     auto& gb = slot(grads, tape, ib);
                     for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                   });
}

Var scale(Var a, double s) {
  Tape& tape = same_tape({a}, "scale");
  const std::size_t ia = a.id();
  return tape.push(ops::scale(a.value(), s), {a},
                   [&tape, ia, s](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                   });
}

Var add_const(Var a, double c) {
  Tape& tape = same_tape({a}, "add_const");
  const Tensor& av = a.value();
  std::vector<double> out(av.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  const std::size_t ia = a.id();
  return tape.push(Tensor(av.shape(), std::move(out), av.dtype()), {a},
                   [&tape, ia](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     accumulate(slot(grads, tape, ia), g);
                   });
}

Var add_row(Var a, Var row) {
  Tape& tape = same_tape({a, row}, "add_row");
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  const std::size_t p = av.rows(), q = av.cols();
  if (rv.numel() != q) {
    throw DimensionError("add_row: row " + shape_string(rv.shape()) + " vs " + shape_string(av.shape()));
  }
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] = av[i * q + j] + rv[j];
  const std::size_t ia = a.id(), ir = row.id();
  return tape.push(Tensor({p, q}, std::move(out), promote(av.dtype(), rv.dtype())), {a, row},
                   [&tape, ia, ir, p, q](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     accumulate(slot(grads, tape, ia), g);
                     auto& gr = slot(grads, tape, ir);
                     for (std::size_t i = 0; i < p; ++i)
                       for (std::size_t j = 0; j < q; ++j) gr[j] += g[i * q + j];
                   });
}

Var mul_row(Var a, Var row) {
  Tape& tape = same_tape({a, row}, "mul_row");
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  const std::size_t p = av.rows(), q = av.cols();
  if (rv.numel() != q) {
    throw DimensionError("mul_row: row " + shape_string(rv.shape()) + " vs " + shape_string(av.shape()));
  }
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] = av[i * q + j] * rv[j];
  const std::size_t ia = a.id(), ir = row.id();
  return tape.push(Tensor({p, q}, std::move(out), promote(av.dtype(), rv.dtype())), {a, row},
                   [&tape, ia, ir, p, q](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     const Tensor& rv = tape.value(ir);
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < p; ++i)
                       for (std::size_t j = 0; j < q; ++j) ga[i * q + j] += g[i * q + j] * rv[j];
                     auto& gr = slot(grads, tape, ir);
                     for (std::size_t i = 0; i < p; ++i)
                       for (std::size_t j = 0; j < q; ++j) gr[j] += g[i * q + j] * av[i * q + j];
                   });
}

Var mul_col(Var a, Var col) {
  Tape& tape = same_tape({a, col}, "mul_col");
  const Tensor& av = a.value();
  const Tensor& cv = col.value();
  const std::size_t p = av.rows(), q = av.cols();
  if (cv.numel() != p) {
    throw DimensionError("mul_col: column " + shape_string(cv.shape()) + " vs " + shape_string(av.shape()));
  }
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] = av[i * q + j] * cv[i];
  const std::size_t ia = a.id(), ic = col.id();
  return tape.push(Tensor({p, q}, std::move(out), promote(av.dtype(), cv.dtype())), {a, col},
                   [&tape, ia, ic, p, q](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     const Tensor& cv = tape.value(ic);
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < p; ++i)
                       for (std::size_t j = 0; j < q; ++j) ga[i * q + j] += g[i * q + j] * cv[i];
                     auto& gc = slot(grads, tape, ic);
                     for (std::size_t i = 0; i < p; ++i) {
                       double acc = 0.0;
                       for (std::size_t j = 0; j < q; ++j) acc += g[i * q + j] * av[i * q + j];
                       gc[i] += acc;
                     }
                   });
}

Var mul_scalar(Var a, Var s) {
  Tape& tape = same_tape({a, s}, "mul_scalar");
  const Tensor& av = a.value();
  const double sv = s.value().item();
  std::vector<double> out(av.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * sv;
  const std::size_t ia = a.id(), is = s.id();
  return tape.push(Tensor(av.shape(), std::move(out), promote(av.dtype(), s.value().dtype())), {a, s},
                   [&tape, ia, is](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     const double sv = tape.value(is)[0];
                     auto& ga = slot(grads, tape, ia);
                     double acc = 0.0;
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       ga[i] += g[i] * sv;
                       acc += g[i] * av[i];
                     }
                     slot(grads, tape, is)[0] += acc;
                   });
}

Var softmax_rows(Var a) {
  Tape& tape = same_tape({a}, "softmax_rows");
  Tensor out = ops::softmax_rows(a.value());
  const std::size_t ia = a.id();
  const std::size_t iy = tape.size();  // id the output record is about to get
  const std::size_t p = out.rows(), q = out.cols();
  return tape.push(std::move(out), {a},
                   [&tape, ia, iy, p, q](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& yv = tape.value(iy);
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < p; ++i) {
                       double dot = 0.0;
                       for (std::size_t j = 0; j < q; ++j) dot += g[i * q + j] * yv[i * q + j];
                       for (std::size_t j = 0; j < q; ++j) ga[i * q + j] += yv[i * q + j] * (g[i * q + j] - dot);
                     }
                   });
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  Tape& tape = same_tape({a, gamma, beta}, "layer_norm");
  Tensor out = ops::layer_norm(a.value(), gamma.value(), beta.value(), eps);
  const std::size_t ia = a.id(), ig = gamma.id(), ib = beta.id();
  const std::size_t p = out.rows(), q = out.cols();
  return tape.push(std::move(out), {a, gamma, beta},
                   [&tape, ia, ig, ib, p, q, eps](std::span<const double> g,
                                                   std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     const Tensor& gv = tape.value(ig);
                     auto& ga = slot(grads, tape, ia);
                     auto& gg = slot(grads, tape, ig);
                     auto& gb = slot(grads, tape, ib);
                     std::vector<double> xhat(q), dxhat(q);
                     const double inv_q = 1.0 / static_cast<double>(q);
                     for (std::size_t i = 0; i < p; ++i) {
                       const double* row = av.data().data() + i * q;
                       double mean = 0.0;
                       for (std::size_t j = 0; j < q; ++j) mean += row[j];
                       mean *= inv_q;
                       double var = 0.0;
                       for (std::size_t j = 0; j < q; ++j) var += (row[j] - mean) * (row[j] - mean);
                       var *= inv_q;
                       const double rstd = 1.0 / std::sqrt(var + eps);
                       double sum_d = 0.0, sum_dx = 0.0;
                       for (std::size_t j = 0; j < q; ++j) {
                         xhat[j] = (row[j] - mean) * rstd;
                         const double gj = g[i * q + j];
                         gg[j] += gj * xhat[j];
                         gb[j] += gj;
                         dxhat[j] = gj * gv[j];
                         sum_d += dxhat[j];
                         sum_dx += dxhat[j] * xhat[j];
                       }
                       for (std::size_t j = 0; j < q; ++j)
                         ga[i * q + j] += rstd * (dxhat[j] - inv_q * sum_d - xhat[j] * inv_q * sum_dx);
                     }
                   });
}

Var gelu(Var a) {
  Tape& tape = same_tape({a}, "gelu");
  const std::size_t ia = a.id();
  return tape.push(ops::gelu(a.value()), {a},
                   [&tape, ia](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     auto& ga = slot(grads, tape, ia);
                     const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
                     const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double x = av[i];
                       const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                       const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                       ga[i] += g[i] * (cdf + x * pdf);
                     }
                   });
}

Var tanh(Var a) {
  Tape& tape = same_tape({a}, "tanh");
  const Tensor& av = a.value();
  std::vector<double> out(av.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  Tensor y(av.shape(), std::move(out), av.dtype());
  const std::size_t ia = a.id();
  return tape.push(std::move(y), {a},
                   [&tape, ia](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double t = std::tanh(av[i]);
                       ga[i] += g[i] * (1.0 - t * t);
                     }
                   });
}

Var reciprocal(Var a) {
  Tape& tape = same_tape({a}, "reciprocal");
  const Tensor& av = a.value();
  std::vector<double> out(av.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (av[i] == 0.0) throw NumericError("reciprocal of zero");
    out[i] = 1.0 / av[i];
  }
  Tensor y(av.shape(), std::move(out), av.dtype());
  const std::size_t ia = a.id();
  return tape.push(std::move(y), {a},
                   [&tape, ia](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i] / (av[i] * av[i]);
                   });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& tape = *parts[0].tape();
  std::vector<Tensor> values;
  std::vector<Var> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> ids, sizes;
  for (const Var& v : parts) {
    if (v.tape() != &tape) throw ContractError("concat_rows: inputs live on different tapes");
    values.push_back(v.value());
    ids.push_back(v.id());
    sizes.push_back(v.value().numel());
  }
  return tape.push(ops::concat_rows(values), std::move(inputs),
                   [&tape, ids, sizes](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                         accumulate(slot(grads, tape, ids[k]), g.subspan(off, sizes[k]));
                       off += sizes[k];
                     }
                   });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& tape = *parts[0].tape();
  std::vector<Tensor> values;
  std::vector<Var> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> ids, widths;
  for (const Var& v : parts) {
    if (v.tape() != &tape) throw ContractError("concat_cols: inputs live on different tapes");
    values.push_back(v.value());
    ids.push_back(v.id());
    widths.push_back(v.value().cols());
  }
  Tensor out = ops::concat_cols(values);
  const std::size_t r = out.rows(), c = out.cols();
  return tape.push(std::move(out), std::move(inputs),
                   [&tape, ids, widths, r, c](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     std::size_t col0 = 0;
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                       auto& gk = slot(grads, tape, ids[k]);
                       const std::size_t w = widths[k];
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < w; ++j) gk[i * w + j] += g[i * c + col0 + j];
                       col0 += w;
                     }
                   });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  Tape& tape = same_tape({a}, "slice_rows");
  Tensor out = a.value().row_slice(start, count);
  const std::size_t ia = a.id();
  const std::size_t off = start * a.cols();
  return tape.push(std::move(out), {a},
                   [&tape, ia, off](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
                   });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Tape& tape = same_tape({a}, "slice_cols");
  const Tensor& av = a.value();
  const std::size_t p = av.rows(), q = av.cols();
  if (count == 0 || start + count > q) {
    throw DimensionError("slice_cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") of " + shape_string(av.shape()));
  }
  std::vector<double> out(p * count);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = av[i * q + start + j];
  const std::size_t ia = a.id();
  return tape.push(Tensor({p, count}, std::move(out), av.dtype()), {a},
                   [&tape, ia, p, q, start, count](std::span<const double> g,
                                                  std::vector<std::vector<double>>& grads) {
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < p; ++i)
                       for (std::size_t j = 0; j < count; ++j) ga[i * q + start + j] += g[i * count + j];
                   });
}

Var rotate_pairs(Var a, const Tensor& cos, const Tensor& sin) {
  Tape& tape = same_tape({a}, "rotate_pairs");
  const Tensor& av = a.value();
  const std::size_t p = av.rows(), q = av.cols();
  if (q % 2 != 0) throw DimensionError("rotate_pairs: odd width " + shape_string(av.shape()));
  const Shape table{p, q / 2};
  require_shape(cos, table, "rotate_pairs cos");
  require_shape(sin, table, "rotate_pairs sin");
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < q / 2; ++k) {
      const double c = cos[i * (q / 2) + k], s = sin[i * (q / 2) + k];
      const double x0 = av[i * q + 2 * k], x1 = av[i * q + 2 * k + 1];
      out[i * q + 2 * k] = x0 * c - x1 * s;
      out[i * q + 2 * k + 1] = x0 * s + x1 * c;
    }
  const std::size_t ia = a.id();
  return tape.push(Tensor({p, q}, std::move(out), av.dtype()), {a},
                   [&tape, ia, p, q, cos, sin](std::span<const double> g,
                                               std::vector<std::vector<double>>& grads) {
                     auto& ga = slot(grads, tape, ia);
                     for (std::size_t i = 0; i < p; ++i)
                       for (std::size_t k = 0; k < q / 2; ++k) {
                         const double c = cos[i * (q / 2) + k], s = sin[i * (q / 2) + k];
                         const double g0 = g[i * q + 2 * k], g1 = g[i * q + 2 * k + 1];
                         ga[i * q + 2 * k] += g0 * c + g1 * s;
                         ga[i * q + 2 * k + 1] += -g0 * s + g1 * c;
                       }
                   });
}

Var reshape(Var a, Shape shape) {
  Tape& tape = same_tape({a}, "reshape");
  const std::size_t ia = a.id();
  return tape.push(a.value().reshape(std::move(shape)), {a},
                   [&tape, ia](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     accumulate(slot(grads, tape, ia), g);
                   });
}

Var sum(Var a) {
  Tape& tape = same_tape({a}, "sum");
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return tape.push(Tensor::scalar(total, a.value().dtype()), {a},
                   [&tape, ia](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     auto& ga = slot(grads, tape, ia);
                     for (double& v : ga) v += g[0];
                   });
}

Var mse(Var a, Var b) {
  Tape& tape = same_tape({a, b}, "mse");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("mse: shape mismatch " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) total += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.numel());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.push(Tensor::scalar(total / n, promote(av.dtype(), bv.dtype())), {a, b},
                   [&tape, ia, ib, n](std::span<const double> g, std::vector<std::vector<double>>& grads) {
                     const Tensor& av = tape.value(ia);
                     const Tensor& bv = tape.value(ib);
                     auto& ga = slot(grads, tape, ia);
                     auto& gb = slot(grads, tape, ib);
                     for (std::size_t i = 0; i < ga.size(); ++i) {
                       const double d = 2.0 * (av[i] - bv[i]) / n * g[0];
                       ga[i] += d;
                       gb[i] -= d;
                     }
                   });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

}  // namespace dynaip
