// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#include "dynaip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "dynaip/error.hpp"

namespace dynaip {

namespace {

void round_values(std::vector<double>& values, DType dtype) {
  if (dtype != DType::F32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " +
                         shape_string(a.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace

const char* dtype_name(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType promote(DType a, DType b) {
  return (a == DType::F64 || b == DType::F64) ? DType::F64 : DType::F32;
}

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

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  for (std::size_t e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape_));
  }
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
  for (std::size_t e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
  round_values(data_, dtype_);
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  std::vector<double> data(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(data), dtype);
}

Tensor Tensor::eye(std::size_t n, DType dtype) {
  Tensor t({n, n}, dtype);
  for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, DType dtype) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Tensor::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data), dtype);
}

Tensor Tensor::row(std::span<const double> values, DType dtype) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return Tensor({1, 1}, {value}, dtype); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape_[1];
}

void Tensor::round() { round_values(data_, dtype_); }

double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ContractError("item() on non-scalar tensor " + shape_string(shape_));
  }
  return data_[0];
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " vs tensor rank " +
                         std::to_string(shape_.size()));
  }
  std::size_t flat = 0;
  for (std::size_t a = 0; a < shape_.size(); ++a) {
    if (index[a] >= shape_[a]) throw DimensionError("index out of range on axis " + std::to_string(a));
    flat = flat * shape_[a] + index[a];
  }
  return flat;
}

double Tensor::at_index(std::initializer_list<std::size_t> index) const {
  return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  t.dtype_ = dtype_;
  return t;
}

Tensor Tensor::cast(DType dtype) const { return Tensor(shape_, data_, dtype); }

Tensor Tensor::row_slice(std::size_t start, std::size_t count) const {
  require_rank2(*this, "row_slice");
  if (start + count > shape_[0] || count == 0) {
    throw DimensionError("row_slice [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") of " + shape_string(shape_));
  }
  const std::size_t c = shape_[1];
  std::vector<double> data(data_.begin() + static_cast<std::ptrdiff_t>(start * c),
                           data_.begin() + static_cast<std::ptrdiff_t>((start + count) * c));
  return Tensor({count, c}, std::move(data), dtype_);
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::equal(data_.begin(), data_.end(), other.data_.begin(),
                    [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; });
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

double Tensor::max_abs_diff(const Tensor& other) const {
  require_same_shape(*this, other, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - other.data_[i]));
  return m;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  if (b.rows() != q) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(p * r, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  // i-k-j order keeps the per-element reduction order fixed (k ascending).
  for (std::size_t i = 0; i < p; ++i) {
    double* orow = out.data() + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = ad[i * q + k];
      const double* brow = bd.data() + k * r;
      for (std::size_t j = 0; j < r; ++j) orow[j] += aik * brow[j];
    }
  }
  return Tensor({p, r}, std::move(out), promote(a.dtype(), b.dtype()));
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t p = a.rows(), q = a.cols();
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[j * p + i] = a.data()[i * q + j];
  return Tensor({q, p}, std::move(out), a.dtype());
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor(a.shape(), std::move(out), promote(a.dtype(), b.dtype()));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor(a.shape(), std::move(out), promote(a.dtype(), b.dtype()));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor(a.shape(), std::move(out), promote(a.dtype(), b.dtype()));
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Tensor(a.shape(), std::move(out), a.dtype());
}

Tensor softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const std::size_t p = a.rows(), q = a.cols();
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i) {
    const double* row = a.data().data() + i * q;
    double mx = row[0];
    for (std::size_t j = 0; j < q; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(i));
      mx = std::max(mx, row[j]);
    }
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input in row " + std::to_string(i));
    double total = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      out[i * q + j] = std::exp(row[j] - mx);
      total += out[i * q + j];
    }
    for (std::size_t j = 0; j < q; ++j) out[i * q + j] /= total;
  }
  return Tensor({p, q}, std::move(out), a.dtype());
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(a, "layer_norm");
  const std::size_t p = a.rows(), q = a.cols();
  if (gamma.numel() != q || beta.numel() != q) {
    throw DimensionError("layer_norm: gamma/beta " + shape_string(gamma.shape()) + "/" +
                         shape_string(beta.shape()) + " vs input " + shape_string(a.shape()));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i) {
    const double* row = a.data().data() + i * q;
    double mean = 0.0;
    for (std::size_t j = 0; j < q; ++j) mean += row[j];
    mean /= static_cast<double>(q);
    double var = 0.0;
    for (std::size_t j = 0; j < q; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(q);
    const double rstd = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < q; ++j)
      out[i * q + j] = (row[j] - mean) * rstd * gamma[j] + beta[j];
  }
  return Tensor({p, q}, std::move(out), promote(a.dtype(), gamma.dtype()));
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(a[i]);
  return Tensor(a.shape(), std::move(out), a.dtype());
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  DType dtype = parts[0].dtype();
  std::vector<double> out;
  for (const Tensor& t : parts) {
    if (t.cols() != c) throw DimensionError("concat_rows: column mismatch " + shape_string(t.shape()));
    r += t.rows();
    dtype = promote(dtype, t.dtype());
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return Tensor({r, c}, std::move(out), dtype);
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  DType dtype = parts[0].dtype();
  for (const Tensor& t : parts) {
    if (t.rows() != r) throw DimensionError("concat_cols: row mismatch " + shape_string(t.shape()));
    c += t.cols();
    dtype = promote(dtype, t.dtype());
  }
  std::vector<double> out(r * c);
  std::size_t col0 = 0;
  for (const Tensor& t : parts) {
    const std::size_t tc = t.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < tc; ++j) out[i * c + col0 + j] = t.data()[i * tc + j];
    col0 += tc;
  }
  return Tensor({r, c}, std::move(out), dtype);
}

}  // namespace ops

}  // namespace dynaip
