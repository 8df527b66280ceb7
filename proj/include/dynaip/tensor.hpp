// Copyright 2026 The DynaIP-Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dynaip {

/// Storage precision. Values are held as doubles; F32 tensors round every
/// stored value to the nearest 32-bit float so results match single
/// precision arithmetic element by element.
enum class DType : std::uint8_t { F32, F64 };

const char* dtype_name(DType dtype);
DType promote(DType a, DType b);

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array. Every extent is positive and
/// numel() == product(shape()).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::F32);
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::F32);

  static Tensor zeros(Shape shape, DType dtype = DType::F32);
  static Tensor full(Shape shape, double value, DType dtype = DType::F32);
  static Tensor eye(std::size_t n, DType dtype = DType::F32);
  /// 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       DType dtype = DType::F32);
  static Tensor row(std::span<const double> values, DType dtype = DType::F32);
  static Tensor scalar(double value, DType dtype = DType::F32);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  DType dtype() const { return dtype_; }

  /// Rows and columns of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  /// Mutable access for builders. Writes are rounded on the next round().
  std::span<double> mutable_data() { return data_; }
  void round();

  double operator[](std::size_t flat) const { return data_[flat]; }
  double at(std::size_t i, std::size_t j) const;
  double item() const;

  std::size_t offset(std::span<const std::size_t> index) const;
  double at_index(std::initializer_list<std::size_t> index) const;

  Tensor reshape(Shape shape) const;
  Tensor cast(DType dtype) const;
  Tensor row_slice(std::size_t start, std::size_t count) const;

  bool bit_equal(const Tensor& other) const;
  double max_abs() const;
  double max_abs_diff(const Tensor& other) const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::F32;
};

/// Forward kernels shared by the tape and by tape-free inference.
namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& a);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

double gelu_scalar(double x);

}  // namespace ops

}  // namespace dynaip
