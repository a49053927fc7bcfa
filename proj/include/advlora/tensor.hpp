// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace advlora {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array of doubles. Rank 0 is a scalar holding one value.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor identity(std::size_t n);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  // Value of a single-element tensor.
  double item() const;

  bool all_finite() const;

  // Shape and bitwise value equality.
  bool operator==(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Plain (non-recording) helpers on values.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
double frobenius_sq(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
// Rows [begin, end) of a matrix, or gathered rows by index.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);

}  // namespace advlora
