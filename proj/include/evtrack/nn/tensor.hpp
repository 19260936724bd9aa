// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace evtrack::nn {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major float32 tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, float fill = 0.0f);
  Tensor(Shape dims, std::vector<float> values);
  Tensor(std::initializer_list<std::size_t> dims) : Tensor(Shape(dims)) {}

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& values() const { return data_; }

  // 2-D helpers: rank must be 2.
  std::size_t rows() const;
  std::size_t cols() const;
  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;
  float& operator()(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Same data, new shape with the same element count.
  Tensor reshaped(Shape dims) const;

  /// Copy of rows [begin, end) of a rank-2 tensor.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape dims_;
  std::vector<float> data_;
};

}  // namespace evtrack::nn
