// SPDX-License-Identifier: Apache-2.0
#include "evtrack/nn/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "evtrack/error.hpp"

namespace evtrack::nn {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape dims, float fill) : dims_(std::move(dims)), data_(element_count(dims_), fill) {}

Tensor::Tensor(Shape dims, std::vector<float> values) : dims_(std::move(dims)), data_(std::move(values)) {
  if (data_.size() != element_count(dims_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(dims_));
  }
}

std::size_t Tensor::rows() const {
  if (dims_.size() != 2) throw ShapeError("expected rank-2 tensor, got " + to_string(dims_));
  return dims_[0];
}

std::size_t Tensor::cols() const {
  if (dims_.size() != 2) throw ShapeError("expected rank-2 tensor, got " + to_string(dims_));
  return dims_[1];
}

std::span<float> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<float>(data_).subspan(r * c, c);
}

std::span<const float> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const float>(data_).subspan(r * c, c);
}

Tensor Tensor::reshaped(Shape dims) const {
  if (element_count(dims) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(dims_) + " to " + to_string(dims));
  }
  return Tensor(std::move(dims), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  const std::size_t c = cols();
  if (begin > end || end > rows()) {
    throw ShapeError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + to_string(dims_));
  }
  return Tensor({end - begin, c}, std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                                     data_.begin() + static_cast<std::ptrdiff_t>(end * c)));
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace evtrack::nn
