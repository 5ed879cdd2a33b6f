// Copyright 2026 The fedmark Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FEDMARK_TENSOR_HPP_
#define FEDMARK_TENSOR_HPP_

#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedmark {

// All arithmetic runs in double; files on disk carry float32.
using Real = double;

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s);

// Dense row-major tensor. Images are laid out NCHW.
struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(Shape s, Real fill = 0.0)
      : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<Real> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape))
      throw std::invalid_argument("tensor data does not match shape " + shape_str(shape));
  }

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }

  Real& operator[](std::size_t i) { return data[i]; }
  Real operator[](std::size_t i) const { return data[i]; }

  std::span<Real> span() { return data; }
  std::span<const Real> span() const { return data; }

  // View of sample n along the leading axis.
  std::span<const Real> sample(int n) const {
    const std::size_t stride = data.size() / static_cast<std::size_t>(shape.at(0));
    return std::span<const Real>(data).subspan(n * stride, stride);
  }
  std::span<Real> sample(int n) {
    const std::size_t stride = data.size() / static_cast<std::size_t>(shape.at(0));
    return std::span<Real>(data).subspan(n * stride, stride);
  }

  void fill(Real v) { std::fill(data.begin(), data.end(), v); }
  Tensor reshaped(Shape s) const;
};

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

inline Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != data.size())
    throw std::invalid_argument("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
  return Tensor(std::move(s), data);
}

}  // namespace fedmark

#endif  // FEDMARK_TENSOR_HPP_
