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

#ifndef FEDMARK_TRANSPOSED_HPP_
#define FEDMARK_TRANSPOSED_HPP_

#include <memory>
#include <span>
#include <vector>

#include "fedmark/model.hpp"

namespace fedmark {

// (x - b) W for one vector; W is (out, in) as stored by the forward layer.
std::vector<Real> transpose_linear_forward(std::span<const Real> x, const Tensor& weight,
                                           std::span<const Real> bias);

// Smallest non-negative output padding so that a stride/padding/kernel
// transposed layer maps `out` back to `in`. Throws ShapeError if none exists.
int solve_output_padding(int in, int out, int kernel, int stride, int padding);

// Transposed-convolution spec inverting a conv or maxpool layer whose input
// has shape (C, H, W).
LayerSpec transpose_conv_spec(const LayerSpec& spec, const Shape& forward_input);

// Reverse mapping class-vector -> image built from a ModelGraph. Holds no
// parameters of its own: it reads the source model's store and that model's
// watermark-mode BN statistics.
class TransposedModel {
 public:
  static TransposedModel build(const ModelGraph& model);

  TransposedModel(TransposedModel&&) noexcept = default;
  TransposedModel& operator=(TransposedModel&&) noexcept = default;

  // (N, num_classes) -> (N, C, H, W), unclamped. Requires BN mode watermark.
  Tensor forward_watermark(const Tensor& vectors);
  // d loss / d vectors for the last forward; parameter grads accumulate into
  // the shared store.
  Tensor backward(const Tensor& grad_images);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  const std::vector<LayerSpec>& layers() const { return specs_; }
  int input_dim() const { return input_dim_; }
  const ImageDims& output_dims() const { return output_dims_; }
  std::size_t own_parameter_count() const { return 0; }

 private:
  TransposedModel() = default;

  std::shared_ptr<ParameterStore> store_;
  std::shared_ptr<DualBatchNormState> bn_;
  std::vector<LayerSpec> specs_;
  std::vector<std::unique_ptr<Layer>> layers_;
  int input_dim_ = 0;
  ImageDims output_dims_;
  bool training_ = false;
};

// Clamp to [0, 1] for display and verification.
Tensor clamp_images(const Tensor& raw);

}  // namespace fedmark

#endif  // FEDMARK_TRANSPOSED_HPP_
