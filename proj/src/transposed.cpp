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

#include "fedmark/transposed.hpp"

#include <algorithm>

namespace fedmark {

std::vector<Real> transpose_linear_forward(std::span<const Real> x, const Tensor& weight,
                                           std::span<const Real> bias) {
  if (weight.rank() != 2) throw ShapeError("transposed linear: weight must be 2-D");
  const int out = weight.dim(0), in = weight.dim(1);
  if (static_cast<int>(x.size()) != out || static_cast<int>(bias.size()) != out)
    throw ShapeError("transposed linear: input has " + std::to_string(x.size()) + " entries, bias " +
                     std::to_string(bias.size()) + ", weight expects " + std::to_string(out));
  std::vector<Real> y(in, 0.0);
  for (int o = 0; o < out; ++o) {
    const Real c = x[o] - bias[o];
    for (int i = 0; i < in; ++i) y[i] += c * weight[static_cast<std::size_t>(o) * in + i];
  }
  return y;
}

int solve_output_padding(int in, int out, int kernel, int stride, int padding) {
  const int base = (out - 1) * stride - 2 * padding + kernel;
  const int op = in - base;
  if (op < 0 || op >= std::max(stride, 1) || out < 1) {
    throw ShapeError("cannot invert spatial size " + std::to_string(in) + " -> " +
                     std::to_string(out) + " with kernel " + std::to_string(kernel) + ", stride " +
                     std::to_string(stride) + ", padding " + std::to_string(padding) +
                     ": required output_padding " + std::to_string(op) + " is outside [0, " +
                     std::to_string(std::max(stride, 1) - 1) + "]");
  }
  return op;
}

LayerSpec transpose_conv_spec(const LayerSpec& spec, const Shape& forward_input) {
  if (spec.kind != LayerKind::kConv && spec.kind != LayerKind::kMaxPool)
    throw std::invalid_argument("transpose_conv_spec: '" + spec.name + "' is a " +
                                to_string(spec.kind) + " layer");
  if (forward_input.size() != 3) throw ShapeError("transpose_conv_spec: input must be (C, H, W)");
  const int pad = spec.kind == LayerKind::kConv ? spec.padding : 0;
  const int h = forward_input[1], w = forward_input[2];
  if (h + 2 * pad < spec.kernel || w + 2 * pad < spec.kernel)
    throw ShapeError("cannot invert '" + spec.name + "': kernel " + std::to_string(spec.kernel) +
                     " exceeds padded input " + shape_str(forward_input));
  const int oh = (h + 2 * pad - spec.kernel) / spec.stride + 1;
  const int ow = (w + 2 * pad - spec.kernel) / spec.stride + 1;

  LayerSpec t = spec;
  t.name = spec.name + ".T";
  t.kind = spec.kind == LayerKind::kConv ? LayerKind::kTransposedConv : LayerKind::kTransposedPool;
  t.padding = pad;
  t.output_padding_h = solve_output_padding(h, oh, spec.kernel, spec.stride, pad);
  t.output_padding_w = solve_output_padding(w, ow, spec.kernel, spec.stride, pad);
  if (spec.kind == LayerKind::kMaxPool) {
    t.in_channels = t.out_channels = forward_input[0];
  }
  return t;
}

TransposedModel TransposedModel::build(const ModelGraph& model) {
  TransposedModel t;
  t.store_ = model.shared_params();
  t.bn_ = model.shared_bn();
  t.input_dim_ = model.arch().num_classes;
  t.output_dims_ = model.arch().input;
  const auto& layers = model.arch().layers;
  const auto& shapes = model.layer_shapes();
  for (std::size_t r = layers.size(); r-- > 0;) {
    const LayerSpec& l = layers[r];
    const Shape& in_shape = shapes[r];       // forward input = transposed output
    const Shape& out_shape = shapes[r + 1];  // forward output = transposed input
    LayerSpec t_spec = l;
    switch (l.kind) {
      case LayerKind::kLinear:
        t_spec.kind = LayerKind::kTransposedLinear;
        t_spec.name = l.name + ".T";
        break;
      case LayerKind::kConv:
      case LayerKind::kMaxPool:
        t_spec = transpose_conv_spec(l, in_shape);
        break;
      case LayerKind::kFlatten:
        t_spec.kind = LayerKind::kReshape;
        t_spec.name = l.name + ".T";
        t_spec.reshape_to = in_shape;
        break;
      case LayerKind::kBatchNorm:
      case LayerKind::kRelu:
      case LayerKind::kDropout:
        break;
      default:
        throw std::invalid_argument("cannot transpose layer '" + l.name + "' of kind " +
                                    to_string(l.kind));
    }
    t.layers_.push_back(make_layer(t_spec, t.store_.get(), t.bn_.get(), out_shape));
    t.specs_.push_back(std::move(t_spec));
  }
  return t;
}

Tensor TransposedModel::forward_watermark(const Tensor& vectors) {
  if (bn_->mode != BnMode::kWatermark)
    throw ModeError("forward_watermark requires BN mode 'watermark' but the active mode is '" +
                    to_string(bn_->mode) + "'");
  if (vectors.rank() != 2 || vectors.dim(1) != input_dim_)
    throw ShapeError("forward_watermark expects (N, " + std::to_string(input_dim_) + "), got " +
                     shape_str(vectors.shape));
  ForwardContext ctx;
  ctx.training = training_;
  ctx.mode = BnMode::kWatermark;
  ctx.rng = nullptr;  // dropout stays identity in the reverse direction
  ctx.epsilon = bn_->epsilon;
  ctx.momentum = bn_->momentum;
  Tensor x = vectors;
  for (auto& layer : layers_) x = layer->forward(x, ctx);
  return x;
}

Tensor TransposedModel::backward(const Tensor& grad_images) {
  Tensor g = grad_images;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

Tensor clamp_images(const Tensor& raw) {
  Tensor out = raw;
  for (Real& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace fedmark
