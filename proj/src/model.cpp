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

#include "fedmark/model.hpp"

#include <cmath>
#include <limits>

#include "fedmark/checkpoint.hpp"

namespace fedmark {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kLinear: return "linear";
    case LayerKind::kConv: return "conv";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kTransposedLinear: return "transposed_linear";
    case LayerKind::kTransposedConv: return "transposed_conv";
    case LayerKind::kTransposedPool: return "transposed_pool";
    case LayerKind::kReshape: return "reshape";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::kLinear, LayerKind::kConv, LayerKind::kBatchNorm,
                      LayerKind::kRelu, LayerKind::kMaxPool, LayerKind::kDropout,
                      LayerKind::kFlatten, LayerKind::kTransposedLinear,
                      LayerKind::kTransposedConv, LayerKind::kTransposedPool,
                      LayerKind::kReshape}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

std::string to_string(BnMode mode) { return mode == BnMode::kMain ? "main" : "watermark"; }

ArchConfig tiny_vgg(ImageDims input, int num_classes, int hidden, int c1, int c2) {
  ArchConfig a;
  a.name = "tinyvgg";
  a.input = input;
  a.num_classes = num_classes;
  auto conv = [](std::string name, int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::kConv;
    s.name = name;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel = 3;
    s.stride = 1;
    s.padding = 1;
    s.weight = name + ".weight";
    s.bias = name + ".bias";
    return s;
  };
  auto bn = [](std::string name, int c) {
    LayerSpec s;
    s.kind = LayerKind::kBatchNorm;
    s.name = name;
    s.features = c;
    s.weight = name + ".weight";
    s.bias = name + ".bias";
    return s;
  };
  auto simple = [](LayerKind k, std::string name) {
    LayerSpec s;
    s.kind = k;
    s.name = std::move(name);
    if (k == LayerKind::kMaxPool) {
      s.kernel = 2;
      s.stride = 2;
    }
    return s;
  };
  auto linear = [](std::string name, int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::kLinear;
    s.name = name;
    s.in_features = in;
    s.out_features = out;
    s.weight = name + ".weight";
    s.bias = name + ".bias";
    return s;
  };
  a.layers = {conv("conv1", input.channels, c1),
              bn("bn1", c1),
              simple(LayerKind::kRelu, "relu1"),
              simple(LayerKind::kMaxPool, "pool1"),
              conv("conv2", c1, c2),
              bn("bn2", c2),
              simple(LayerKind::kRelu, "relu2"),
              simple(LayerKind::kMaxPool, "pool2"),
              simple(LayerKind::kFlatten, "flatten"),
              linear("fc1", c2 * (input.height / 4) * (input.width / 4), hidden),
              simple(LayerKind::kRelu, "relu3"),
              linear("fc2", hidden, num_classes)};
  return a;
}

std::vector<Shape> infer_shapes(const ArchConfig& arch) {
  std::vector<Shape> shapes{arch.input.chw()};
  auto fail = [&](std::size_t i, const std::string& why) {
    const std::string prev =
        i == 0 ? std::string("input") : "layer " + std::to_string(i - 1) + " '" +
                                            arch.layers[i - 1].name + "'";
    throw ShapeError(prev + " -> layer " + std::to_string(i) + " '" + arch.layers[i].name +
                     "' (" + to_string(arch.layers[i].kind) + "): " + why);
  };
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    const Shape& s = shapes.back();
    switch (l.kind) {
      case LayerKind::kLinear:
        if (s.size() != 1 || s[0] != l.in_features)
          fail(i, "expects " + std::to_string(l.in_features) + " features but receives " +
                      shape_str(s));
        shapes.push_back({l.out_features});
        break;
      case LayerKind::kConv: {
        if (s.size() != 3 || s[0] != l.in_channels)
          fail(i, "expects " + std::to_string(l.in_channels) + " channels but receives " +
                      shape_str(s));
        if (l.kernel < 1 || l.stride < 1 || l.padding < 0) fail(i, "invalid conv geometry");
        const int h = (s[1] + 2 * l.padding - l.kernel) / l.stride + 1;
        const int w = (s[2] + 2 * l.padding - l.kernel) / l.stride + 1;
        if (s[1] + 2 * l.padding < l.kernel || s[2] + 2 * l.padding < l.kernel)
          fail(i, "kernel larger than padded input " + shape_str(s));
        shapes.push_back({l.out_channels, h, w});
        break;
      }
      case LayerKind::kBatchNorm: {
        if (s.empty() || s[0] != l.features)
          fail(i, "expects " + std::to_string(l.features) + " channels but receives " +
                      shape_str(s));
        shapes.push_back(s);
        break;
      }
      case LayerKind::kMaxPool: {
        if (s.size() != 3) fail(i, "needs a feature map, receives " + shape_str(s));
        if (s[1] < l.kernel || s[2] < l.kernel || l.stride < 1)
          fail(i, "window larger than input " + shape_str(s));
        shapes.push_back({s[0], (s[1] - l.kernel) / l.stride + 1, (s[2] - l.kernel) / l.stride + 1});
        break;
      }
      case LayerKind::kFlatten:
        shapes.push_back({static_cast<int>(shape_numel(s))});
        break;
      case LayerKind::kRelu:
      case LayerKind::kDropout:
        shapes.push_back(s);
        break;
      default:
        fail(i, "layer kind is not allowed in a main-task model");
    }
  }
  if (shapes.back() != Shape{arch.num_classes})
    throw ShapeError("model output " + shape_str(shapes.back()) + " does not match " +
                     std::to_string(arch.num_classes) + " classes");
  return shapes;
}

Parameter& ParameterStore::add(const std::string& name, Shape shape, bool is_weight) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  Parameter p;
  p.value.assign(shape_numel(shape), 0.0);
  p.grad.assign(p.value.size(), 0.0);
  p.shape = std::move(shape);
  p.is_weight = is_weight;
  order_.push_back(name);
  return params_[name] = std::move(p);
}

Parameter& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

TensorMap ParameterStore::snapshot() const {
  TensorMap out;
  for (const auto& [name, p] : params_) out.emplace(name, Tensor(p.shape, p.value));
  return out;
}

TensorMap ParameterStore::grads() const {
  TensorMap out;
  for (const auto& [name, p] : params_) out.emplace(name, Tensor(p.shape, p.grad));
  return out;
}

void ParameterStore::load(const TensorMap& values) {
  if (values.size() != params_.size())
    throw ShapeError("parameter snapshot holds " + std::to_string(values.size()) +
                     " tensors, model has " + std::to_string(params_.size()));
  for (auto& [name, p] : params_) {
    auto it = values.find(name);
    if (it == values.end()) throw ShapeError("parameter snapshot lacks '" + name + "'");
    if (it->second.shape != p.shape)
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(p.shape) +
                       ", snapshot has " + shape_str(it->second.shape));
    p.value = it->second.data;
  }
}

BnMomentMap DualBatchNormState::export_moments(BnMode m) const {
  BnMomentMap out;
  for (const auto& [name, s] : layers) out[name] = {s.mean(m), s.var(m)};
  return out;
}

void DualBatchNormState::import_moments(BnMode m, const BnMomentMap& moments) {
  if (moments.size() != layers.size())
    throw ShapeError("BN statistics cover " + std::to_string(moments.size()) +
                     " layers, model has " + std::to_string(layers.size()));
  for (auto& [name, s] : layers) {
    auto it = moments.find(name);
    if (it == moments.end()) throw ShapeError("BN statistics lack layer '" + name + "'");
    if (it->second.mean.size() != s.mean(m).size() || it->second.var.size() != s.var(m).size())
      throw ShapeError("BN statistics for '" + name + "' have " +
                       std::to_string(it->second.mean.size()) + " channels, model has " +
                       std::to_string(s.mean(m).size()));
  }
  for (auto& [name, s] : layers) {
    s.mean(m) = moments.at(name).mean;
    s.var(m) = moments.at(name).var;
  }
}

void DualBatchNormState::reset_moments(BnMode m) {
  for (auto& [_, s] : layers) {
    std::fill(s.mean(m).begin(), s.mean(m).end(), 0.0);
    std::fill(s.var(m).begin(), s.var(m).end(), 1.0);
  }
}

ModelGraph ModelGraph::build(const ArchConfig& arch, std::uint64_t seed) {
  ModelGraph g;
  g.arch_ = arch;
  g.shapes_ = infer_shapes(arch);
  g.store_ = std::make_shared<ParameterStore>();
  g.bn_ = std::make_shared<DualBatchNormState>();
  Rng rng = stream(seed, "init");
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    switch (l.kind) {
      case LayerKind::kLinear:
      case LayerKind::kConv: {
        const bool conv = l.kind == LayerKind::kConv;
        Shape ws = conv ? Shape{l.out_channels, l.in_channels, l.kernel, l.kernel}
                        : Shape{l.out_features, l.in_features};
        const int fan_in = conv ? l.in_channels * l.kernel * l.kernel : l.in_features;
        // Kaiming-uniform, ReLU gain.
        const Real bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<Real> u(-bound, bound);
        Parameter& w = g.store_->add(l.weight, ws, true);
        for (Real& v : w.value) v = u(rng);
        if (!l.bias.empty()) g.store_->add(l.bias, {conv ? l.out_channels : l.out_features}, false);
        break;
      }
      case LayerKind::kBatchNorm: {
        Parameter& gamma = g.store_->add(l.weight, {l.features}, false);
        std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
        g.store_->add(l.bias, {l.features}, false);
        g.bn_->layers.emplace(l.name, BnStats(l.features));
        break;
      }
      default:
        break;
    }
  }
  g.build_layers();
  return g;
}

void ModelGraph::build_layers() {
  layers_.clear();
  for (std::size_t i = 0; i < arch_.layers.size(); ++i)
    layers_.push_back(make_layer(arch_.layers[i], store_.get(), bn_.get(), shapes_[i]));
}

ModelGraph ModelGraph::clone() const {
  ModelGraph g;
  g.arch_ = arch_;
  g.shapes_ = shapes_;
  g.store_ = std::make_shared<ParameterStore>(*store_);
  g.bn_ = std::make_shared<DualBatchNormState>(*bn_);
  g.training_ = training_;
  g.dropout_rng_ = dropout_rng_;
  g.build_layers();
  return g;
}

ModelGraph ModelGraph::from_checkpoint(const Checkpoint& ckpt) {
  ModelGraph g = build(ckpt.arch, 0);
  g.store_->load(ckpt.params);
  for (auto& [name, stats] : g.bn_->layers) {
    auto it = ckpt.bn.find(name);
    if (it == ckpt.bn.end()) throw ShapeError("checkpoint lacks BN statistics for '" + name + "'");
    if (it->second.mean_main.size() != stats.mean_main.size())
      throw ShapeError("checkpoint BN statistics for '" + name + "' have the wrong size");
    stats = it->second;
  }
  return g;
}

Checkpoint ModelGraph::to_checkpoint() const {
  Checkpoint c;
  c.arch = arch_;
  c.params = store_->snapshot();
  c.bn = bn_->layers;
  return c;
}

Tensor ModelGraph::forward_main(const Tensor& batch) {
  if (bn_->mode != BnMode::kMain)
    throw ModeError("forward_main requires BN mode 'main' but the active mode is '" +
                    to_string(bn_->mode) + "'");
  ForwardContext ctx;
  ctx.training = training_;
  ctx.mode = BnMode::kMain;
  ctx.rng = &dropout_rng_;
  ctx.epsilon = bn_->epsilon;
  ctx.momentum = bn_->momentum;
  Tensor x = batch;
  for (auto& layer : layers_) x = layer->forward(x, ctx);
  return x;
}

Tensor ModelGraph::backward(const Tensor& grad_logits) {
  Tensor g = grad_logits;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad) {
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  if (grad) *grad = Tensor(logits.shape);
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const Real* z = logits.data.data() + static_cast<std::size_t>(r) * k;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (int j = 0; j < k; ++j) mx = std::max(mx, z[j]);
    Real s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(z[j] - mx);
    const Real lse = mx + std::log(s);
    loss += lse - z[labels[r]];
    if (grad) {
      for (int j = 0; j < k; ++j) {
        const Real p = std::exp(z[j] - lse);
        (*grad)[static_cast<std::size_t>(r) * k + j] = (p - (j == labels[r] ? 1.0 : 0.0)) / n;
      }
    }
  }
  return loss / n;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (int r = 0; r < n; ++r) {
    const Real* z = logits.data.data() + static_cast<std::size_t>(r) * k;
    out[r] = static_cast<int>(std::max_element(z, z + k) - z);
  }
  return out;
}

}  // namespace fedmark
