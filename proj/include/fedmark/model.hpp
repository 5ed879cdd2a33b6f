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

#ifndef FEDMARK_MODEL_HPP_
#define FEDMARK_MODEL_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmark/rng.hpp"
#include "fedmark/tensor.hpp"

namespace fedmark {

class ShapeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ModeError : public std::logic_error {
  using std::logic_error::logic_error;
};

enum class LayerKind {
  kLinear,
  kConv,
  kBatchNorm,
  kRelu,
  kMaxPool,
  kDropout,
  kFlatten,
  // Produced only by transposition.
  kTransposedLinear,
  kTransposedConv,
  kTransposedPool,
  kReshape,
};

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::string name;

  int in_features = 0;  // linear
  int out_features = 0;
  int in_channels = 0;  // conv
  int out_channels = 0;
  int kernel = 0;  // conv and maxpool
  int stride = 1;
  int padding = 0;
  int output_padding_h = 0;  // transposed conv/pool only
  int output_padding_w = 0;
  int features = 0;  // batchnorm channels
  double drop_prob = 0.5;
  Shape reshape_to;  // reshape target (C, H, W)

  // Names in the ParameterStore. For batchnorm these are gamma and beta.
  std::string weight;
  std::string bias;
};

struct ImageDims {
  int height = 28;
  int width = 28;
  int channels = 1;

  bool operator==(const ImageDims&) const = default;
  Shape chw() const { return {channels, height, width}; }
  int numel() const { return height * width * channels; }
};

struct ArchConfig {
  std::string name = "custom";
  ImageDims input;
  int num_classes = 10;
  std::vector<LayerSpec> layers;
};

// Two conv blocks (conv/BN/ReLU/maxpool) followed by two fully connected
// layers; roughly 50k parameters on 28x28x1.
ArchConfig tiny_vgg(ImageDims input, int num_classes, int hidden = 64, int c1 = 8, int c2 = 16);

// Shape of one sample after each layer; element 0 is the input shape.
// Throws ShapeError naming the first offending layer pair.
std::vector<Shape> infer_shapes(const ArchConfig& arch);

struct Parameter {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  // Conv/linear weights; the set that pruning and quantization act on.
  bool is_weight = false;
};

using TensorMap = std::map<std::string, Tensor>;

// Name -> array with a gradient slot. Main and transposed models hold the
// same store, so a write through either is visible to both.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Shape shape, bool is_weight);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }

  std::size_t count() const;
  void zero_grad();
  TensorMap snapshot() const;
  TensorMap grads() const;
  void load(const TensorMap& values);

 private:
  std::vector<std::string> order_;
  std::map<std::string, Parameter> params_;
};

enum class BnMode { kMain, kWatermark };
std::string to_string(BnMode mode);

struct BnStats {
  std::vector<Real> mean_main, var_main;
  std::vector<Real> mean_wm, var_wm;

  explicit BnStats(int channels = 0)
      : mean_main(channels, 0.0), var_main(channels, 1.0),
        mean_wm(channels, 0.0), var_wm(channels, 1.0) {}

  std::vector<Real>& mean(BnMode m) { return m == BnMode::kMain ? mean_main : mean_wm; }
  std::vector<Real>& var(BnMode m) { return m == BnMode::kMain ? var_main : var_wm; }
  const std::vector<Real>& mean(BnMode m) const {
    return m == BnMode::kMain ? mean_main : mean_wm;
  }
  const std::vector<Real>& var(BnMode m) const { return m == BnMode::kMain ? var_main : var_wm; }
};

struct BnMoments {
  std::vector<Real> mean, var;
  bool operator==(const BnMoments&) const = default;
};
// Running moments of one task for every BN layer, keyed by layer name.
using BnMomentMap = std::map<std::string, BnMoments>;

struct DualBatchNormState {
  std::map<std::string, BnStats> layers;
  double momentum = 0.1;
  double epsilon = 1e-5;
  BnMode mode = BnMode::kMain;

  BnMomentMap export_moments(BnMode m) const;
  // Throws ShapeError if a layer is missing or sized differently.
  void import_moments(BnMode m, const BnMomentMap& moments);
  // Mean 0 / variance 1 for the given task.
  void reset_moments(BnMode m);
};

struct ForwardContext {
  bool training = false;
  BnMode mode = BnMode::kMain;
  Rng* rng = nullptr;  // dropout masks
  double epsilon = 1e-5;
  double momentum = 0.1;
};

// One differentiable layer. forward caches what backward needs; backward
// accumulates parameter gradients into the store and returns d/d input.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual const LayerSpec& spec() const = 0;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, ParameterStore* store,
                                  DualBatchNormState* bn, Shape in_shape);

struct Checkpoint;

class ModelGraph {
 public:
  static ModelGraph build(const ArchConfig& arch, std::uint64_t seed = 0);
  static ModelGraph from_checkpoint(const Checkpoint& ckpt);

  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;
  ModelGraph(const ModelGraph&) = delete;
  ModelGraph& operator=(const ModelGraph&) = delete;

  ModelGraph clone() const;

  // Logits (N, num_classes). Requires BN mode main.
  Tensor forward_main(const Tensor& batch);
  // Backpropagates d loss / d logits of the last forward_main.
  Tensor backward(const Tensor& grad_logits);

  void set_bn_mode(BnMode mode) { bn_->mode = mode; }
  BnMode bn_mode() const { return bn_->mode; }
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  void seed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

  const ArchConfig& arch() const { return arch_; }
  ParameterStore& params() { return *store_; }
  const ParameterStore& params() const { return *store_; }
  DualBatchNormState& bn_state() { return *bn_; }
  const DualBatchNormState& bn_state() const { return *bn_; }
  std::shared_ptr<ParameterStore> shared_params() const { return store_; }
  std::shared_ptr<DualBatchNormState> shared_bn() const { return bn_; }
  const std::vector<Shape>& layer_shapes() const { return shapes_; }

  Checkpoint to_checkpoint() const;

 private:
  ModelGraph() = default;
  void build_layers();

  ArchConfig arch_;
  std::shared_ptr<ParameterStore> store_;
  std::shared_ptr<DualBatchNormState> bn_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Shape> shapes_;
  bool training_ = false;
  Rng dropout_rng_{0};
};

// Softmax cross-entropy averaged over the batch; grad receives d loss/d logits.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad);
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace fedmark

#endif  // FEDMARK_MODEL_HPP_
