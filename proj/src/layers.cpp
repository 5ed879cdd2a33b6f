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

#include <cmath>
#include <string>

#include "fedmark/kernels.hpp"
#include "fedmark/model.hpp"

namespace fedmark {
namespace {

Shape with_batch(int n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

void check_input(const LayerSpec& spec, const Shape& expected, const Tensor& x) {
  if (x.rank() != static_cast<int>(expected.size()) + 1 ||
      !std::equal(expected.begin(), expected.end(), x.shape.begin() + 1)) {
    throw ShapeError("layer '" + spec.name + "' (" + to_string(spec.kind) + ") expects " +
                     shape_str(with_batch(x.shape.empty() ? 0 : x.shape[0], expected)) +
                     ", got " + shape_str(x.shape));
  }
}

class LinearLayer final : public Layer {
 public:
  LinearLayer(LayerSpec spec, ParameterStore* store) : spec_(std::move(spec)), store_(store) {}

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_input(spec_, {spec_.in_features}, x);
    input_ = x;
    const int n = x.dim(0);
    Tensor y({n, spec_.out_features});
    const auto& w = store_->at(spec_.weight).value;
    kernels::matmul_xwt(n, spec_.in_features, spec_.out_features, x.data.data(), w.data(),
                        y.data.data());
    if (!spec_.bias.empty()) {
      const auto& b = store_->at(spec_.bias).value;
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < spec_.out_features; ++o) y[r * spec_.out_features + o] += b[o];
    }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    const int n = gy.dim(0);
    auto& w = store_->at(spec_.weight);
    kernels::outer_accumulate(n, spec_.out_features, spec_.in_features, gy.data.data(),
                              input_.data.data(), w.grad.data());
    if (!spec_.bias.empty()) {
      auto& gb = store_->at(spec_.bias).grad;
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < spec_.out_features; ++o) gb[o] += gy[r * spec_.out_features + o];
    }
    Tensor gx({n, spec_.in_features});
    kernels::matmul_xw(n, spec_.out_features, spec_.in_features, gy.data.data(), w.value.data(),
                       gx.data.data());
    return gx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  ParameterStore* store_;
  Tensor input_;
};

// y = (x - b) W, sharing W and b with a forward linear layer.
class TransposedLinearLayer final : public Layer {
 public:
  TransposedLinearLayer(LayerSpec spec, ParameterStore* store)
      : spec_(std::move(spec)), store_(store) {}

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_input(spec_, {spec_.out_features}, x);
    const int n = x.dim(0);
    centered_ = x;
    if (!spec_.bias.empty()) {
      const auto& b = store_->at(spec_.bias).value;
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < spec_.out_features; ++o) centered_[r * spec_.out_features + o] -= b[o];
    }
    Tensor y({n, spec_.in_features});
    kernels::matmul_xw(n, spec_.out_features, spec_.in_features, centered_.data.data(),
                       store_->at(spec_.weight).value.data(), y.data.data());
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    const int n = gy.dim(0);
    auto& w = store_->at(spec_.weight);
    kernels::outer_accumulate(n, spec_.out_features, spec_.in_features, centered_.data.data(),
                              gy.data.data(), w.grad.data());
    Tensor gx({n, spec_.out_features});
    kernels::matmul_xwt(n, spec_.in_features, spec_.out_features, gy.data.data(), w.value.data(),
                        gx.data.data());
    if (!spec_.bias.empty()) {
      auto& gb = store_->at(spec_.bias).grad;
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < spec_.out_features; ++o) gb[o] -= gx[r * spec_.out_features + o];
    }
    return gx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  ParameterStore* store_;
  Tensor centered_;
};

ConvGeom conv_geom(const LayerSpec& spec, const Shape& in_shape, int batch) {
  ConvGeom g;
  g.batch = batch;
  g.in_c = spec.in_channels;
  g.in_h = in_shape.at(1);
  g.in_w = in_shape.at(2);
  g.out_c = spec.out_channels;
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.pad = spec.padding;
  g.out_h = (g.in_h + 2 * g.pad - g.kernel) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.kernel) / g.stride + 1;
  return g;
}

class ConvLayer final : public Layer {
 public:
  ConvLayer(LayerSpec spec, ParameterStore* store, Shape in_shape)
      : spec_(std::move(spec)), store_(store), in_shape_(std::move(in_shape)) {}

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_input(spec_, in_shape_, x);
    geom_ = conv_geom(spec_, in_shape_, x.dim(0));
    input_ = x;
    Tensor y({geom_.batch, geom_.out_c, geom_.out_h, geom_.out_w});
    const Real* bias = spec_.bias.empty() ? nullptr : store_->at(spec_.bias).value.data();
    kernels::conv2d_forward(geom_, x.data.data(), store_->at(spec_.weight).value.data(), bias,
                            y.data.data());
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    auto& w = store_->at(spec_.weight);
    Real* gb = spec_.bias.empty() ? nullptr : store_->at(spec_.bias).grad.data();
    kernels::conv2d_backward_weight(geom_, input_.data.data(), gy.data.data(), w.grad.data(), gb);
    Tensor gx(input_.shape);
    kernels::conv2d_backward_input(geom_, gy.data.data(), w.value.data(), gx.data.data());
    return gx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  ParameterStore* store_;
  Shape in_shape_;
  ConvGeom geom_;
  Tensor input_;
};

// Transposed convolution over the shared forward kernel: y = conv^T(x - b).
// `out_shape` is the forward layer's input shape (C, H, W).
class TransposedConvLayer final : public Layer {
 public:
  TransposedConvLayer(LayerSpec spec, ParameterStore* store, Shape in_shape)
      : spec_(std::move(spec)), store_(store), in_shape_(std::move(in_shape)) {
    out_h_ = (in_shape_.at(1) - 1) * spec_.stride - 2 * spec_.padding + spec_.kernel +
             spec_.output_padding_h;
    out_w_ = (in_shape_.at(2) - 1) * spec_.stride - 2 * spec_.padding + spec_.kernel +
             spec_.output_padding_w;
  }

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_input(spec_, in_shape_, x);
    geom_ = geom(x.dim(0));
    centered_ = x;
    if (!spec_.bias.empty()) {
      const auto& b = store_->at(spec_.bias).value;
      const std::size_t plane = static_cast<std::size_t>(geom_.out_h) * geom_.out_w;
      for (int n = 0; n < geom_.batch; ++n)
        for (int c = 0; c < geom_.out_c; ++c) {
          Real* p = centered_.data.data() + (static_cast<std::size_t>(n) * geom_.out_c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) p[i] -= b[c];
        }
    }
    Tensor y({geom_.batch, geom_.in_c, geom_.in_h, geom_.in_w});
    kernels::conv2d_backward_input(geom_, centered_.data.data(),
                                   store_->at(spec_.weight).value.data(), y.data.data());
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    auto& w = store_->at(spec_.weight);
    kernels::conv2d_backward_weight(geom_, gy.data.data(), centered_.data.data(), w.grad.data(),
                                    nullptr);
    Tensor gx(centered_.shape);
    kernels::conv2d_forward(geom_, gy.data.data(), w.value.data(), nullptr, gx.data.data());
    if (!spec_.bias.empty()) {
      auto& gb = store_->at(spec_.bias).grad;
      const std::size_t plane = static_cast<std::size_t>(geom_.out_h) * geom_.out_w;
      for (int n = 0; n < geom_.batch; ++n)
        for (int c = 0; c < geom_.out_c; ++c) {
          const Real* p = gx.data.data() + (static_cast<std::size_t>(n) * geom_.out_c + c) * plane;
          Real s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          gb[c] -= s;
        }
    }
    return gx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  // Geometry of the forward convolution this layer inverts.
  ConvGeom geom(int batch) const {
    ConvGeom g;
    g.batch = batch;
    g.in_c = spec_.in_channels;  // forward input = transposed output
    g.out_c = spec_.out_channels;
    g.in_h = out_h_;
    g.in_w = out_w_;
    g.out_h = in_shape_.at(1);
    g.out_w = in_shape_.at(2);
    g.kernel = spec_.kernel;
    g.stride = spec_.stride;
    g.pad = spec_.padding;
    return g;
  }

  LayerSpec spec_;
  ParameterStore* store_;
  Shape in_shape_;
  int out_h_ = 0, out_w_ = 0;
  ConvGeom geom_;
  Tensor centered_;
};

class BatchNormLayer final : public Layer {
 public:
  BatchNormLayer(LayerSpec spec, ParameterStore* store, DualBatchNormState* bn, Shape in_shape)
      : spec_(std::move(spec)), store_(store), bn_(bn), in_shape_(std::move(in_shape)) {}

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    check_input(spec_, in_shape_, x);
    const int n = x.dim(0);
    const int c = spec_.features;
    const std::size_t plane = x.size() / (static_cast<std::size_t>(n) * c);
    const std::size_t m = plane * n;
    const auto& gamma = store_->at(spec_.weight).value;
    const auto& beta = store_->at(spec_.bias).value;
    BnStats& stats = bn_->layers.at(spec_.name);
    auto& run_mean = stats.mean(ctx.mode);
    auto& run_var = stats.var(ctx.mode);

    training_ = ctx.training;
    xhat_ = Tensor(x.shape);
    inv_std_.assign(c, 0.0);
    Tensor y(x.shape);
    for (int ch = 0; ch < c; ++ch) {
      Real mean, var;
      if (ctx.training) {
        Real s = 0.0;
        for (int b = 0; b < n; ++b) {
          const Real* p = x.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
        }
        mean = s / static_cast<Real>(m);
        Real ss = 0.0;
        for (int b = 0; b < n; ++b) {
          const Real* p = x.data.data() + (static_cast<std::size_t>(b) * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean) * (p[i] - mean);
        }
        var = ss / static_cast<Real>(m);
        const Real unbiased = m > 1 ? ss / static_cast<Real>(m - 1) : var;
        run_mean[ch] = (1.0 - ctx.momentum) * run_mean[ch] + ctx.momentum * mean;
        run_var[ch] = (1.0 - ctx.momentum) * run_var[ch] + ctx.momentum * unbiased;
      } else {
        mean = run_mean[ch];
        var = run_var[ch];
      }
      const Real inv = 1.0 / std::sqrt(var + ctx.epsilon);
      inv_std_[ch] = inv;
      for (int b = 0; b < n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const Real xh = (x[off + i] - mean) * inv;
          xhat_[off + i] = xh;
          y[off + i] = gamma[ch] * xh + beta[ch];
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    const int n = gy.dim(0);
    const int c = spec_.features;
    const std::size_t plane = gy.size() / (static_cast<std::size_t>(n) * c);
    const Real m = static_cast<Real>(plane * n);
    auto& gamma = store_->at(spec_.weight);
    auto& beta = store_->at(spec_.bias);
    Tensor gx(gy.shape);
    for (int ch = 0; ch < c; ++ch) {
      Real sum_g = 0.0, sum_gx = 0.0;
      for (int b = 0; b < n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += gy[off + i];
          sum_gx += gy[off + i] * xhat_[off + i];
        }
      }
      beta.grad[ch] += sum_g;
      gamma.grad[ch] += sum_gx;
      const Real scale = gamma.value[ch] * inv_std_[ch];
      for (int b = 0; b < n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          gx[off + i] = training_
                            ? scale / m * (m * gy[off + i] - sum_g - xhat_[off + i] * sum_gx)
                            : scale * gy[off + i];
        }
      }
    }
    return gx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  ParameterStore* store_;
  DualBatchNormState* bn_;
  Shape in_shape_;
  bool training_ = false;
  Tensor xhat_;
  std::vector<Real> inv_std_;
};

class ReluLayer final : public Layer {
 public:
  explicit ReluLayer(LayerSpec spec) : spec_(std::move(spec)) {}

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    Tensor y(x.shape);
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) {
        y[i] = x[i];
        mask_[i] = 1;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx(gy.shape);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = mask_[i] ? gy[i] : 0.0;
    return gx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  std::vector<unsigned char> mask_;
};

class DropoutLayer final : public Layer {
 public:
  explicit DropoutLayer(LayerSpec spec) : spec_(std::move(spec)) {}

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    active_ = ctx.training && ctx.rng != nullptr && spec_.drop_prob > 0.0;
    if (!active_) return x;
    const Real keep = 1.0 - spec_.drop_prob;
    std::bernoulli_distribution coin(keep);
    scale_.assign(x.size(), 0.0);
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
      scale_[i] = coin(*ctx.rng) ? 1.0 / keep : 0.0;
      y[i] = x[i] * scale_[i];
    }
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    if (!active_) return gy;
    Tensor gx(gy.shape);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * scale_[i];
    return gx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  bool active_ = false;
  std::vector<Real> scale_;
};

PoolGeom pool_geom(const LayerSpec& spec, const Shape& chw, int batch) {
  PoolGeom g;
  g.batch = batch;
  g.channels = chw.at(0);
  g.in_h = chw.at(1);
  g.in_w = chw.at(2);
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.out_h = (g.in_h - g.kernel) / g.stride + 1;
  g.out_w = (g.in_w - g.kernel) / g.stride + 1;
  return g;
}

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(LayerSpec spec, Shape in_shape)
      : spec_(std::move(spec)), in_shape_(std::move(in_shape)) {}

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_input(spec_, in_shape_, x);
    geom_ = pool_geom(spec_, in_shape_, x.dim(0));
    Tensor y({geom_.batch, geom_.channels, geom_.out_h, geom_.out_w});
    argmax_.assign(y.size(), 0);
    kernels::maxpool_forward(geom_, x.data.data(), y.data.data(), argmax_.data());
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx({geom_.batch, geom_.channels, geom_.in_h, geom_.in_w});
    kernels::maxpool_backward(geom_, gy.data.data(), argmax_.data(), gx.data.data());
    return gx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  Shape in_shape_;
  PoolGeom geom_;
  std::vector<int> argmax_;
};

// Inverse of a max pool: stride-s transposed convolution with a fixed
// uniform kernel, depthwise.
class TransposedPoolLayer final : public Layer {
 public:
  TransposedPoolLayer(LayerSpec spec, Shape in_shape)
      : spec_(std::move(spec)), in_shape_(std::move(in_shape)) {}

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_input(spec_, in_shape_, x);
    geom_ = geom(x.dim(0));
    Tensor y({geom_.batch, geom_.channels, geom_.in_h, geom_.in_w});
    kernels::spread_forward(geom_, x.data.data(), y.data.data());
    return y;
  }

  Tensor backward(const Tensor& gy) override {
    Tensor gx({geom_.batch, geom_.channels, geom_.out_h, geom_.out_w});
    kernels::spread_backward(geom_, gy.data.data(), gx.data.data());
    return gx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  PoolGeom geom(int batch) const {
    PoolGeom g;
    g.batch = batch;
    g.channels = in_shape_.at(0);
    g.out_h = in_shape_.at(1);
    g.out_w = in_shape_.at(2);
    g.kernel = spec_.kernel;
    g.stride = spec_.stride;
    g.in_h = (g.out_h - 1) * g.stride + g.kernel + spec_.output_padding_h;
    g.in_w = (g.out_w - 1) * g.stride + g.kernel + spec_.output_padding_w;
    return g;
  }

  LayerSpec spec_;
  Shape in_shape_;
  PoolGeom geom_;
};

class ReshapeLayer final : public Layer {
 public:
  ReshapeLayer(LayerSpec spec, Shape target) : spec_(std::move(spec)), target_(std::move(target)) {}

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    in_shape_ = x.shape;
    return x.reshaped(with_batch(x.dim(0), target_));
  }

  Tensor backward(const Tensor& gy) override { return gy.reshaped(in_shape_); }

  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  Shape target_;
  Shape in_shape_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, ParameterStore* store,
                                  DualBatchNormState* bn, Shape in_shape) {
  switch (spec.kind) {
    case LayerKind::kLinear:
      return std::make_unique<LinearLayer>(spec, store);
    case LayerKind::kConv:
      return std::make_unique<ConvLayer>(spec, store, std::move(in_shape));
    case LayerKind::kBatchNorm:
      return std::make_unique<BatchNormLayer>(spec, store, bn, std::move(in_shape));
    case LayerKind::kRelu:
      return std::make_unique<ReluLayer>(spec);
    case LayerKind::kMaxPool:
      return std::make_unique<MaxPoolLayer>(spec, std::move(in_shape));
    case LayerKind::kDropout:
      return std::make_unique<DropoutLayer>(spec);
    case LayerKind::kFlatten:
      return std::make_unique<ReshapeLayer>(
          spec, Shape{static_cast<int>(shape_numel(in_shape))});
    case LayerKind::kTransposedLinear:
      return std::make_unique<TransposedLinearLayer>(spec, store);
    case LayerKind::kTransposedConv:
      return std::make_unique<TransposedConvLayer>(spec, store, std::move(in_shape));
    case LayerKind::kTransposedPool:
      return std::make_unique<TransposedPoolLayer>(spec, std::move(in_shape));
    case LayerKind::kReshape:
      return std::make_unique<ReshapeLayer>(spec, spec.reshape_to);
  }
  throw std::invalid_argument("unknown layer kind");
}

}  // namespace fedmark
