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

#include "fedmark/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedmark {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(y_w > 0.0 && y_w < 1.0)) fail("y_w must lie in (0, 1)");
  if (!(margin > 0.0 && margin < 1.0)) fail("margin must lie in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) fail("delta must lie in (0, 1)");
  if (local_epochs < 1) fail("local_epochs must be >= 1");
  if (batch_size < 1 || wm_batch < 1) fail("batch sizes must be >= 1");
  if (watermark_enabled && num_vectors < 2) fail("num_vectors must be >= 2");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
}

double contrastive_loss_value(std::span<const double> ssim, std::span<const std::uint8_t> positive,
                              double y_w, double margin) {
  if (ssim.empty()) throw std::invalid_argument("contrastive loss on an empty batch");
  if (ssim.size() != positive.size())
    throw std::invalid_argument("contrastive loss: labels and outputs differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < ssim.size(); ++i)
    total += positive[i] ? y_w * (1.0 - ssim[i]) : (1.0 - y_w) * std::max(0.0, margin - ssim[i]);
  return total / static_cast<double>(ssim.size());
}

namespace {

void check_batch(const Tensor& outputs, std::span<const std::uint8_t> positive,
                 const WatermarkImage& wm) {
  if (outputs.rank() != 4 || outputs.dim(0) == 0)
    throw std::invalid_argument("watermark loss on an empty batch");
  if (static_cast<std::size_t>(outputs.dim(0)) != positive.size())
    throw std::invalid_argument("watermark loss: " + std::to_string(positive.size()) +
                                " labels for " + std::to_string(outputs.dim(0)) + " outputs");
  const Shape img{outputs.dim(1), outputs.dim(2), outputs.dim(3)};
  if (img != wm.dims.chw())
    throw ShapeError("watermark " + shape_str(wm.dims.chw()) + " does not match outputs " +
                     shape_str(img));
}

}  // namespace

LossResult contrastive_loss(const Tensor& outputs, std::span<const std::uint8_t> positive,
                            const WatermarkImage& wm, double y_w, double margin,
                            const SsimConfig& cfg) {
  check_batch(outputs, positive, wm);
  const int n = outputs.dim(0);
  LossResult r;
  r.grad = Tensor(outputs.shape);
  r.ssim.resize(n);
  std::vector<Real> g(wm.pixels.size());
  for (int i = 0; i < n; ++i) {
    const double s = ssim_with_grad(outputs.sample(i), wm.pixels, wm.dims, cfg, g);
    r.ssim[i] = s;
    double coeff = 0.0;  // d term / d ssim
    if (positive[i]) {
      coeff = -y_w;
    } else if (s < margin) {
      coeff = -(1.0 - y_w);
    }
    auto dst = r.grad.sample(i);
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] = coeff * g[k] / n;
  }
  r.loss = contrastive_loss_value(r.ssim, positive, y_w, margin);
  return r;
}

LossResult reconstruction_loss(const Tensor& outputs, std::span<const std::uint8_t> positive,
                               const WatermarkImage& wm, const SsimConfig& cfg) {
  check_batch(outputs, positive, wm);
  const int n = outputs.dim(0);
  const auto count = std::count(positive.begin(), positive.end(), 1);
  if (count == 0) throw std::invalid_argument("reconstruction loss needs a positive sample");
  LossResult r;
  r.grad = Tensor(outputs.shape);
  r.ssim.assign(n, 0.0);
  std::vector<Real> g(wm.pixels.size());
  for (int i = 0; i < n; ++i) {
    if (!positive[i]) {
      r.ssim[i] = ssim(outputs.sample(i), wm.pixels, wm.dims, cfg);
      continue;
    }
    const double s = ssim_with_grad(outputs.sample(i), wm.pixels, wm.dims, cfg, g);
    r.ssim[i] = s;
    r.loss += (1.0 - s) / static_cast<double>(count);
    auto dst = r.grad.sample(i);
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] = -g[k] / static_cast<double>(count);
  }
  return r;
}

double proximal_term(const TensorMap& local, const TensorMap& ref, double mu, TensorMap* grad) {
  double sq = 0.0;
  for (const auto& [name, t] : local) {
    auto it = ref.find(name);
    if (it == ref.end()) throw ShapeError("proximal term: reference lacks '" + name + "'");
    if (it->second.size() != t.size())
      throw ShapeError("proximal term: '" + name + "' differs in size from the reference");
    Tensor* g = nullptr;
    if (grad) {
      auto [gi, inserted] = grad->try_emplace(name, Tensor(t.shape));
      g = &gi->second;
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double d = t[i] - it->second[i];
      sq += d * d;
      if (g) (*g)[i] += mu * d;
    }
  }
  return 0.5 * mu * sq;
}

Workspace::Workspace(ModelGraph model)
    : model_(std::move(model)), transposed_(TransposedModel::build(model_)) {}

void Sgd::step(ParameterStore& store) {
  for (const auto& name : store.names()) {
    Parameter& p = store.at(name);
    auto& v = velocity_[name];
    if (v.size() != p.value.size()) v.assign(p.value.size(), 0.0);
    const double wd = p.is_weight ? weight_decay_ : 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      v[i] = momentum_ * v[i] + p.grad[i] + wd * p.value[i];
      p.value[i] -= lr_ * v[i];
    }
  }
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

double main_step(ModelGraph& model, const Dataset& data, std::span<const std::size_t> idx,
                 std::size_t* correct) {
  model.set_bn_mode(BnMode::kMain);
  model.set_training(true);
  const Tensor logits = model.forward_main(data.batch(idx));
  const auto labels = data.batch_labels(idx);
  Tensor g;
  const double ce = cross_entropy(logits, labels, &g);
  model.backward(g);
  if (correct) {
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) *correct += pred[i] == labels[i];
  }
  return ce;
}

// Gradient of the clamped image passed to the raw output, except where a
// descent step would push an out-of-range pixel further out.
void straight_through_clamp(const Tensor& raw, Tensor& grad) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if ((raw[i] < 0.0 && grad[i] > 0.0) || (raw[i] > 1.0 && grad[i] < 0.0)) grad[i] = 0.0;
  }
}

void add_into_grads(ParameterStore& store, const TensorMap& extra) {
  for (const auto& [name, t] : extra) {
    Parameter& p = store.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) p.grad[i] += t[i];
  }
}

}  // namespace

AugmentedVectorSet round_vector_set(const ClientState& client, const TrainConfig& cfg, int round) {
  Rng arng = stream(client.seed, "augment", static_cast<std::uint64_t>(round));
  AugmentedVectorSet vset =
      augment_vectors(client.vector.values, cfg.num_vectors, client.sigma, cfg.delta, arng);
  if (cfg.contrastive_enabled) return vset;
  AugmentedVectorSet pos;
  pos.source = vset.source;
  pos.sigma = vset.sigma;
  pos.delta = vset.delta;
  for (std::size_t i = 0; i < vset.size(); ++i) {
    if (!vset.positive[i]) continue;
    pos.vectors.push_back(vset.vectors[i]);
    pos.positive.push_back(1);
  }
  return pos;
}

void refresh_wm_bn(ClientState& client, Workspace& ws, const TensorMap& params,
                   const BnMomentMap& main_bn, const TrainConfig& cfg, int round) {
  ModelGraph& model = ws.model();
  model.params().load(params);
  model.bn_state().import_moments(BnMode::kMain, main_bn);
  model.bn_state().reset_moments(BnMode::kWatermark);
  recalibrate_wm_bn(ws, round_vector_set(client, cfg, round), cfg.wm_batch);
  client.wm_bn = model.bn_state().export_moments(BnMode::kWatermark);
}

LocalUpdate local_round(ClientState& client, Workspace& ws, const TensorMap& global_params,
                        const BnMomentMap& global_main_bn, const TrainConfig& cfg, int round,
                        const LocalHooks& hooks) {
  cfg.validate();
  ModelGraph& model = ws.model();
  TransposedModel& tmodel = ws.transposed();
  ParameterStore& store = model.params();
  store.load(global_params);
  model.bn_state().import_moments(BnMode::kMain, global_main_bn);
  if (client.wm_bn.empty()) {
    model.bn_state().reset_moments(BnMode::kWatermark);
  } else {
    model.bn_state().import_moments(BnMode::kWatermark, client.wm_bn);
  }
  model.seed_dropout(splitmix64(client.seed ^ splitmix64(static_cast<std::uint64_t>(round))));
  const bool use_wm = cfg.watermark_enabled && cfg.lambda > 0.0 && !client.vector.values.empty();

  AugmentedVectorSet vset;
  if (use_wm) vset = round_vector_set(client, cfg, round);
  const int dim = model.arch().num_classes;

  Rng rng = stream(client.seed, "local-order", static_cast<std::uint64_t>(round));
  Sgd sgd(cfg.lr, cfg.momentum, cfg.weight_decay);
  std::vector<std::size_t> wm_order;
  std::size_t wm_cursor = 0;
  double main_sum = 0.0, wm_sum = 0.0, pos_sum = 0.0, neg_sum = 0.0;
  std::size_t pos_n = 0, neg_n = 0;
  std::size_t steps = 0, correct = 0, seen = 0;
  const std::size_t n = client.data.size();
  if (n == 0 && !use_wm)
    throw TrainingError("client " + std::to_string(client.id) + " has an empty shard");
  // Without main-task data an epoch is one pass over the vector set.
  const std::size_t per_epoch =
      n > 0 ? (n + cfg.batch_size - 1) / cfg.batch_size
            : (vset.size() + cfg.wm_batch - 1) / cfg.wm_batch;

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      store.zero_grad();
      double ce = 0.0;
      if (n > 0) {
        const std::size_t start = b * cfg.batch_size;
        const std::size_t stop = std::min(n, start + cfg.batch_size);
        std::span<const std::size_t> idx(order.data() + start, stop - start);
        ce = main_step(model, client.data, idx, &correct);
        seen += idx.size();
      }
      double wm_loss = 0.0;
      if (use_wm) {
        Tensor vecs({cfg.wm_batch, dim});
        std::vector<std::uint8_t> labels(cfg.wm_batch);
        for (int k = 0; k < cfg.wm_batch; ++k) {
          if (wm_cursor == wm_order.size()) {
            wm_order = shuffled(vset.size(), rng);
            wm_cursor = 0;
          }
          const std::size_t j = wm_order[wm_cursor++];
          std::copy(vset.vectors[j].begin(), vset.vectors[j].end(),
                    vecs.data.begin() + static_cast<std::size_t>(k) * dim);
          labels[k] = vset.positive[j];
        }
        model.set_bn_mode(BnMode::kWatermark);
        tmodel.set_training(true);
        const Tensor raw = tmodel.forward_watermark(vecs);
        const bool clamp = cfg.loss_input == LossInput::kClampStraightThrough;
        const Tensor out = clamp ? clamp_images(raw) : raw;
        LossResult lr = cfg.contrastive_enabled
                            ? contrastive_loss(out, labels, client.watermark, cfg.y_w, cfg.margin,
                                               cfg.ssim)
                            : reconstruction_loss(out, labels, client.watermark, cfg.ssim);
        for (Real& g : lr.grad.data) g *= cfg.lambda;
        if (clamp) straight_through_clamp(raw, lr.grad);
        tmodel.backward(lr.grad);
        tmodel.set_training(false);
        model.set_bn_mode(BnMode::kMain);
        wm_loss = lr.loss;
        for (int k = 0; k < cfg.wm_batch; ++k) {
          if (labels[k]) {
            pos_sum += lr.ssim[k];
            ++pos_n;
          } else {
            neg_sum += lr.ssim[k];
            ++neg_n;
          }
        }
      }
      double prox = 0.0;
      if (hooks.prox_ref && hooks.prox_mu > 0.0) {
        TensorMap g;
        prox = proximal_term(store.snapshot(), *hooks.prox_ref, hooks.prox_mu, &g);
        add_into_grads(store, g);
      }
      if (hooks.correction) add_into_grads(store, *hooks.correction);
      const double total = joint_loss(ce + prox, wm_loss, use_wm ? cfg.lambda : 0.0);
      if (!std::isfinite(total))
        throw TrainingError("non-finite loss at round " + std::to_string(round) + ", client " +
                            std::to_string(client.id) + ", step " + std::to_string(steps) +
                            " (main " + std::to_string(ce) + ", watermark " +
                            std::to_string(wm_loss) + ")");
      sgd.step(store);
      main_sum += ce;
      wm_sum += wm_loss;
      ++steps;
    }
  }
  model.set_training(false);
  if (use_wm) recalibrate_wm_bn(ws, vset, cfg.wm_batch);
  client.wm_bn = model.bn_state().export_moments(BnMode::kWatermark);

  LocalUpdate up;
  up.params = store.snapshot();
  up.main_bn = model.bn_state().export_moments(BnMode::kMain);
  up.samples = n;
  up.steps = steps;
  up.metrics.round = round;
  up.metrics.client = client.id;
  up.metrics.main_loss = main_sum / static_cast<double>(steps);
  up.metrics.wm_loss = wm_sum / static_cast<double>(steps);
  if (seen) up.metrics.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
  up.metrics.steps = steps;
  if (pos_n) up.metrics.pos_ssim = pos_sum / static_cast<double>(pos_n);
  if (neg_n) up.metrics.neg_ssim = neg_sum / static_cast<double>(neg_n);
  if (use_wm) {
    const auto img = reconstruct_image(ws, client.vector.values, client.wm_bn);
    up.metrics.ssim = ssim(img, client.watermark.pixels, client.watermark.dims, cfg.ssim);
  }
  return up;
}

void recalibrate_wm_bn(Workspace& ws, const AugmentedVectorSet& vset, int batch) {
  if (vset.size() == 0 || batch < 1) return;
  ModelGraph& model = ws.model();
  DualBatchNormState& bn = model.bn_state();
  const BnMode saved_mode = bn.mode;
  const double saved_momentum = bn.momentum;
  const int dim = model.arch().num_classes;
  bn.mode = BnMode::kWatermark;
  ws.transposed().set_training(true);
  int k = 0;
  for (std::size_t start = 0; start < vset.size(); start += batch, ++k) {
    const std::size_t stop = std::min(vset.size(), start + batch);
    if (stop - start < 2 && k > 0) break;  // a single sample has no batch variance
    Tensor vecs({static_cast<int>(stop - start), dim});
    for (std::size_t j = start; j < stop; ++j)
      std::copy(vset.vectors[j].begin(), vset.vectors[j].end(),
                vecs.data.begin() + (j - start) * dim);
    bn.momentum = 1.0 / (k + 1);  // cumulative mean of batch moments
    ws.transposed().forward_watermark(vecs);
  }
  ws.transposed().set_training(false);
  bn.momentum = saved_momentum;
  bn.mode = saved_mode;
}

void train_main_only(ModelGraph& model, const Dataset& data, int epochs, int batch_size,
                     double lr, double momentum, double weight_decay, std::uint64_t seed) {
  if (epochs <= 0) return;
  if (data.size() == 0) throw TrainingError("main-task training on an empty dataset");
  Rng rng = stream(seed, "main-only");
  model.seed_dropout(splitmix64(seed));
  Sgd sgd(lr, momentum, weight_decay);
  const BnMode saved = model.bn_mode();
  for (int e = 0; e < epochs; ++e) {
    const auto order = shuffled(data.size(), rng);
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
      const std::size_t stop = std::min(data.size(), start + batch_size);
      model.params().zero_grad();
      const double ce =
          main_step(model, data, std::span<const std::size_t>(order.data() + start, stop - start),
                    nullptr);
      if (!std::isfinite(ce)) throw TrainingError("non-finite loss during main-task training");
      sgd.step(model.params());
    }
  }
  model.set_training(false);
  model.set_bn_mode(saved);
}

double evaluate_accuracy(ModelGraph& model, const Dataset& data, int batch_size) {
  if (data.size() == 0) return 0.0;
  const BnMode saved_mode = model.bn_mode();
  const bool saved_training = model.training();
  model.set_bn_mode(BnMode::kMain);
  model.set_training(false);
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i)
      idx.push_back(i);
    const auto pred = argmax_rows(model.forward_main(data.batch(idx)));
    for (std::size_t k = 0; k < idx.size(); ++k) correct += pred[k] == data.labels[idx[k]];
  }
  model.set_bn_mode(saved_mode);
  model.set_training(saved_training);
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Tensor reconstruct_raw(Workspace& ws, std::span<const Real> vector, const BnMomentMap& wm_bn) {
  ModelGraph& model = ws.model();
  const int dim = model.arch().num_classes;
  if (static_cast<int>(vector.size()) != dim)
    throw ShapeError("extraction vector has " + std::to_string(vector.size()) +
                     " entries, model has " + std::to_string(dim) + " classes");
  const BnMode saved_mode = model.bn_mode();
  const BnMomentMap saved = model.bn_state().export_moments(BnMode::kWatermark);
  model.bn_state().import_moments(BnMode::kWatermark, wm_bn);
  model.set_bn_mode(BnMode::kWatermark);
  ws.transposed().set_training(false);
  Tensor v({1, dim}, std::vector<Real>(vector.begin(), vector.end()));
  Tensor out = ws.transposed().forward_watermark(v);
  model.bn_state().import_moments(BnMode::kWatermark, saved);
  model.set_bn_mode(saved_mode);
  return out.reshaped(model.arch().input.chw());
}

std::vector<Real> reconstruct_image(Workspace& ws, std::span<const Real> vector,
                                    const BnMomentMap& wm_bn) {
  return quantize8(reconstruct_raw(ws, vector, wm_bn).data);
}

}  // namespace fedmark
