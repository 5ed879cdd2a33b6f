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

#include "fedmark/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fedmark {

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::kPrune: return "prune";
    case AttackKind::kFinetune: return "finetune";
    case AttackKind::kQuantize: return "quantize";
    case AttackKind::kOverwrite: return "overwrite";
    case AttackKind::kForge: return "forge";
  }
  return "?";
}

AttackKind attack_kind_from_string(const std::string& s) {
  for (AttackKind k : {AttackKind::kPrune, AttackKind::kFinetune, AttackKind::kQuantize,
                       AttackKind::kOverwrite, AttackKind::kForge})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown attack '" + s +
                              "' (prune, finetune, quantize, overwrite, forge)");
}

void AttackConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("attack: " + what); };
  if (!(ratio >= 0.0 && ratio < 1.0)) fail("ratio must lie in [0, 1)");
  if (bits != 2 && bits != 4 && bits != 8 && bits != 16) fail("bits must be 2, 4, 8 or 16");
  if (rounds < 0) fail("rounds must be >= 0");
  if (!(lr > 0.0) || !(forge_lr > 0.0)) fail("learning rates must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (attempts < 1) fail("attempts must be >= 1");
  if (steps < 0) fail("steps must be >= 0");
  for (double t : taus)
    if (!(t >= -1.0 && t <= 1.0)) fail("tau values must lie in [-1, 1]");
}

namespace {

std::vector<std::string> weight_names(const Checkpoint& ckpt) {
  const ModelGraph g = ModelGraph::from_checkpoint(ckpt);
  std::vector<std::string> out;
  for (const auto& name : g.params().names())
    if (g.params().at(name).is_weight) out.push_back(name);
  return out;
}

}  // namespace

Checkpoint prune(const Checkpoint& ckpt, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw std::invalid_argument("prune ratio must lie in [0, 1), got " + std::to_string(ratio));
  Checkpoint out = ckpt;
  const auto names = weight_names(ckpt);
  struct Ref {
    double mag;
    std::size_t tensor, index;
  };
  std::vector<Ref> all;
  for (std::size_t t = 0; t < names.size(); ++t) {
    const Tensor& w = out.params.at(names[t]);
    for (std::size_t i = 0; i < w.size(); ++i) all.push_back({std::abs(w[i]), t, i});
  }
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(all.size())));
  if (k == 0) return out;
  std::nth_element(all.begin(), all.begin() + static_cast<long>(k - 1), all.end(),
                   [](const Ref& a, const Ref& b) {
                     if (a.mag != b.mag) return a.mag < b.mag;
                     if (a.tensor != b.tensor) return a.tensor < b.tensor;
                     return a.index < b.index;
                   });
  for (std::size_t j = 0; j < k; ++j) out.params.at(names[all[j].tensor])[all[j].index] = 0.0;
  return out;
}

Checkpoint quantize(const Checkpoint& ckpt, int bits) {
  if (bits != 2 && bits != 4 && bits != 8 && bits != 16)
    throw std::invalid_argument("quantize bits must be 2, 4, 8 or 16, got " + std::to_string(bits));
  Checkpoint out = ckpt;
  const double qmax = std::ldexp(1.0, bits - 1) - 1.0;
  for (const auto& name : weight_names(ckpt)) {
    Tensor& w = out.params.at(name);
    double m = 0.0;
    for (Real v : w.data) m = std::max(m, std::abs(v));
    if (m == 0.0) continue;
    for (Real& v : w.data) {
      const double q = std::clamp(std::round(v / m * qmax), -qmax, qmax);
      v = q / qmax * m;
    }
  }
  return out;
}

Checkpoint finetune(const Checkpoint& ckpt, const Dataset& data, int rounds, double lr,
                    double momentum, int batch_size, std::uint64_t seed) {
  if (rounds <= 0) return ckpt;
  ModelGraph g = ModelGraph::from_checkpoint(ckpt);
  train_main_only(g, data, rounds, batch_size, lr, momentum, 0.0, seed);
  Checkpoint out = g.to_checkpoint();
  out.meta = ckpt.meta;
  return out;
}

OverwriteResult overwrite(const Checkpoint& ckpt, const WatermarkImage& attacker_wm,
                          const Dataset& data, const TrainConfig& cfg, int rounds,
                          std::uint64_t seed) {
  Workspace ws(ModelGraph::from_checkpoint(ckpt));
  if (!(attacker_wm.dims == ckpt.arch.input))
    throw ShapeError("attacker watermark " + shape_str(attacker_wm.dims.chw()) +
                     " does not match model input " + shape_str(ckpt.arch.input.chw()));
  ClientState attacker;
  attacker.id = -1;
  attacker.seed = stream(seed, "attacker-seed")();
  attacker.data = data;
  attacker.vector =
      generate_extraction_vector(stream(seed, "attacker-vector")(), ckpt.arch.num_classes);
  attacker.watermark = attacker_wm;
  attacker.sigma = calibrate_sigma(attacker.vector.values, cfg.delta, attacker.seed);

  TensorMap params = ckpt.params;
  BnMomentMap main_bn = ws.model().bn_state().export_moments(BnMode::kMain);
  OverwriteResult res;
  TrainConfig c = cfg;
  c.watermark_enabled = true;
  for (int r = 1; r <= rounds; ++r) {
    LocalUpdate up = local_round(attacker, ws, params, main_bn, c, r);
    params = std::move(up.params);
    main_bn = std::move(up.main_bn);
    res.attacker_ssim.push_back(up.metrics.ssim);
  }
  ws.model().params().load(params);
  ws.model().bn_state().import_moments(BnMode::kMain, main_bn);
  // The checkpoint keeps the original watermark-mode slots.
  res.model = ws.model().to_checkpoint();
  res.model.bn = ckpt.bn;
  for (auto& [name, stats] : res.model.bn) {
    stats.mean_main = main_bn.at(name).mean;
    stats.var_main = main_bn.at(name).var;
  }
  res.model.meta = ckpt.meta;
  res.attacker_key = make_key(attacker, ckpt.arch, rounds, "");
  return res;
}

WatermarkImage random_image(const ImageDims& dims, std::uint64_t seed) {
  Rng rng = stream(seed, "random-image");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  WatermarkImage img;
  img.dims = dims;
  img.pixels.resize(dims.numel());
  for (Real& p : img.pixels) p = u(rng);
  img.pixels = quantize8(img.pixels);
  img.provenance = "random";
  return img;
}

std::vector<ForgeAttempt> forge(const Checkpoint& ckpt, const WatermarkImage& true_wm,
                                ForgeMode mode, int steps, int attempts, double lr,
                                std::uint64_t seed) {
  if (attempts < 1) throw std::invalid_argument("forge needs at least one attempt");
  Workspace ws(ModelGraph::from_checkpoint(ckpt));
  ModelGraph& model = ws.model();
  model.bn_state().reset_moments(BnMode::kWatermark);
  model.set_bn_mode(BnMode::kWatermark);
  ws.transposed().set_training(false);
  const ImageDims dims = ckpt.arch.input;
  const int dim = ckpt.arch.num_classes;
  const std::size_t npix = static_cast<std::size_t>(dims.numel());

  Tensor target({attempts, dims.channels, dims.height, dims.width});
  Tensor v({attempts, dim});
  for (int a = 0; a < attempts; ++a) {
    const WatermarkImage t =
        mode == ForgeMode::kTargeted ? true_wm : random_image(dims, stream(seed, "forge-target", 0, a)());
    if (t.pixels.size() != npix) throw ShapeError("forgery target does not match model input");
    std::copy(t.pixels.begin(), t.pixels.end(), target.data.begin() + a * npix);
    Rng rng = stream(seed, "forge-init", 0, static_cast<std::uint64_t>(a));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < dim; ++k) v[static_cast<std::size_t>(a) * dim + k] = u(rng);
  }

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<double> m(v.size(), 0.0), s(v.size(), 0.0);
  for (int step = 1; step <= steps; ++step) {
    const Tensor out = ws.transposed().forward_watermark(v);
    Tensor g(out.shape);
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = 2.0 * (out[i] - target[i]) / static_cast<double>(npix);
    model.params().zero_grad();
    const Tensor dv = ws.transposed().backward(g);
    const double c1 = 1.0 - std::pow(kBeta1, step), c2 = 1.0 - std::pow(kBeta2, step);
    for (std::size_t i = 0; i < v.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * dv[i];
      s[i] = kBeta2 * s[i] + (1.0 - kBeta2) * dv[i] * dv[i];
      v[i] -= lr * (m[i] / c1) / (std::sqrt(s[i] / c2) + kEps);
    }
  }

  const Tensor out = clamp_images(ws.transposed().forward_watermark(v));
  std::vector<ForgeAttempt> res(attempts);
  for (int a = 0; a < attempts; ++a) {
    res[a].vector.assign(v.data.begin() + static_cast<long>(a) * dim,
                         v.data.begin() + static_cast<long>(a + 1) * dim);
    const auto img = quantize8(out.sample(a));
    res[a].target_ssim = ssim(img, target.sample(a), dims);
  }
  return res;
}

ForgeryScore score_forgery(const Checkpoint& ckpt, const WatermarkKey& key,
                           const std::vector<ForgeAttempt>& attempts,
                           const std::vector<double>& taus) {
  check_key_compatible(key, ckpt);
  Workspace ws(ModelGraph::from_checkpoint(ckpt));
  const WatermarkImage ref = key.reference_image();
  ForgeryScore sc;
  sc.taus = taus;
  for (const auto& a : attempts) {
    const auto img = reconstruct_image(ws, a.vector, key.wm_bn);
    sc.ssim.push_back(ssim(img, ref.pixels, key.dims));
  }
  for (double t : taus) sc.asr.push_back(asr(sc.ssim, t));
  return sc;
}

}  // namespace fedmark
