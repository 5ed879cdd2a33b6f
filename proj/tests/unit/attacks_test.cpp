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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fedmark/metrics.hpp"
#include "test_util.hpp"

namespace fedmark {
namespace {

using testing::tiny_experiment;
using testing::uniform_values;

class AttackFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ExperimentConfig cfg = tiny_experiment();
    cfg.agg.rounds = 3;
    run_ = new RunResult(run_federation(cfg));
  }
  static void TearDownTestSuite() {
    delete run_;
    run_ = nullptr;
  }
  static RunResult* run_;
};
RunResult* AttackFixture::run_ = nullptr;

std::size_t count_nonzero_weights(const Checkpoint& c, std::size_t* total) {
  const ModelGraph g = ModelGraph::from_checkpoint(c);
  std::size_t nz = 0, n = 0;
  for (const auto& name : g.params().names()) {
    if (!g.params().at(name).is_weight) continue;
    for (Real v : c.params.at(name).data) {
      ++n;
      nz += v != 0.0;
    }
  }
  if (total) *total = n;
  return nz;
}

// flatten -> linear 5 -> 2: exactly ten weights.
Checkpoint ten_weight_checkpoint(const std::vector<Real>& w) {
  ArchConfig a;
  a.input = {1, 1, 5};
  a.num_classes = 2;
  LayerSpec f;
  f.kind = LayerKind::kFlatten;
  f.name = "flatten";
  LayerSpec l;
  l.kind = LayerKind::kLinear;
  l.name = "fc";
  l.in_features = 5;
  l.out_features = 2;
  l.weight = "fc.weight";
  l.bias = "fc.bias";
  a.layers = {f, l};
  ModelGraph g = ModelGraph::build(a, 1);
  g.params().at("fc.weight").value = w;
  g.params().at("fc.bias").value = {0.001, -0.001};
  return g.to_checkpoint();
}

TEST(Prune, ZeroRatioIsIdentity) {
  const Checkpoint c = ten_weight_checkpoint(uniform_values(10, 1, -1.0, 1.0));
  const Checkpoint p = prune(c, 0.0);
  EXPECT_EQ(p.params.at("fc.weight").data, c.params.at("fc.weight").data);
}

TEST(Prune, HalfZeroesSmallestMagnitudes) {
  const std::vector<Real> w{0.5, -0.1, 0.9, 0.05, -0.7, 0.3, -0.02, 0.8, -0.6, 0.2};
  const Checkpoint p = prune(ten_weight_checkpoint(w), 0.5);
  const auto& out = p.params.at("fc.weight").data;
  const std::vector<Real> expect{0.5, 0, 0.9, 0, -0.7, 0, 0, 0.8, -0.6, 0};
  for (int i = 0; i < 10; ++i) EXPECT_FLOAT_EQ(out[i], expect[i]);
  EXPECT_FLOAT_EQ(p.params.at("fc.bias")[0], 0.001);  // biases untouched
}

TEST(Prune, RejectsRatioOne) {
  const Checkpoint c = ten_weight_checkpoint(uniform_values(10, 1));
  EXPECT_THROW(prune(c, 1.0), std::invalid_argument);
  EXPECT_THROW(prune(c, -0.1), std::invalid_argument);
}

TEST_F(AttackFixture, PruneFractionAndScope) {
  for (double ratio : {0.2, 0.4, 0.6, 0.8}) {
    std::size_t total = 0;
    const Checkpoint p = prune(run_->global, ratio);
    const std::size_t nz = count_nonzero_weights(p, &total);
    const double expect = (1.0 - ratio) * static_cast<double>(total);
    EXPECT_LE(std::abs(static_cast<double>(nz) - expect), 1.0) << ratio;
    for (const auto& name : {"bn1.weight", "bn1.bias", "conv1.bias", "fc2.bias"})
      EXPECT_EQ(p.params.at(name).data, run_->global.params.at(name).data) << name;
    EXPECT_EQ(p.bn.at("bn1").mean_main, run_->global.bn.at("bn1").mean_main);
  }
  EXPECT_EQ(serialize_checkpoint(prune(run_->global, 0.4)),
            serialize_checkpoint(prune(run_->global, 0.4)));
}

TEST(Quantize, SixteenBitErrorBound) {
  const auto w = uniform_values(10, 3, -2.0, 2.0);
  const Checkpoint orig = ten_weight_checkpoint(w);
  const Checkpoint q = quantize(orig, 16);
  const auto& c = orig.params.at("fc.weight").data;
  double m = 0.0;
  for (Real v : c) m = std::max(m, std::abs(v));
  for (int i = 0; i < 10; ++i)
    EXPECT_LE(std::abs(q.params.at("fc.weight")[i] - c[i]), 0.5 * m / (std::pow(2.0, 15) - 1.0) + 1e-15);
}

TEST(Quantize, ConstantTensorUnchanged) {
  const std::vector<Real> w(10, 0.375);
  const Checkpoint q = quantize(ten_weight_checkpoint(w), 4);
  for (Real v : q.params.at("fc.weight").data) EXPECT_DOUBLE_EQ(v, 0.375);
}

TEST(Quantize, TwoBitsGiveAtMostFourLevels) {
  const Checkpoint q = quantize(ten_weight_checkpoint(uniform_values(10, 4, -1.0, 1.0)), 2);
  const auto& d = q.params.at("fc.weight").data;
  EXPECT_LE(std::set<Real>(d.begin(), d.end()).size(), 4u);
  EXPECT_THROW(quantize(q, 3), std::invalid_argument);
}

TEST_F(AttackFixture, FinetuneZeroRoundsAndDeterminism) {
  const Checkpoint same = finetune(run_->global, run_->holdout, 0, 0.001, 0.9, 8, 1);
  EXPECT_EQ(serialize_checkpoint(same), serialize_checkpoint(run_->global));
  const Checkpoint a = finetune(run_->global, run_->holdout, 2, 0.01, 0.9, 8, 3);
  const Checkpoint b = finetune(run_->global, run_->holdout, 2, 0.01, 0.9, 8, 3);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
  EXPECT_NE(a.params.at("fc2.weight").data, run_->global.params.at("fc2.weight").data);
  for (const auto& [name, st] : a.bn) {
    EXPECT_EQ(st.mean_wm, run_->global.bn.at(name).mean_wm);
    EXPECT_EQ(st.var_wm, run_->global.bn.at(name).var_wm);
  }
}

TEST_F(AttackFixture, OverwriteImprovesAttackerAndKeepsSlots) {
  const ImageDims d = run_->global.arch.input;
  const WatermarkImage wm = procedural_logo(99, 7, d);
  TrainConfig cfg = tiny_experiment().train;
  cfg.lr = 0.05;
  const OverwriteResult zero = overwrite(run_->global, wm, run_->holdout, cfg, 0, 1);
  for (const auto& [name, t] : zero.model.params)
    EXPECT_EQ(t.data, run_->global.params.at(name).data);
  const OverwriteResult r = overwrite(run_->global, wm, run_->holdout, cfg, 8, 1);
  ASSERT_EQ(r.attacker_ssim.size(), 8u);
  EXPECT_GT(r.attacker_ssim.back(), r.attacker_ssim.front());
  for (const auto& [name, st] : r.model.bn) {
    EXPECT_EQ(st.mean_wm, run_->global.bn.at(name).mean_wm);
    EXPECT_EQ(st.var_wm, run_->global.bn.at(name).var_wm);
  }
  EXPECT_EQ(r.attacker_key.vector.size(), static_cast<std::size_t>(run_->global.arch.num_classes));
  const auto again = overwrite(run_->global, wm, run_->holdout, cfg, 8, 1);
  EXPECT_EQ(serialize_checkpoint(again.model), serialize_checkpoint(r.model));
}

TEST_F(AttackFixture, OverwriteWithoutData) {
  const WatermarkImage wm = procedural_logo(99, 7, run_->global.arch.input);
  const OverwriteResult r =
      overwrite(run_->global, wm, Dataset{}, tiny_experiment().train, 2, 1);
  EXPECT_EQ(r.attacker_ssim.size(), 2u);
  EXPECT_THROW(overwrite(run_->global, procedural_logo(1, 0, {8, 8, 1}), run_->holdout,
                         tiny_experiment().train, 1, 1),
               ShapeError);
}

TEST_F(AttackFixture, ForgeIsDeterministicAndScored) {
  const WatermarkImage wm = run_->keys[0].reference_image();
  const auto a = forge(run_->global, wm, ForgeMode::kTargeted, 20, 4, 0.05, 3);
  const auto b = forge(run_->global, wm, ForgeMode::kTargeted, 20, 4, 0.05, 3);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].vector, b[i].vector);
    EXPECT_EQ(a[i].target_ssim, b[i].target_ssim);
    EXPECT_EQ(a[i].vector.size(), 4u);
  }
  const std::vector<double> taus{0.0, 0.5, 1.0};
  const ForgeryScore s = score_forgery(run_->global, run_->keys[0], a, taus);
  ASSERT_EQ(s.ssim.size(), 4u);
  for (std::size_t t = 0; t < taus.size(); ++t) EXPECT_DOUBLE_EQ(s.asr[t], asr(s.ssim, taus[t]));
  EXPECT_THROW(forge(run_->global, wm, ForgeMode::kUntargeted, 1, 0, 0.05, 1),
               std::invalid_argument);
}

TEST_F(AttackFixture, ForgeOptimizationLowersObjective) {
  const WatermarkImage wm = run_->keys[1].reference_image();
  const auto none = forge(run_->global, wm, ForgeMode::kTargeted, 0, 3, 0.05, 8);
  const auto many = forge(run_->global, wm, ForgeMode::kTargeted, 200, 3, 0.05, 8);
  double before = 0.0, after = 0.0;
  for (int i = 0; i < 3; ++i) {
    before += none[i].target_ssim;
    after += many[i].target_ssim;
  }
  EXPECT_GE(after, before);
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  c.ratio = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = AttackConfig{};
  c.bits = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = AttackConfig{};
  c.attempts = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(attack_kind_from_string(to_string(AttackKind::kOverwrite)), AttackKind::kOverwrite);
  EXPECT_THROW(attack_kind_from_string("distill"), std::invalid_argument);
}

TEST(RandomImage, SeededAndQuantized) {
  const ImageDims d{6, 6, 1};
  EXPECT_EQ(random_image(d, 4).pixels, random_image(d, 4).pixels);
  EXPECT_NE(random_image(d, 4).pixels, random_image(d, 5).pixels);
  for (Real v : random_image(d, 4).pixels) EXPECT_DOUBLE_EQ(v, std::round(v * 255.0) / 255.0);
}

}  // namespace
}  // namespace fedmark
