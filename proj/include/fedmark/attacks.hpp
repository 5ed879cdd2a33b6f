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

#ifndef FEDMARK_ATTACKS_HPP_
#define FEDMARK_ATTACKS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "fedmark/checkpoint.hpp"
#include "fedmark/data.hpp"
#include "fedmark/training.hpp"
#include "fedmark/verification.hpp"
#include "fedmark/watermark.hpp"

// Every attack takes a checkpoint and never a client key. Scoring against
// the legitimate key happens on the verifier side (score_forgery, verify).
namespace fedmark {

enum class AttackKind { kPrune, kFinetune, kQuantize, kOverwrite, kForge };
std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

enum class ForgeMode { kTargeted, kUntargeted };

struct AttackConfig {
  AttackKind kind = AttackKind::kPrune;
  double ratio = 0.4;   // prune
  int rounds = 15;      // finetune epochs / overwrite rounds
  double lr = 0.001;    // finetune
  double momentum = 0.9;
  int batch_size = 32;
  int bits = 8;  // quantize
  TrainConfig overwrite;  // attacker's replica of the training process
  ForgeMode mode = ForgeMode::kUntargeted;
  int steps = 500;
  int attempts = 50;
  double forge_lr = 0.05;
  std::vector<double> taus{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::uint64_t seed = 7;

  void validate() const;
};

// Global unstructured magnitude pruning of conv/linear weights.
Checkpoint prune(const Checkpoint& ckpt, double ratio);
// Per-tensor symmetric quantize-dequantize of conv/linear weights.
Checkpoint quantize(const Checkpoint& ckpt, int bits);
// Main-task-only SGD; watermark BN statistics are untouched.
Checkpoint finetune(const Checkpoint& ckpt, const Dataset& data, int rounds, double lr,
                    double momentum, int batch_size, std::uint64_t seed);

struct OverwriteResult {
  Checkpoint model;
  WatermarkKey attacker_key;
  std::vector<double> attacker_ssim;  // attacker's own SSIM after each round
};
// Joint training with a fresh vector, the attacker's watermark and reset
// watermark BN statistics. `data` may be empty (watermark task only).
OverwriteResult overwrite(const Checkpoint& ckpt, const WatermarkImage& attacker_wm,
                          const Dataset& data, const TrainConfig& cfg, int rounds,
                          std::uint64_t seed);

struct ForgeAttempt {
  std::vector<Real> vector;  // v_atk
  double target_ssim = 0.0;  // attacker-side SSIM against its own target
};
// Minimizes ||T(v) - target||^2 over v with Adam on a surrogate transposed
// model whose watermark BN statistics are mean 0 / variance 1. Targeted mode
// aims at `true_wm`; untargeted mode at a fresh uniform-noise image per attempt.
std::vector<ForgeAttempt> forge(const Checkpoint& ckpt, const WatermarkImage& true_wm,
                                ForgeMode mode, int steps, int attempts, double lr,
                                std::uint64_t seed);

struct ForgeryScore {
  std::vector<double> ssim;  // per attempt, verifier's model vs the true watermark
  std::vector<double> taus;
  std::vector<double> asr;  // per tau
};
ForgeryScore score_forgery(const Checkpoint& ckpt, const WatermarkKey& key,
                           const std::vector<ForgeAttempt>& attempts,
                           const std::vector<double>& taus);

// Random image in [0, 1], 8-bit quantized.
WatermarkImage random_image(const ImageDims& dims, std::uint64_t seed);

}  // namespace fedmark

#endif  // FEDMARK_ATTACKS_HPP_
