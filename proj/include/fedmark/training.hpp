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

#ifndef FEDMARK_TRAINING_HPP_
#define FEDMARK_TRAINING_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmark/data.hpp"
#include "fedmark/metrics.hpp"
#include "fedmark/model.hpp"
#include "fedmark/transposed.hpp"
#include "fedmark/watermark.hpp"

namespace fedmark {

class TrainingError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// How the watermark loss sees transposed outputs during training.
enum class LossInput {
  kRaw,              // unclamped outputs
  // Clamped to [0, 1]; the gradient passes through the clamp unless it
  // would push an out-of-range pixel further out.
  kClampStraightThrough,
};

struct TrainConfig {
  double lambda = 1.0;
  double y_w = 0.3;     // positive-branch weight; negatives use 1 - y_w
  double margin = 0.5;  // hinge margin on negative SSIM
  double delta = 0.95;  // cosine threshold for positive vectors
  int num_vectors = 64;  // augmented vectors regenerated per round
  int local_epochs = 1;
  int batch_size = 32;
  int wm_batch = 8;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;  // conv/linear weights only
  bool contrastive_enabled = true;
  bool watermark_enabled = true;
  LossInput loss_input = LossInput::kClampStraightThrough;
  std::uint64_t seed = 1;
  SsimConfig ssim;

  // Throws std::invalid_argument naming the first out-of-range field.
  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> ssim;  // per sample
  Tensor grad;               // d loss / d outputs, same shape as outputs
};

// Per-sample terms from precomputed SSIM values; mean over the batch.
double contrastive_loss_value(std::span<const double> ssim, std::span<const std::uint8_t> positive,
                              double y_w, double margin);
// outputs (N, C, H, W) against a single watermark.
LossResult contrastive_loss(const Tensor& outputs, std::span<const std::uint8_t> positive,
                            const WatermarkImage& wm, double y_w, double margin,
                            const SsimConfig& cfg = {});
// Mean of 1 - SSIM over positive samples only; negatives are ignored.
LossResult reconstruction_loss(const Tensor& outputs, std::span<const std::uint8_t> positive,
                               const WatermarkImage& wm, const SsimConfig& cfg = {});
inline double joint_loss(double main_loss, double wm_loss, double lambda) {
  return main_loss + lambda * wm_loss;
}

// (mu / 2) * ||local - ref||^2 over all tensors; grad (if given) gets mu * (local - ref).
double proximal_term(const TensorMap& local, const TensorMap& ref, double mu,
                     TensorMap* grad = nullptr);

struct ClientState {
  int id = 0;
  Dataset data;
  ExtractionVector vector;
  WatermarkImage watermark;
  BnMomentMap wm_bn;  // never leaves the client
  double sigma = 0.0;
  std::uint64_t seed = 0;
  TensorMap control;  // SCAFFOLD client control variate
};

struct RoundMetrics {
  int round = 0;
  int client = 0;
  double main_loss = 0.0;
  double wm_loss = 0.0;
  double ssim = 0.0;  // eval-mode SSIM of T(v) vs wm after the round
  double pos_ssim = 0.0;  // training-batch means by label
  double neg_ssim = 0.0;
  double train_acc = 0.0;
  std::size_t steps = 0;
};

struct LocalHooks {
  const TensorMap* prox_ref = nullptr;  // FedProx anchor
  double prox_mu = 0.0;
  const TensorMap* correction = nullptr;  // SCAFFOLD c - c_i, added to every gradient
};

struct LocalUpdate {
  TensorMap params;
  BnMomentMap main_bn;
  std::size_t samples = 0;
  std::size_t steps = 0;
  RoundMetrics metrics;
};

// One client model with its transposed view over the same parameters.
class Workspace {
 public:
  explicit Workspace(ModelGraph model);
  Workspace(Workspace&&) noexcept = default;

  ModelGraph& model() { return model_; }
  TransposedModel& transposed() { return transposed_; }

 private:
  ModelGraph model_;
  TransposedModel transposed_;
};

// Loads the global parameters and main-task BN moments into the workspace,
// installs the client's own watermark BN moments, runs cfg.local_epochs of
// joint SGD and returns the updated parameters. The client's watermark BN
// moments are written back into `client`.
LocalUpdate local_round(ClientState& client, Workspace& ws, const TensorMap& global_params,
                        const BnMomentMap& global_main_bn, const TrainConfig& cfg, int round,
                        const LocalHooks& hooks = {});

// The round's augmented vectors; positives only when the contrastive term is
// disabled.
AugmentedVectorSet round_vector_set(const ClientState& client, const TrainConfig& cfg, int round);

// Loads `params` and recomputes the client's watermark BN moments over the
// round's vector set without training.
void refresh_wm_bn(ClientState& client, Workspace& ws, const TensorMap& params,
                   const BnMomentMap& main_bn, const TrainConfig& cfg, int round);

// Recomputes the watermark-mode BN moments of the workspace as the exact
// average of training-mode batch moments over `vset` in batches of
// `batch`, with the current parameters. Parameters are not modified.
void recalibrate_wm_bn(Workspace& ws, const AugmentedVectorSet& vset, int batch);

// Main-task-only SGD; watermark BN moments are left untouched.
void train_main_only(ModelGraph& model, const Dataset& data, int epochs, int batch_size,
                     double lr, double momentum, double weight_decay, std::uint64_t seed);

double evaluate_accuracy(ModelGraph& model, const Dataset& data, int batch_size = 256);

// Eval-mode T(v) with the given watermark BN moments; unclamped.
Tensor reconstruct_raw(Workspace& ws, std::span<const Real> vector, const BnMomentMap& wm_bn);
// Clamped and 8-bit quantized, as written to disk.
std::vector<Real> reconstruct_image(Workspace& ws, std::span<const Real> vector,
                                    const BnMomentMap& wm_bn);

// Momentum SGD over a parameter store; buffers are keyed by name.
class Sgd {
 public:
  Sgd(double lr, double momentum, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}
  void step(ParameterStore& store);

 private:
  double lr_, momentum_, weight_decay_;
  std::map<std::string, std::vector<Real>> velocity_;
};

}  // namespace fedmark

#endif  // FEDMARK_TRAINING_HPP_
