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

#ifndef FEDMARK_FEDERATION_HPP_
#define FEDMARK_FEDERATION_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedmark/checkpoint.hpp"
#include "fedmark/data.hpp"
#include "fedmark/training.hpp"
#include "fedmark/verification.hpp"
#include "json.hpp"

namespace fedmark {

enum class Scheme { kFedAvg, kFedProx, kFedPaq, kFedAdam, kScaffold };
std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

struct AggregatorConfig {
  Scheme scheme = Scheme::kFedAvg;
  int rounds = 50;
  int clients = 4;
  double prox_mu = 0.01;
  double paq_levels = 256.0;  // may exceed 2^32 in limit tests
  double adam_lr = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_tau = 1e-3;
  double scaffold_server_lr = 1.0;

  void validate() const;
};

// p_i = |D_i| / |D|.
std::vector<double> client_weights(std::span<const std::size_t> samples);

// Weighted mean of parameter maps; every map must hold the same names and shapes.
TensorMap weighted_mean(const std::vector<const TensorMap*>& maps, std::span<const double> w);
BnMomentMap weighted_mean_bn(const std::vector<const BnMomentMap*>& maps,
                             std::span<const double> w);

TensorMap aggregate_fedavg(const std::vector<LocalUpdate>& updates);

// Uniform quantize-dequantize onto `levels` points spanning [min, max] of t.
Tensor quantize_uniform(const Tensor& t, double levels);
TensorMap aggregate_fedpaq(const TensorMap& global, const std::vector<LocalUpdate>& updates,
                           double levels);

struct AdamServerState {
  TensorMap m, v;
  int steps = 0;
};
// Pseudo-gradient = weighted mean delta; x += lr * m / (sqrt(v) + tau).
TensorMap aggregate_fedadam(const TensorMap& global, const std::vector<LocalUpdate>& updates,
                            const AggregatorConfig& cfg, AdamServerState& state);

struct ScaffoldState {
  TensorMap server;               // c
  std::vector<TensorMap> client;  // c_i
};
// Option-II control update for one client: c_i + = c_i - c + (x - y_i) / (K lr).
TensorMap scaffold_client_control(const TensorMap& c_i, const TensorMap& c, const TensorMap& global,
                                  const TensorMap& local, std::size_t steps, double lr);

// Server side of one federation round. Client code only sees the hooks.
class Aggregator {
 public:
  virtual ~Aggregator() = default;
  virtual Scheme scheme() const = 0;
  virtual LocalHooks hooks(int client, const TensorMap& global);
  virtual TensorMap aggregate(const TensorMap& global, const std::vector<LocalUpdate>& updates,
                              const TrainConfig& train) = 0;
};
std::unique_ptr<Aggregator> make_aggregator(const AggregatorConfig& cfg);

// Exposed for tests.
class ScaffoldAggregator : public Aggregator {
 public:
  explicit ScaffoldAggregator(const AggregatorConfig& cfg) : cfg_(cfg) {}
  Scheme scheme() const override { return Scheme::kScaffold; }
  LocalHooks hooks(int client, const TensorMap& global) override;
  TensorMap aggregate(const TensorMap& global, const std::vector<LocalUpdate>& updates,
                      const TrainConfig& train) override;
  const ScaffoldState& state() const { return state_; }

 private:
  void ensure(int clients, const TensorMap& global);
  AggregatorConfig cfg_;
  ScaffoldState state_;
  std::vector<TensorMap> correction_;  // c - c_i for the current round
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | idx
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t train_size = 5000;
  std::size_t test_size = 1000;
  std::size_t holdout_size = 500;  // disjoint from the client shards
  SyntheticSpec synthetic;
  double alpha = 0.8;
};

struct DataBundle {
  Dataset train, test, holdout;
  std::vector<std::vector<std::size_t>> shards;
};
DataBundle prepare_data(const DataConfig& cfg, int clients, std::uint64_t seed);

struct WatermarkConfig {
  std::string source = "logo";  // logo | files | dotcode
  std::vector<std::string> files;  // cycled over clients
  std::size_t dotcode_bits = 784;
  std::string dotcode_hex;  // fixed payload for every client; random per client if empty
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 1;
  int hidden = 64;  // TinyVGG fully connected width
  int conv1 = 8;    // TinyVGG conv widths
  int conv2 = 16;
  DataConfig data;
  TrainConfig train;
  AggregatorConfig agg;
  WatermarkConfig watermark;
  int eval_every = 10;        // test accuracy and images every k rounds (and the last)
  int checkpoint_every = 0;   // 0: final checkpoint only

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;
};
ExperimentConfig load_config(const std::filesystem::path& path);

// Per-client keys, vectors and watermarks; deterministic in (seed, index).
std::vector<ClientState> make_clients(const ExperimentConfig& cfg, const DataBundle& data);

struct RoundSummary {
  int round = 0;
  double test_acc = -1.0;  // negative when not evaluated
  std::vector<double> ssim;  // global model, per client; empty when not evaluated
};

struct RunResult {
  Checkpoint global;
  std::vector<ClientState> clients;
  std::vector<WatermarkKey> keys;
  std::vector<RoundMetrics> history;
  std::vector<RoundSummary> rounds;
  double final_accuracy = 0.0;
  std::vector<double> final_ssim;  // verify SSIM per client key
  Dataset test, holdout;
};

struct RunOptions {
  std::optional<std::filesystem::path> run_dir;
  std::function<void(const std::string&)> log;
};

RunResult run_federation(const ExperimentConfig& cfg, const RunOptions& opts = {});

}  // namespace fedmark

#endif  // FEDMARK_FEDERATION_HPP_
