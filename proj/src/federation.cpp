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

#include "fedmark/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fedmark/image_io.hpp"

namespace fedmark {

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::kFedAvg: return "fedavg";
    case Scheme::kFedProx: return "fedprox";
    case Scheme::kFedPaq: return "fedpaq";
    case Scheme::kFedAdam: return "fedadam";
    case Scheme::kScaffold: return "scaffold";
  }
  return "?";
}

Scheme scheme_from_string(const std::string& s) {
  for (Scheme k : {Scheme::kFedAvg, Scheme::kFedProx, Scheme::kFedPaq, Scheme::kFedAdam,
                   Scheme::kScaffold})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown aggregation scheme '" + s +
                              "' (fedavg, fedprox, fedpaq, fedadam, scaffold)");
}

void AggregatorConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("aggregator: " + what); };
  if (rounds < 0) fail("rounds must be >= 0");
  if (clients < 1) fail("clients must be >= 1");
  if (!(prox_mu >= 0.0)) fail("prox_mu must be >= 0");
  if (!(paq_levels >= 2.0)) fail("paq_levels must be >= 2");
  if (!(adam_lr > 0.0) || !(adam_tau > 0.0)) fail("adam_lr and adam_tau must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    fail("adam betas must lie in [0, 1)");
  if (!(scaffold_server_lr > 0.0)) fail("scaffold_server_lr must be positive");
}

std::vector<double> client_weights(std::span<const std::size_t> samples) {
  if (samples.empty()) throw std::invalid_argument("no client updates to weight");
  const double total = static_cast<double>(std::accumulate(samples.begin(), samples.end(),
                                                           std::size_t{0}));
  if (!(total > 0.0)) throw std::invalid_argument("client sample counts sum to zero");
  std::vector<double> w(samples.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(samples[i]) / total;
  return w;
}

namespace {

std::vector<double> update_weights(const std::vector<LocalUpdate>& updates) {
  std::vector<std::size_t> n;
  for (const auto& u : updates) n.push_back(u.samples);
  return client_weights(n);
}

std::vector<const TensorMap*> param_ptrs(const std::vector<LocalUpdate>& updates) {
  std::vector<const TensorMap*> out;
  for (const auto& u : updates) out.push_back(&u.params);
  return out;
}

void check_same(const Tensor& a, const Tensor& b, const std::string& name) {
  if (a.shape != b.shape)
    throw ShapeError("'" + name + "' has shape " + shape_str(b.shape) + ", expected " +
                     shape_str(a.shape));
}

// Weighted mean of (update - global).
TensorMap mean_delta(const TensorMap& global, const std::vector<LocalUpdate>& updates,
                     std::span<const double> w) {
  TensorMap d;
  for (const auto& [name, g] : global) {
    Tensor acc(g.shape);
    for (std::size_t k = 0; k < updates.size(); ++k) {
      const Tensor& u = updates[k].params.at(name);
      check_same(g, u, name);
      for (std::size_t i = 0; i < u.size(); ++i) acc[i] += w[k] * (u[i] - g[i]);
    }
    d.emplace(name, std::move(acc));
  }
  return d;
}

}  // namespace

TensorMap weighted_mean(const std::vector<const TensorMap*>& maps, std::span<const double> w) {
  if (maps.empty() || maps.size() != w.size())
    throw std::invalid_argument("weighted_mean: maps and weights differ in count");
  TensorMap out;
  for (const auto& [name, first] : *maps[0]) {
    Tensor acc(first.shape);
    for (std::size_t k = 0; k < maps.size(); ++k) {
      auto it = maps[k]->find(name);
      if (it == maps[k]->end()) throw ShapeError("update " + std::to_string(k) + " lacks '" + name + "'");
      check_same(first, it->second, name);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w[k] * it->second[i];
    }
    out.emplace(name, std::move(acc));
  }
  return out;
}

BnMomentMap weighted_mean_bn(const std::vector<const BnMomentMap*>& maps,
                             std::span<const double> w) {
  if (maps.empty() || maps.size() != w.size())
    throw std::invalid_argument("weighted_mean_bn: maps and weights differ in count");
  BnMomentMap out;
  for (const auto& [name, first] : *maps[0]) {
    BnMoments acc{std::vector<Real>(first.mean.size(), 0.0), std::vector<Real>(first.var.size(), 0.0)};
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const BnMoments& m = maps[k]->at(name);
      if (m.mean.size() != acc.mean.size() || m.var.size() != acc.var.size())
        throw ShapeError("BN moments for '" + name + "' differ in width across clients");
      for (std::size_t i = 0; i < acc.mean.size(); ++i) acc.mean[i] += w[k] * m.mean[i];
      for (std::size_t i = 0; i < acc.var.size(); ++i) acc.var[i] += w[k] * m.var[i];
    }
    out.emplace(name, std::move(acc));
  }
  return out;
}

TensorMap aggregate_fedavg(const std::vector<LocalUpdate>& updates) {
  const auto w = update_weights(updates);
  return weighted_mean(param_ptrs(updates), w);
}

Tensor quantize_uniform(const Tensor& t, double levels) {
  if (!(levels >= 2.0)) throw std::invalid_argument("quantization needs at least 2 levels");
  if (t.size() == 0) return t;
  const auto [lo_it, hi_it] = std::minmax_element(t.data.begin(), t.data.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return t;
  const double step = (hi - lo) / (levels - 1.0);
  Tensor out(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double f = std::round((t[i] - lo) / step) / (levels - 1.0);
    out[i] = lo * (1.0 - f) + hi * f;
  }
  return out;
}

TensorMap aggregate_fedpaq(const TensorMap& global, const std::vector<LocalUpdate>& updates,
                           double levels) {
  const auto w = update_weights(updates);
  TensorMap out = global;
  for (std::size_t k = 0; k < updates.size(); ++k) {
    for (auto& [name, x] : out) {
      const Tensor& u = updates[k].params.at(name);
      const Tensor& g = global.at(name);
      check_same(g, u, name);
      Tensor delta(g.shape);
      for (std::size_t i = 0; i < g.size(); ++i) delta[i] = u[i] - g[i];
      const Tensor q = quantize_uniform(delta, levels);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += w[k] * q[i];
    }
  }
  return out;
}

TensorMap aggregate_fedadam(const TensorMap& global, const std::vector<LocalUpdate>& updates,
                            const AggregatorConfig& cfg, AdamServerState& state) {
  const auto w = update_weights(updates);
  const TensorMap delta = mean_delta(global, updates, w);
  TensorMap out = global;
  for (auto& [name, x] : out) {
    const Tensor& d = delta.at(name);
    auto [mi, m_new] = state.m.try_emplace(name, Tensor(x.shape));
    auto [vi, v_new] = state.v.try_emplace(name, Tensor(x.shape));
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * d[i];
      v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * d[i] * d[i];
      x[i] += cfg.adam_lr * m[i] / (std::sqrt(v[i]) + cfg.adam_tau);
    }
  }
  ++state.steps;
  return out;
}

TensorMap scaffold_client_control(const TensorMap& c_i, const TensorMap& c, const TensorMap& global,
                                  const TensorMap& local, std::size_t steps, double lr) {
  if (steps == 0 || !(lr > 0.0)) return c_i;
  const double scale = 1.0 / (static_cast<double>(steps) * lr);
  TensorMap out;
  for (const auto& [name, x] : global) {
    const Tensor& y = local.at(name);
    const Tensor& ci = c_i.at(name);
    const Tensor& cs = c.at(name);
    Tensor n(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) n[i] = ci[i] - cs[i] + (x[i] - y[i]) * scale;
    out.emplace(name, std::move(n));
  }
  return out;
}

LocalHooks Aggregator::hooks(int, const TensorMap&) { return {}; }

namespace {

class FedAvgAggregator : public Aggregator {
 public:
  Scheme scheme() const override { return Scheme::kFedAvg; }
  TensorMap aggregate(const TensorMap&, const std::vector<LocalUpdate>& updates,
                      const TrainConfig&) override {
    return aggregate_fedavg(updates);
  }
};

class FedProxAggregator : public Aggregator {
 public:
  explicit FedProxAggregator(double mu) : mu_(mu) {}
  Scheme scheme() const override { return Scheme::kFedProx; }
  LocalHooks hooks(int, const TensorMap& global) override {
    LocalHooks h;
    h.prox_ref = &global;
    h.prox_mu = mu_;
    return h;
  }
  TensorMap aggregate(const TensorMap&, const std::vector<LocalUpdate>& updates,
                      const TrainConfig&) override {
    return aggregate_fedavg(updates);
  }

 private:
  double mu_;
};

class FedPaqAggregator : public Aggregator {
 public:
  explicit FedPaqAggregator(double levels) : levels_(levels) {}
  Scheme scheme() const override { return Scheme::kFedPaq; }
  TensorMap aggregate(const TensorMap& global, const std::vector<LocalUpdate>& updates,
                      const TrainConfig&) override {
    return aggregate_fedpaq(global, updates, levels_);
  }

 private:
  double levels_;
};

class FedAdamAggregator : public Aggregator {
 public:
  explicit FedAdamAggregator(const AggregatorConfig& cfg) : cfg_(cfg) {}
  Scheme scheme() const override { return Scheme::kFedAdam; }
  TensorMap aggregate(const TensorMap& global, const std::vector<LocalUpdate>& updates,
                      const TrainConfig&) override {
    return aggregate_fedadam(global, updates, cfg_, state_);
  }

 private:
  AggregatorConfig cfg_;
  AdamServerState state_;
};

TensorMap zeros_like(const TensorMap& m) {
  TensorMap z;
  for (const auto& [name, t] : m) z.emplace(name, Tensor(t.shape));
  return z;
}

}  // namespace

void ScaffoldAggregator::ensure(int clients, const TensorMap& global) {
  if (state_.server.empty()) state_.server = zeros_like(global);
  while (static_cast<int>(state_.client.size()) < clients)
    state_.client.push_back(zeros_like(global));
  correction_.resize(state_.client.size());
}

LocalHooks ScaffoldAggregator::hooks(int client, const TensorMap& global) {
  ensure(client + 1, global);
  TensorMap& corr = correction_[client];
  corr = state_.server;
  for (auto& [name, t] : corr) {
    const Tensor& ci = state_.client[client].at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= ci[i];
  }
  LocalHooks h;
  h.correction = &corr;
  return h;
}

TensorMap ScaffoldAggregator::aggregate(const TensorMap& global,
                                        const std::vector<LocalUpdate>& updates,
                                        const TrainConfig& train) {
  ensure(static_cast<int>(updates.size()), global);
  const auto w = update_weights(updates);
  const TensorMap delta = mean_delta(global, updates, w);
  TensorMap out = global;
  for (auto& [name, x] : out) {
    const Tensor& d = delta.at(name);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += cfg_.scaffold_server_lr * d[i];
  }
  // c += mean over clients of (c_i+ - c_i); with full participation c = mean(c_i).
  TensorMap dc = zeros_like(global);
  const double inv = 1.0 / static_cast<double>(updates.size());
  // heavy-ball moves lr/(1-beta) per unit gradient
  const double step = train.lr / (1.0 - train.momentum);
  for (std::size_t k = 0; k < updates.size(); ++k) {
    TensorMap next = scaffold_client_control(state_.client[k], state_.server, global,
                                             updates[k].params, updates[k].steps, step);
    for (auto& [name, t] : dc) {
      const Tensor& a = next.at(name);
      const Tensor& b = state_.client[k].at(name);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += inv * (a[i] - b[i]);
    }
    state_.client[k] = std::move(next);
  }
  for (auto& [name, c] : state_.server) {
    const Tensor& d = dc.at(name);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += d[i];
  }
  return out;
}

std::unique_ptr<Aggregator> make_aggregator(const AggregatorConfig& cfg) {
  cfg.validate();
  switch (cfg.scheme) {
    case Scheme::kFedAvg: return std::make_unique<FedAvgAggregator>();
    case Scheme::kFedProx: return std::make_unique<FedProxAggregator>(cfg.prox_mu);
    case Scheme::kFedPaq: return std::make_unique<FedPaqAggregator>(cfg.paq_levels);
    case Scheme::kFedAdam: return std::make_unique<FedAdamAggregator>(cfg);
    case Scheme::kScaffold: return std::make_unique<ScaffoldAggregator>(cfg);
  }
  throw std::invalid_argument("unknown aggregation scheme");
}

// ---------------------------------------------------------------------------
// Data and clients

DataBundle prepare_data(const DataConfig& cfg, int clients, std::uint64_t seed) {
  DataBundle b;
  if (cfg.source == "synthetic") {
    b.train = make_synthetic(cfg.synthetic, cfg.train_size, seed, 0);
    b.test = make_synthetic(cfg.synthetic, cfg.test_size, seed, 1);
    b.holdout = make_synthetic(cfg.synthetic, cfg.holdout_size, seed, 2);
  } else if (cfg.source == "idx") {
    Dataset all = load_idx(cfg.train_images, cfg.train_labels, cfg.train_size + cfg.holdout_size);
    if (all.size() < cfg.holdout_size + static_cast<std::size_t>(clients))
      throw std::invalid_argument("IDX training file holds only " + std::to_string(all.size()) +
                                  " samples");
    const std::size_t n_train = all.size() - cfg.holdout_size;
    std::vector<std::size_t> tr(n_train), ho(cfg.holdout_size);
    std::iota(tr.begin(), tr.end(), std::size_t{0});
    std::iota(ho.begin(), ho.end(), n_train);
    b.train = all.subset(tr);
    b.holdout = all.subset(ho);
    b.test = load_idx(cfg.test_images, cfg.test_labels, cfg.test_size);
    if (!(b.test.dims == b.train.dims))
      throw ShapeError("IDX test images differ in size from training images");
    b.test.num_classes = b.train.num_classes = b.holdout.num_classes =
        std::max(b.train.num_classes, b.test.num_classes);
  } else {
    throw std::invalid_argument("unknown data source '" + cfg.source + "' (synthetic, idx)");
  }
  if (clients == 1) {
    b.shards.assign(1, std::vector<std::size_t>(b.train.size()));
    std::iota(b.shards[0].begin(), b.shards[0].end(), std::size_t{0});
  } else {
    b.shards = dirichlet_partition(b.train.labels, clients, cfg.alpha, seed);
  }
  return b;
}

std::vector<ClientState> make_clients(const ExperimentConfig& cfg, const DataBundle& data) {
  const int n = cfg.agg.clients;
  const ImageDims dims = data.train.dims;
  const int dim = data.train.num_classes;
  std::vector<ClientState> clients(n);
  for (int i = 0; i < n; ++i) {
    ClientState& c = clients[i];
    c.id = i;
    c.seed = stream(cfg.seed, "client-seed", 0, static_cast<std::uint64_t>(i))();
    c.data = data.train.subset(data.shards.at(i));
    c.vector = generate_extraction_vector(stream(cfg.seed, "client-vector", 0, i)(), dim);
    const auto& w = cfg.watermark;
    if (w.source == "logo") {
      c.watermark = procedural_logo(cfg.seed, i, dims);
    } else if (w.source == "files") {
      if (w.files.empty()) throw std::invalid_argument("watermark source 'files' needs files");
      c.watermark = load_watermark(w.files[i % w.files.size()], dims);
      c.watermark.pixels = quantize8(c.watermark.pixels);
    } else if (w.source == "dotcode") {
      const auto bits = w.dotcode_hex.empty()
                            ? random_bits(w.dotcode_bits, stream(cfg.seed, "dotcode", 0, i)())
                            : bits_from_hex(w.dotcode_hex);
      c.watermark = dotcode_encode(bits, dims);
    } else {
      throw std::invalid_argument("unknown watermark source '" + w.source +
                                  "' (logo, files, dotcode)");
    }
    c.sigma = calibrate_sigma(c.vector.values, cfg.train.delta, c.seed);
    for (int j = 0; j < i; ++j)
      if (clients[j].vector.values == c.vector.values)
        throw std::logic_error("clients " + std::to_string(j) + " and " + std::to_string(i) +
                               " drew the same extraction vector");
  }
  return clients;
}

// ---------------------------------------------------------------------------
// Config

namespace {

template <typename T>
void get_to(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end())
      throw std::invalid_argument("unknown config key '" + where + "." + k + "'");
  }
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["seed"] = seed;
  j["hidden"] = hidden;
  j["conv1"] = conv1;
  j["conv2"] = conv2;
  j["eval_every"] = eval_every;
  j["checkpoint_every"] = checkpoint_every;
  j["data"] = {{"source", data.source},
               {"train_images", data.train_images},
               {"train_labels", data.train_labels},
               {"test_images", data.test_images},
               {"test_labels", data.test_labels},
               {"train_size", data.train_size},
               {"test_size", data.test_size},
               {"holdout_size", data.holdout_size},
               {"alpha", data.alpha},
               {"synthetic",
                {{"height", data.synthetic.dims.height},
                 {"width", data.synthetic.dims.width},
                 {"channels", data.synthetic.dims.channels},
                 {"num_classes", data.synthetic.num_classes},
                 {"blobs_per_class", data.synthetic.blobs_per_class},
                 {"jitter", data.synthetic.jitter},
                 {"noise", data.synthetic.noise},
                 {"distractor", data.synthetic.distractor}}}};
  j["train"] = {{"lambda", train.lambda},
                {"y_w", train.y_w},
                {"margin", train.margin},
                {"delta", train.delta},
                {"num_vectors", train.num_vectors},
                {"local_epochs", train.local_epochs},
                {"batch_size", train.batch_size},
                {"wm_batch", train.wm_batch},
                {"lr", train.lr},
                {"momentum", train.momentum},
                {"weight_decay", train.weight_decay},
                {"contrastive", train.contrastive_enabled},
                {"watermark", train.watermark_enabled},
                {"loss_input",
                 train.loss_input == LossInput::kRaw ? "raw" : "clamp_straight_through"}};
  j["aggregation"] = {{"scheme", to_string(agg.scheme)},
                      {"rounds", agg.rounds},
                      {"clients", agg.clients},
                      {"prox_mu", agg.prox_mu},
                      {"paq_levels", agg.paq_levels},
                      {"adam_lr", agg.adam_lr},
                      {"adam_beta1", agg.adam_beta1},
                      {"adam_beta2", agg.adam_beta2},
                      {"adam_tau", agg.adam_tau},
                      {"scaffold_server_lr", agg.scaffold_server_lr}};
  j["watermark"] = {{"source", watermark.source},
                    {"files", watermark.files},
                    {"dotcode_bits", watermark.dotcode_bits},
                    {"dotcode_hex", watermark.dotcode_hex}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  reject_unknown(j, {"name", "seed", "hidden", "conv1", "conv2", "eval_every", "checkpoint_every", "data", "train",
                     "aggregation", "watermark"},
                 "config");
  get_to(j, "name", c.name);
  get_to(j, "seed", c.seed);
  get_to(j, "hidden", c.hidden);
  get_to(j, "conv1", c.conv1);
  get_to(j, "conv2", c.conv2);
  get_to(j, "eval_every", c.eval_every);
  get_to(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, {"source", "train_images", "train_labels", "test_images", "test_labels",
                       "train_size", "test_size", "holdout_size", "alpha", "synthetic"},
                   "data");
    get_to(d, "source", c.data.source);
    get_to(d, "train_images", c.data.train_images);
    get_to(d, "train_labels", c.data.train_labels);
    get_to(d, "test_images", c.data.test_images);
    get_to(d, "test_labels", c.data.test_labels);
    get_to(d, "train_size", c.data.train_size);
    get_to(d, "test_size", c.data.test_size);
    get_to(d, "holdout_size", c.data.holdout_size);
    get_to(d, "alpha", c.data.alpha);
    if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      reject_unknown(s, {"height", "width", "channels", "num_classes", "blobs_per_class", "jitter",
                         "noise", "distractor"},
                     "data.synthetic");
      get_to(s, "height", c.data.synthetic.dims.height);
      get_to(s, "width", c.data.synthetic.dims.width);
      get_to(s, "channels", c.data.synthetic.dims.channels);
      get_to(s, "num_classes", c.data.synthetic.num_classes);
      get_to(s, "blobs_per_class", c.data.synthetic.blobs_per_class);
      get_to(s, "jitter", c.data.synthetic.jitter);
      get_to(s, "noise", c.data.synthetic.noise);
      get_to(s, "distractor", c.data.synthetic.distractor);
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t, {"lambda", "y_w", "margin", "delta", "num_vectors", "local_epochs",
                       "batch_size", "wm_batch", "lr", "momentum", "weight_decay", "contrastive",
                       "watermark", "loss_input"},
                   "train");
    get_to(t, "lambda", c.train.lambda);
    get_to(t, "y_w", c.train.y_w);
    get_to(t, "margin", c.train.margin);
    get_to(t, "delta", c.train.delta);
    get_to(t, "num_vectors", c.train.num_vectors);
    get_to(t, "local_epochs", c.train.local_epochs);
    get_to(t, "batch_size", c.train.batch_size);
    get_to(t, "wm_batch", c.train.wm_batch);
    get_to(t, "lr", c.train.lr);
    get_to(t, "momentum", c.train.momentum);
    get_to(t, "weight_decay", c.train.weight_decay);
    get_to(t, "contrastive", c.train.contrastive_enabled);
    get_to(t, "watermark", c.train.watermark_enabled);
    if (t.contains("loss_input")) {
      const std::string li = t.at("loss_input").get<std::string>();
      if (li == "raw") {
        c.train.loss_input = LossInput::kRaw;
      } else if (li == "clamp_straight_through") {
        c.train.loss_input = LossInput::kClampStraightThrough;
      } else {
        throw std::invalid_argument("unknown train.loss_input '" + li + "'");
      }
    }
  }
  if (j.contains("aggregation")) {
    const auto& a = j.at("aggregation");
    reject_unknown(a, {"scheme", "rounds", "clients", "prox_mu", "paq_levels", "adam_lr",
                       "adam_beta1", "adam_beta2", "adam_tau", "scaffold_server_lr"},
                   "aggregation");
    if (a.contains("scheme")) c.agg.scheme = scheme_from_string(a.at("scheme").get<std::string>());
    get_to(a, "rounds", c.agg.rounds);
    get_to(a, "clients", c.agg.clients);
    get_to(a, "prox_mu", c.agg.prox_mu);
    get_to(a, "paq_levels", c.agg.paq_levels);
    get_to(a, "adam_lr", c.agg.adam_lr);
    get_to(a, "adam_beta1", c.agg.adam_beta1);
    get_to(a, "adam_beta2", c.agg.adam_beta2);
    get_to(a, "adam_tau", c.agg.adam_tau);
    get_to(a, "scaffold_server_lr", c.agg.scaffold_server_lr);
  }
  if (j.contains("watermark")) {
    const auto& w = j.at("watermark");
    reject_unknown(w, {"source", "files", "dotcode_bits", "dotcode_hex"}, "watermark");
    get_to(w, "source", c.watermark.source);
    get_to(w, "files", c.watermark.files);
    get_to(w, "dotcode_bits", c.watermark.dotcode_bits);
    get_to(w, "dotcode_hex", c.watermark.dotcode_hex);
  }
  c.train.seed = c.seed;
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  train.validate();
  agg.validate();
  if (hidden < 1 || conv1 < 1 || conv2 < 1)
    throw std::invalid_argument("config: layer widths must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("config: checkpoint_every must be >= 0");
  if (!(data.alpha > 0.0)) throw std::invalid_argument("config: data.alpha must be positive");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Federation

namespace {

std::string fmt(const char* pattern, int v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string csv_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

RunResult run_federation(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };
  DataBundle data = prepare_data(cfg.data, cfg.agg.clients, cfg.seed);
  RunResult res;
  res.clients = make_clients(cfg, data);
  res.test = std::move(data.test);
  res.holdout = std::move(data.holdout);

  const ArchConfig arch = tiny_vgg(data.train.dims, data.train.num_classes, cfg.hidden, cfg.conv1, cfg.conv2);
  Workspace ws(ModelGraph::build(arch, stream(cfg.seed, "init")()));
  TensorMap global = ws.model().params().snapshot();
  BnMomentMap global_bn = ws.model().bn_state().export_moments(BnMode::kMain);
  auto aggregator = make_aggregator(cfg.agg);
  TrainConfig train = cfg.train;
  train.seed = cfg.seed;
  const bool wm = train.watermark_enabled && train.lambda > 0.0;

  std::ofstream csv;
  std::filesystem::path dir;
  if (opts.run_dir) {
    dir = *opts.run_dir;
    std::filesystem::create_directories(dir / "checkpoints");
    std::filesystem::create_directories(dir / "keys");
    std::filesystem::create_directories(dir / "images");
    std::ofstream(dir / "config.json") << cfg.to_json().dump(2) << "\n";
    csv.open(dir / "metrics.csv");
    csv << "round,client,train_acc,test_acc,ssim,main_loss,wm_loss,pos_ssim,neg_ssim\n";
  }

  auto global_checkpoint = [&](int round) {
    ws.model().params().load(global);
    ws.model().bn_state().import_moments(BnMode::kMain, global_bn);
    ws.model().bn_state().reset_moments(BnMode::kWatermark);
    Checkpoint c = ws.model().to_checkpoint();
    c.meta = {{"round", round}, {"scheme", to_string(cfg.agg.scheme)}, {"seed", cfg.seed},
              {"name", cfg.name}};
    return c;
  };

  for (int round = 1; round <= cfg.agg.rounds; ++round) {
    std::vector<LocalUpdate> updates;
    updates.reserve(res.clients.size());
    for (ClientState& client : res.clients) {
      const LocalHooks hooks = aggregator->hooks(client.id, global);
      try {
        updates.push_back(local_round(client, ws, global, global_bn, train, round, hooks));
      } catch (const TrainingError&) {
        throw;
      } catch (const std::exception& e) {
        throw TrainingError("round " + std::to_string(round) + ", client " +
                            std::to_string(client.id) + ": " + e.what());
      }
      res.history.push_back(updates.back().metrics);
    }
    global = aggregator->aggregate(global, updates, train);
    std::vector<const BnMomentMap*> bns;
    std::vector<std::size_t> counts;
    for (const auto& u : updates) {
      bns.push_back(&u.main_bn);
      counts.push_back(u.samples);
    }
    global_bn = weighted_mean_bn(bns, client_weights(counts));

    RoundSummary summary;
    summary.round = round;
    const bool eval = round % cfg.eval_every == 0 || round == cfg.agg.rounds;
    if (eval) {
      ws.model().params().load(global);
      ws.model().bn_state().import_moments(BnMode::kMain, global_bn);
      summary.test_acc = evaluate_accuracy(ws.model(), res.test);
      if (wm) {
        for (ClientState& client : res.clients) {
          refresh_wm_bn(client, ws, global, global_bn, train, round);
          const auto img = reconstruct_image(ws, client.vector.values, client.wm_bn);
          summary.ssim.push_back(
              ssim(img, client.watermark.pixels, client.watermark.dims, train.ssim));
          if (opts.run_dir)
            write_png(dir / "images" /
                          (fmt("round_%03d", round) + fmt("_client_%d.png", client.id)),
                      to_raster(img, client.watermark.dims));
        }
      }
      std::string line = "round " + std::to_string(round) + " acc " + csv_num(summary.test_acc);
      if (!summary.ssim.empty()) {
        line += " ssim";
        for (double s : summary.ssim) line += " " + csv_num(s);
      }
      log(line);
    }
    if (csv.is_open()) {
      for (const auto& u : updates) {
        const auto& m = u.metrics;
        csv << m.round << "," << m.client << "," << csv_num(m.train_acc) << ","
            << (eval ? csv_num(summary.test_acc) : "") << ","
            << (summary.ssim.empty() ? csv_num(m.ssim) : csv_num(summary.ssim[m.client])) << ","
            << csv_num(m.main_loss) << "," << csv_num(m.wm_loss) << "," << csv_num(m.pos_ssim)
            << "," << csv_num(m.neg_ssim) << "\n";
      }
      csv.flush();
    }
    if (opts.run_dir && cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0 &&
        round != cfg.agg.rounds)
      save_checkpoint(global_checkpoint(round), dir / "checkpoints" / fmt("round_%d", round));
    res.rounds.push_back(std::move(summary));
  }

  const int last = cfg.agg.rounds;
  res.global = global_checkpoint(last);
  ws.model().params().load(global);
  ws.model().bn_state().import_moments(BnMode::kMain, global_bn);
  res.final_accuracy = evaluate_accuracy(ws.model(), res.test);
  if (opts.run_dir) save_checkpoint(res.global, dir / "checkpoints" / fmt("round_%d", last));

  if (wm) {
    for (ClientState& client : res.clients) {
      // Keys carry watermark BN moments measured on the final global model.
      if (last > 0) refresh_wm_bn(client, ws, global, global_bn, train, last);
      std::string img_path;
      if (opts.run_dir) {
        img_path = (dir / "images" / fmt("client_%d_reference.png", client.id)).string();
        write_png(img_path, to_raster(client.watermark.pixels, client.watermark.dims));
      }
      WatermarkKey key = make_key(client, arch, last, img_path);
      if (opts.run_dir) save_key(key, dir / "keys" / fmt("client_%d.key", client.id));
      const auto rep = verify(res.global, key);
      res.final_ssim.push_back(rep.ssim);
      res.keys.push_back(std::move(key));
    }
  }
  return res;
}

}  // namespace fedmark
