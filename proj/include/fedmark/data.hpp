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

#ifndef FEDMARK_DATA_HPP_
#define FEDMARK_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedmark/model.hpp"

namespace fedmark {

// Images stored (N, C, H, W) with values in [0, 1].
struct Dataset {
  ImageDims dims;
  int num_classes = 10;
  std::vector<Real> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const Real> image(std::size_t i) const;
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct SyntheticSpec {
  ImageDims dims{28, 28, 1};
  int num_classes = 10;
  int blobs_per_class = 3;
  double jitter = 2.0;      // pixels of per-sample blob displacement
  double noise = 0.15;      // additive pixel noise std
  double distractor = 0.5;  // amplitude of a random off-class blob
};

// Class-conditional blob images: each class owns a fixed constellation of
// Gaussian blobs; samples jitter blob positions and amplitudes and add noise.
Dataset make_synthetic(const SyntheticSpec& spec, std::size_t count, std::uint64_t seed,
                       std::uint64_t split = 0);

// MNIST-style IDX files (big-endian magic 0x00000803 / 0x00000801).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t limit = 0);

// Per class, a Dirichlet(alpha) draw splits the class across n clients.
// Classes are redrawn while a client stays empty (bounded); remaining empty
// clients then take samples round-robin from the largest shards.
std::vector<std::vector<std::size_t>> dirichlet_partition(std::span<const int> labels, int n,
                                                          double alpha, std::uint64_t seed);

// Mean over clients of the Shannon entropy (nats) of the shard's class mix.
double mean_class_entropy(std::span<const int> labels,
                          const std::vector<std::vector<std::size_t>>& shards, int num_classes);

}  // namespace fedmark

#endif  // FEDMARK_DATA_HPP_
