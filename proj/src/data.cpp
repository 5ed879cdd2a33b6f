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

#include "fedmark/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "fedmark/checkpoint.hpp"

namespace fedmark {

std::span<const Real> Dataset::image(std::size_t i) const {
  const std::size_t n = static_cast<std::size_t>(dims.numel());
  return std::span<const Real>(images).subspan(i * n, n);
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  Tensor t({static_cast<int>(indices.size()), dims.channels, dims.height, dims.width});
  const std::size_t n = static_cast<std::size_t>(dims.numel());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto src = image(indices[k]);
    std::copy(src.begin(), src.end(), t.data.begin() + k * n);
  }
  return t;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) out[k] = labels.at(indices[k]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.dims = dims;
  d.num_classes = num_classes;
  d.images.reserve(indices.size() * dims.numel());
  for (std::size_t i : indices) {
    auto src = image(i);
    d.images.insert(d.images.end(), src.begin(), src.end());
    d.labels.push_back(labels.at(i));
  }
  return d;
}

Dataset make_synthetic(const SyntheticSpec& spec, std::size_t count, std::uint64_t seed,
                       std::uint64_t split) {
  if (spec.num_classes < 2) throw std::invalid_argument("synthetic data needs >= 2 classes");
  const ImageDims& dims = spec.dims;
  const int h = dims.height, w = dims.width;
  struct Blob {
    double y, x, radius;
    std::vector<double> colour;
  };
  // Class constellations depend on the seed only, so every split shares them.
  Rng proto = stream(seed, "synthetic-prototypes");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<Blob>> classes(spec.num_classes);
  for (auto& blobs : classes) {
    for (int b = 0; b < spec.blobs_per_class; ++b) {
      Blob blob;
      blob.y = 0.15 * h + u(proto) * 0.7 * h;
      blob.x = 0.15 * w + u(proto) * 0.7 * w;
      blob.radius = (0.06 + 0.06 * u(proto)) * std::min(h, w);
      blob.colour.resize(dims.channels);
      for (double& c : blob.colour) c = 0.5 + 0.5 * u(proto);
      blobs.push_back(blob);
    }
  }

  Dataset d;
  d.dims = dims;
  d.num_classes = spec.num_classes;
  d.images.assign(count * dims.numel(), 0.0);
  d.labels.resize(count);
  Rng rng = stream(seed, "synthetic-samples", split);
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto paint = [&](Real* img, double cy, double cx, double r, const std::vector<double>& col,
                   double amp) {
    const double inv = 1.0 / (2.0 * r * r);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double g = amp * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) * inv);
        for (int c = 0; c < dims.channels; ++c) img[c * plane + y * w + x] += g * col[c];
      }
  };
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.num_classes));
    d.labels[i] = label;
    Real* img = d.images.data() + i * dims.numel();
    for (const Blob& b : classes[label]) {
      paint(img, b.y + spec.jitter * n01(rng), b.x + spec.jitter * n01(rng),
            b.radius * (0.8 + 0.4 * u(rng)), b.colour, 0.6 + 0.4 * u(rng));
    }
    if (spec.distractor > 0.0) {
      const auto& other = classes[rng() % static_cast<std::uint64_t>(spec.num_classes)];
      const Blob& b = other[rng() % other.size()];
      paint(img, b.y + spec.jitter * n01(rng), b.x + spec.jitter * n01(rng), b.radius, b.colour,
            spec.distractor * u(rng));
    }
    for (std::size_t k = 0; k < static_cast<std::size_t>(dims.numel()); ++k)
      img[k] = std::clamp(img[k] + spec.noise * n01(rng), 0.0, 1.0);
  }
  return d;
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("corrupt file: truncated IDX header in '" + path.string() + "'");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t limit) {
  std::ifstream fi(images, std::ios::binary), fl(labels, std::ios::binary);
  if (!fi) throw std::runtime_error("cannot open IDX images '" + images.string() + "'");
  if (!fl) throw std::runtime_error("cannot open IDX labels '" + labels.string() + "'");
  if (read_be32(fi, images) != 0x00000803u)
    throw FormatError("'" + images.string() + "' is not an IDX image file (magic 0x00000803)");
  if (read_be32(fl, labels) != 0x00000801u)
    throw FormatError("'" + labels.string() + "' is not an IDX label file (magic 0x00000801)");
  std::size_t n = read_be32(fi, images);
  const int h = static_cast<int>(read_be32(fi, images));
  const int w = static_cast<int>(read_be32(fi, images));
  const std::size_t nl = read_be32(fl, labels);
  if (n != nl)
    throw FormatError("IDX image count " + std::to_string(n) + " differs from label count " +
                      std::to_string(nl));
  if (limit > 0) n = std::min(n, limit);
  Dataset d;
  d.dims = {h, w, 1};
  d.images.resize(n * h * w);
  d.labels.resize(n);
  std::vector<unsigned char> buf(n * h * w);
  if (!fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw FormatError("corrupt file: truncated IDX images '" + images.string() + "'");
  for (std::size_t i = 0; i < buf.size(); ++i) d.images[i] = buf[i] / 255.0;
  std::vector<unsigned char> lb(n);
  if (!fl.read(reinterpret_cast<char*>(lb.data()), static_cast<std::streamsize>(n)))
    throw FormatError("corrupt file: truncated IDX labels '" + labels.string() + "'");
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lb[i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = std::max(10, max_label + 1);
  return d;
}

std::vector<std::vector<std::size_t>> dirichlet_partition(std::span<const int> labels, int n,
                                                          double alpha, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("dirichlet_partition: need at least 2 clients");
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be positive");
  if (labels.size() < static_cast<std::size_t>(n))
    throw std::invalid_argument("dirichlet_partition: " + std::to_string(labels.size()) +
                                " samples cannot cover " + std::to_string(n) + " clients");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  Rng rng = stream(seed, "dirichlet");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  auto split_class = [&](std::vector<std::size_t> idx) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> p(n);
    double sum = 0.0;
    for (double& x : p) sum += (x = gamma(rng));
    if (!(sum > 0.0)) {  // every draw underflowed; fall back to one random owner
      std::fill(p.begin(), p.end(), 0.0);
      p[rng() % static_cast<std::uint64_t>(n)] = sum = 1.0;
    }
    std::vector<std::vector<std::size_t>> parts(n);
    double acc = 0.0;
    std::size_t start = 0;
    for (int k = 0; k < n; ++k) {
      acc += p[k] / sum;
      const std::size_t end =
          k == n - 1 ? idx.size()
                     : std::min(idx.size(), static_cast<std::size_t>(std::floor(acc * idx.size())));
      parts[k].assign(idx.begin() + start, idx.begin() + std::max(start, end));
      start = std::max(start, end);
    }
    return parts;
  };

  std::map<int, std::vector<std::vector<std::size_t>>> alloc;
  for (auto& [cls, idx] : by_class) alloc[cls] = split_class(idx);
  auto sizes = [&]() {
    std::vector<std::size_t> s(n, 0);
    for (auto& [cls, parts] : alloc)
      for (int k = 0; k < n; ++k) s[k] += parts[k].size();
    return s;
  };
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto s = sizes();
    if (std::find(s.begin(), s.end(), 0u) == s.end()) break;
    // Redraw one class chosen at random.
    auto it = alloc.begin();
    std::advance(it, static_cast<long>(rng() % alloc.size()));
    it->second = split_class(by_class[it->first]);
  }

  std::vector<std::vector<std::size_t>> shards(n);
  for (auto& [cls, parts] : alloc)
    for (int k = 0; k < n; ++k) shards[k].insert(shards[k].end(), parts[k].begin(), parts[k].end());
  for (int k = 0; k < n; ++k) {
    if (!shards[k].empty()) continue;
    auto donor = std::max_element(shards.begin(), shards.end(),
                                  [](const auto& a, const auto& b) { return a.size() < b.size(); });
    shards[k].push_back(donor->back());
    donor->pop_back();
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

double mean_class_entropy(std::span<const int> labels,
                          const std::vector<std::vector<std::size_t>>& shards, int num_classes) {
  double total = 0.0;
  for (const auto& shard : shards) {
    std::vector<double> counts(num_classes, 0.0);
    for (std::size_t i : shard) counts.at(labels[i]) += 1.0;
    double h = 0.0;
    for (double c : counts) {
      if (c == 0.0) continue;
      const double p = c / static_cast<double>(shard.size());
      h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(shards.size());
}

}  // namespace fedmark
