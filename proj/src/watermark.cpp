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

#include "fedmark/watermark.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fedmark/metrics.hpp"

namespace fedmark {

ExtractionVector generate_extraction_vector(std::uint64_t seed, int dim) {
  if (dim < 2)
    throw std::invalid_argument("extraction vector dimension must be >= 2, got " +
                                std::to_string(dim));
  Rng rng = stream(seed, "extraction-vector");
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  ExtractionVector v;
  v.seed = seed;
  v.values.resize(dim);
  for (Real& x : v.values) x = u(rng);
  return v;
}

std::size_t AugmentedVectorSet::positives() const {
  return static_cast<std::size_t>(std::count(positive.begin(), positive.end(), 1));
}

bool is_positive(std::span<const Real> candidate, std::span<const Real> source, double delta) {
  return cosine(candidate, source) >= delta;
}

AugmentedVectorSet augment_vectors(std::span<const Real> v, int num, double sigma, double delta,
                                   Rng& rng, int max_draws) {
  if (num < 2) throw std::invalid_argument("augment_vectors: num must be >= 2");
  if (!(sigma > 0.0)) throw std::invalid_argument("augment_vectors: sigma must be positive");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("augment_vectors: delta must lie in (0, 1)");
  if (max_draws <= 0) max_draws = 200 * num + 1000;
  const std::size_t want_pos = static_cast<std::size_t>((num + 1) / 2);
  const std::size_t want_neg = static_cast<std::size_t>(num / 2);

  AugmentedVectorSet set;
  set.source.assign(v.begin(), v.end());
  set.sigma = sigma;
  set.delta = delta;
  std::normal_distribution<Real> noise(0.0, sigma);
  std::size_t pos = 0, neg = 0;
  std::vector<Real> cand(v.size());
  for (int draw = 0; draw < max_draws && (pos < want_pos || neg < want_neg); ++draw) {
    for (std::size_t i = 0; i < v.size(); ++i) cand[i] = v[i] + noise(rng);
    const bool p = is_positive(cand, v, delta);
    if (p && pos < want_pos) {
      ++pos;
    } else if (!p && neg < want_neg) {
      ++neg;
    } else {
      continue;
    }
    set.vectors.push_back(cand);
    set.positive.push_back(p ? 1 : 0);
  }
  if (pos < want_pos || neg < want_neg)
    throw std::runtime_error("augment_vectors: only " + std::to_string(pos) + " positives and " +
                             std::to_string(neg) + " negatives after " +
                             std::to_string(max_draws) + " draws at sigma " +
                             std::to_string(sigma) + "; adjust sigma");
  return set;
}

namespace {

std::vector<std::vector<Real>> noise_sample(std::size_t dim, std::uint64_t seed, int draws) {
  Rng rng = stream(seed, "sigma-calibration");
  std::normal_distribution<Real> n01(0.0, 1.0);
  std::vector<std::vector<Real>> z(draws, std::vector<Real>(dim));
  for (auto& row : z)
    for (Real& x : row) x = n01(rng);
  return z;
}

double fraction_on_sample(std::span<const Real> v, double sigma, double delta,
                          const std::vector<std::vector<Real>>& z) {
  std::vector<Real> cand(v.size());
  std::size_t hits = 0;
  for (const auto& row : z) {
    for (std::size_t i = 0; i < v.size(); ++i) cand[i] = v[i] + sigma * row[i];
    hits += is_positive(cand, v, delta);
  }
  return static_cast<double>(hits) / static_cast<double>(z.size());
}

}  // namespace

double positive_fraction(std::span<const Real> v, double sigma, double delta, std::uint64_t seed,
                         int draws) {
  return fraction_on_sample(v, sigma, delta, noise_sample(v.size(), seed, draws));
}

double calibrate_sigma(std::span<const Real> v, double delta, std::uint64_t seed, int draws) {
  const auto z = noise_sample(v.size(), seed, draws);
  double norm = 0.0;
  for (Real x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw std::invalid_argument("calibrate_sigma: zero vector");
  // For a fixed noise draw the angle to v grows with sigma, so the fraction
  // is non-increasing and bisection applies.
  double lo = 0.0, hi = norm;
  while (fraction_on_sample(v, hi, delta, z) > 0.5) {
    hi *= 2.0;
    if (hi > 1e6 * norm) throw std::runtime_error("calibrate_sigma: no upper bracket");
  }
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = fraction_on_sample(v, mid, delta, z);
    if (f >= 0.4 && f <= 0.6) return mid;
    (f > 0.5 ? lo : hi) = mid;
  }
  const double f = fraction_on_sample(v, hi, delta, z);
  if (f < 0.3 || f > 0.7)
    throw std::runtime_error("calibrate_sigma: positive fraction " + std::to_string(f) +
                             " outside [0.3, 0.7]");
  return hi;
}

DotCodeLayout dotcode_layout(std::size_t nbits, const ImageDims& dims) {
  const std::size_t cap = static_cast<std::size_t>(dims.numel());
  if (nbits > cap)
    throw CapacityError("dot-code payload of " + std::to_string(nbits) +
                        " bits exceeds capacity H*W*C = " + std::to_string(dims.height) + "*" +
                        std::to_string(dims.width) + "*" + std::to_string(dims.channels) + " = " +
                        std::to_string(cap));
  DotCodeLayout l;
  l.patches = static_cast<int>((nbits + dims.channels - 1) / dims.channels);
  const int need = std::max(l.patches, 1);
  for (int s = std::min(dims.height, dims.width); s >= 1; --s) {
    if ((dims.height / s) * (dims.width / s) >= need) {
      l.patch = s;
      break;
    }
  }
  l.grid_h = dims.height / l.patch;
  l.grid_w = dims.width / l.patch;
  return l;
}

WatermarkImage dotcode_encode(std::span<const std::uint8_t> bits, const ImageDims& dims) {
  const DotCodeLayout l = dotcode_layout(bits.size(), dims);
  WatermarkImage img;
  img.dims = dims;
  img.pixels.assign(dims.numel(), 0.0);
  img.provenance = "dotcode:" + bits_to_hex(bits);
  const std::size_t plane = static_cast<std::size_t>(dims.height) * dims.width;
  for (std::size_t b = 0; b < bits.size(); ++b) {
    if (!bits[b]) continue;
    const int p = static_cast<int>(b / dims.channels), c = static_cast<int>(b % dims.channels);
    const int py = (p / l.grid_w) * l.patch, px = (p % l.grid_w) * l.patch;
    for (int y = py; y < py + l.patch; ++y)
      for (int x = px; x < px + l.patch; ++x) img.pixels[c * plane + y * dims.width + x] = 1.0;
  }
  return img;
}

std::vector<std::uint8_t> dotcode_decode(std::span<const Real> chw, const ImageDims& dims,
                                         std::size_t nbits) {
  if (chw.size() != static_cast<std::size_t>(dims.numel()))
    throw std::invalid_argument("dotcode_decode: image size does not match " +
                                shape_str(dims.chw()));
  const DotCodeLayout l = dotcode_layout(nbits, dims);
  const std::size_t plane = static_cast<std::size_t>(dims.height) * dims.width;
  std::vector<std::uint8_t> bits(nbits, 0);
  for (std::size_t b = 0; b < nbits; ++b) {
    const int p = static_cast<int>(b / dims.channels), c = static_cast<int>(b % dims.channels);
    const int py = (p / l.grid_w) * l.patch, px = (p % l.grid_w) * l.patch;
    double sum = 0.0;
    for (int y = py; y < py + l.patch; ++y)
      for (int x = px; x < px + l.patch; ++x) sum += chw[c * plane + y * dims.width + x];
    bits[b] = sum / (l.patch * l.patch) > 0.5 ? 1 : 0;
  }
  return bits;
}

std::vector<std::uint8_t> random_bits(std::size_t n, std::uint64_t seed) {
  Rng rng = stream(seed, "random-bits");
  std::vector<std::uint8_t> bits(n);
  for (auto& b : bits) b = static_cast<std::uint8_t>(rng() & 1u);
  return bits;
}

std::vector<std::uint8_t> bits_from_hex(const std::string& hex) {
  std::vector<std::uint8_t> bits;
  bits.reserve(hex.size() * 4);
  for (char ch : hex) {
    int v;
    if (ch >= '0' && ch <= '9') v = ch - '0';
    else if (ch >= 'a' && ch <= 'f') v = ch - 'a' + 10;
    else if (ch >= 'A' && ch <= 'F') v = ch - 'A' + 10;
    else throw std::invalid_argument(std::string("invalid hex digit '") + ch + "'");
    for (int k = 3; k >= 0; --k) bits.push_back(static_cast<std::uint8_t>((v >> k) & 1));
  }
  return bits;
}

std::string bits_to_hex(std::span<const std::uint8_t> bits) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bits.size(); i += 4) {
    int v = 0;
    for (std::size_t k = 0; k < 4; ++k)
      v = (v << 1) | (i + k < bits.size() && bits[i + k] ? 1 : 0);
    out.push_back(digits[v]);
  }
  return out;
}

WatermarkImage watermark_from_raster(const Raster& raster, const ImageDims& target) {
  if (raster.width <= 0 || raster.height <= 0)
    throw std::invalid_argument("watermark image has zero area");
  const int sh = raster.height, sw = raster.width;
  const std::size_t splane = static_cast<std::size_t>(sh) * sw;
  // Channel adaptation at source resolution; both steps are linear.
  std::vector<Real> src(splane * target.channels);
  for (std::size_t i = 0; i < splane; ++i) {
    const std::uint8_t* px = raster.pixels.data() + i * raster.channels;
    if (target.channels == 1) {
      src[i] = raster.channels >= 3 ? (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0
                                    : px[0] / 255.0;
    } else {
      for (int c = 0; c < target.channels; ++c) {
        const int sc = raster.channels >= 3 ? std::min(c, raster.channels - 1) : 0;
        src[c * splane + i] = px[sc] / 255.0;
      }
    }
  }
  WatermarkImage img;
  img.dims = target;
  img.pixels.resize(target.numel());
  const double ry = static_cast<double>(sh) / target.height;
  const double rx = static_cast<double>(sw) / target.width;
  const std::size_t tplane = static_cast<std::size_t>(target.height) * target.width;
  for (int y = 0; y < target.height; ++y) {
    const double fy = std::clamp((y + 0.5) * ry - 0.5, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target.width; ++x) {
      const double fx = std::clamp((x + 0.5) * rx - 0.5, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      for (int c = 0; c < target.channels; ++c) {
        const Real* s = src.data() + c * splane;
        const double top = (1 - wx) * s[y0 * sw + x0] + wx * s[y0 * sw + x1];
        const double bot = (1 - wx) * s[y1 * sw + x0] + wx * s[y1 * sw + x1];
        img.pixels[c * tplane + y * target.width + x] = (1 - wy) * top + wy * bot;
      }
    }
  }
  return img;
}

WatermarkImage load_watermark(const std::filesystem::path& path, const ImageDims& target) {
  WatermarkImage img = watermark_from_raster(read_image(path), target);
  img.provenance = path.string();
  return img;
}

WatermarkImage procedural_logo(std::uint64_t seed, int index, const ImageDims& dims) {
  Rng rng = stream(seed, "logo", 0, static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int h = dims.height, w = dims.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  WatermarkImage img;
  img.dims = dims;
  img.pixels.assign(dims.numel(), 0.0);
  img.provenance = "logo:" + std::to_string(seed) + ":" + std::to_string(index);
  const double scale = 28.0 / std::min(h, w);
  for (int c = 0; c < dims.channels; ++c) {
    std::vector<double> tex(plane, 0.0);
    for (int t = 0; t < 3; ++t) {
      const double kx = (u(rng) * 1.4 - 0.7) * scale, ky = (u(rng) * 1.4 - 0.7) * scale;
      const double ph = u(rng) * 2.0 * std::numbers::pi;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) tex[y * w + x] += std::sin(kx * x + ky * y + ph);
    }
    const auto [lo, hi] = std::minmax_element(tex.begin(), tex.end());
    const double span = std::max(*hi - *lo, 1e-12);
    for (std::size_t i = 0; i < plane; ++i) img.pixels[c * plane + i] = 0.35 * (tex[i] - *lo) / span;
  }
  const double margin = 4.0 / scale;
  for (int s = 0; s < 4; ++s) {
    const int kind = static_cast<int>(rng() % 3);
    const double cy = margin + u(rng) * (h - 2 * margin);
    const double cx = margin + u(rng) * (w - 2 * margin);
    const double r = (3.0 + 4.0 * u(rng)) / scale;
    std::vector<double> level(dims.channels);
    for (double& l : level) l = 0.7 + 0.3 * u(rng);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = y - cy, dx = x - cx;
        bool inside;
        if (kind == 0) {
          inside = dy * dy + dx * dx <= r * r;
        } else if (kind == 1) {
          inside = std::abs(dy) <= 0.8 * r && std::abs(dx) <= 0.5 * r;
        } else {
          const double d = std::sqrt(dy * dy + dx * dx);
          inside = d <= r && d >= r - 2.0 / scale;
        }
        if (!inside) continue;
        for (int c = 0; c < dims.channels; ++c) img.pixels[c * plane + y * w + x] = level[c];
      }
    }
  }
  img.pixels = quantize8(img.pixels);
  return img;
}

std::vector<Real> quantize8(std::span<const Real> values) {
  std::vector<Real> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = std::round(std::clamp(values[i], 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

Raster to_raster(std::span<const Real> chw, const ImageDims& dims) {
  if (chw.size() != static_cast<std::size_t>(dims.numel()))
    throw std::invalid_argument("to_raster: size does not match " + shape_str(dims.chw()));
  Raster r;
  r.height = dims.height;
  r.width = dims.width;
  r.channels = dims.channels;
  r.pixels.resize(chw.size());
  const std::size_t plane = static_cast<std::size_t>(dims.height) * dims.width;
  for (int c = 0; c < dims.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      r.pixels[i * dims.channels + c] = static_cast<std::uint8_t>(
          std::lround(std::clamp(chw[c * plane + i], 0.0, 1.0) * 255.0));
  return r;
}

std::vector<Real> from_raster_exact(const Raster& raster) {
  const std::size_t plane = static_cast<std::size_t>(raster.height) * raster.width;
  std::vector<Real> chw(plane * raster.channels);
  for (int c = 0; c < raster.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      chw[c * plane + i] = raster.pixels[i * raster.channels + c] / 255.0;
  return chw;
}

}  // namespace fedmark
