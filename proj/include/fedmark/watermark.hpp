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

#ifndef FEDMARK_WATERMARK_HPP_
#define FEDMARK_WATERMARK_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmark/image_io.hpp"
#include "fedmark/model.hpp"

namespace fedmark {

class CapacityError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ExtractionVector {
  std::vector<Real> values;  // each entry in [-1, 1]
  std::uint64_t seed = 0;
};

// Entries i.i.d. uniform on [-1, 1]. Throws std::invalid_argument if dim < 2.
ExtractionVector generate_extraction_vector(std::uint64_t seed, int dim);

struct AugmentedVectorSet {
  std::vector<std::vector<Real>> vectors;
  std::vector<std::uint8_t> positive;  // 1 iff cosine(vector, source) >= delta
  std::vector<Real> source;
  double sigma = 0.0;
  double delta = 0.0;

  std::size_t size() const { return vectors.size(); }
  std::size_t positives() const;
  std::size_t negatives() const { return size() - positives(); }
};

bool is_positive(std::span<const Real> candidate, std::span<const Real> source, double delta);

// Candidates v + N(0, sigma^2 I), kept until ceil(num/2) positives and
// floor(num/2) negatives are collected. Throws std::runtime_error once
// max_draws candidates were drawn without reaching that balance.
AugmentedVectorSet augment_vectors(std::span<const Real> v, int num, double sigma, double delta,
                                   Rng& rng, int max_draws = 0);

// Fraction of `draws` perturbations at noise level sigma labelled positive.
double positive_fraction(std::span<const Real> v, double sigma, double delta, std::uint64_t seed,
                         int draws = 4000);

// Binary search on sigma, over a fixed seeded noise sample, for a pre-balance
// positive fraction in [0.3, 0.7].
double calibrate_sigma(std::span<const Real> v, double delta, std::uint64_t seed,
                       int draws = 4000);

// Image in (C, H, W) layout with values in [0, 1].
struct WatermarkImage {
  ImageDims dims;
  std::vector<Real> pixels;
  std::string provenance;
};

struct DotCodeLayout {
  int patch = 0;  // side length in pixels
  int grid_h = 0, grid_w = 0;
  int patches = 0;  // ceil(nbits / C)
};

// Largest square patch such that the patch grid holds ceil(nbits / C)
// patches. Throws CapacityError when nbits exceeds H * W * C.
DotCodeLayout dotcode_layout(std::size_t nbits, const ImageDims& dims);
// Bit p * C + c lands in patch p (row-major), channel c. 1 -> 1.0, 0 -> 0.0.
WatermarkImage dotcode_encode(std::span<const std::uint8_t> bits, const ImageDims& dims);
// Patch mean > 0.5 decodes to 1; a tie decodes to 0.
std::vector<std::uint8_t> dotcode_decode(std::span<const Real> chw, const ImageDims& dims,
                                         std::size_t nbits);

std::vector<std::uint8_t> random_bits(std::size_t n, std::uint64_t seed);
std::vector<std::uint8_t> bits_from_hex(const std::string& hex);
std::string bits_to_hex(std::span<const std::uint8_t> bits);

// Bilinear resize (half-pixel centres) to the target, then channel
// adaptation: luminance 0.299 R + 0.587 G + 0.114 B for one channel,
// replication for gray into colour. Values scaled to [0, 1].
WatermarkImage watermark_from_raster(const Raster& raster, const ImageDims& target);
WatermarkImage load_watermark(const std::filesystem::path& path, const ImageDims& target);

// Deterministic synthetic logo: a few bright shapes over a soft stripe
// texture. Distinct indices give visually distinct images.
WatermarkImage procedural_logo(std::uint64_t seed, int index, const ImageDims& dims);

// Round-to-nearest 8-bit quantization of clamped values, as stored on disk.
std::vector<Real> quantize8(std::span<const Real> values);
Raster to_raster(std::span<const Real> chw, const ImageDims& dims);
std::vector<Real> from_raster_exact(const Raster& raster);

}  // namespace fedmark

#endif  // FEDMARK_WATERMARK_HPP_
