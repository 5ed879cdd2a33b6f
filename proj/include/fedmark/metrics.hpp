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

#ifndef FEDMARK_METRICS_HPP_
#define FEDMARK_METRICS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "fedmark/model.hpp"

namespace fedmark {

enum class SsimWindow { kUniform, kGaussian };

struct SsimConfig {
  int window = 7;
  SsimWindow kind = SsimWindow::kUniform;
  double gaussian_sigma = 1.5;
  double dynamic_range = 1.0;
  double c1 = 1e-4;  // (0.01 L)^2
  double c2 = 9e-4;  // (0.03 L)^2

  static SsimConfig uniform7(double range = 1.0);
  static SsimConfig gaussian11(double range = 1.0);
  // Throws std::invalid_argument unless 3 <= window <= min(h, w), window odd,
  // and c1, c2 > 0.
  void validate(int h, int w) const;
};

// Mean SSIM over all fully-contained windows, averaged over channels.
// Images are (C, H, W) flattened.
double ssim(std::span<const Real> a, std::span<const Real> b, const ImageDims& dims,
            const SsimConfig& cfg = {});
// Same value; writes d ssim / d a into grad_a (size C*H*W).
double ssim_with_grad(std::span<const Real> a, std::span<const Real> b, const ImageDims& dims,
                      const SsimConfig& cfg, std::span<Real> grad_a);

double mse(std::span<const Real> a, std::span<const Real> b);
// +infinity when the images are identical.
double psnr(std::span<const Real> a, std::span<const Real> b, double peak = 1.0);
double ber(std::span<const std::uint8_t> sent, std::span<const std::uint8_t> received);
// Throws std::invalid_argument for a zero-norm input.
double cosine(std::span<const Real> u, std::span<const Real> v);
// Percentage of outcomes at or above tau.
double asr(std::span<const double> outcomes, double tau);

}  // namespace fedmark

#endif  // FEDMARK_METRICS_HPP_
