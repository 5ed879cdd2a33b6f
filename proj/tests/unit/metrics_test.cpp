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

#include "fedmark/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

namespace fedmark {
namespace {

using testing::uniform_values;

const ImageDims kGray{12, 12, 1};

TEST(Ssim, IdentityIsOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = uniform_values(kGray.numel(), seed);
    EXPECT_NEAR(ssim(x, x, kGray), 1.0, 1e-6);
  }
}

TEST(Ssim, ConstantImagesMatchClosedForm) {
  // Zero variance everywhere: SSIM = (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
  const SsimConfig cfg = SsimConfig::uniform7(1.0);
  const std::vector<Real> zeros(kGray.numel(), 0.0), ones(kGray.numel(), 1.0);
  const double expected = cfg.c1 / (1.0 + cfg.c1);
  EXPECT_NEAR(ssim(zeros, ones, kGray, cfg), expected, 1e-12);
  EXPECT_NEAR(expected, 9.999e-5, 1e-8);
}

TEST(Ssim, Symmetric) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto a = uniform_values(kGray.numel(), 2 * seed);
    const auto b = uniform_values(kGray.numel(), 2 * seed + 1);
    EXPECT_NEAR(ssim(a, b, kGray), ssim(b, a, kGray), 1e-12);
  }
}

TEST(Ssim, RangeAndMultiChannelAverage) {
  const ImageDims rgb{10, 10, 3};
  const auto a = uniform_values(rgb.numel(), 5);
  auto b = a;
  for (std::size_t i = 0; i < 100; ++i) b[i] = 1.0 - b[i];  // first channel inverted
  const double s = ssim(a, b, rgb);
  EXPECT_GE(s, -1.0);
  EXPECT_LE(s, 1.0);
  const ImageDims one{10, 10, 1};
  const double s0 = ssim(std::span<const Real>(a).subspan(0, 100),
                         std::span<const Real>(b).subspan(0, 100), one);
  EXPECT_NEAR(s, (s0 + 2.0) / 3.0, 1e-12);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  for (SsimConfig cfg : {SsimConfig::uniform7(), SsimConfig::gaussian11()}) {
    const ImageDims d = cfg.window == 11 ? ImageDims{13, 13, 1} : kGray;
    auto a = uniform_values(d.numel(), 11);
    const auto b = uniform_values(d.numel(), 12);
    std::vector<Real> g(a.size());
    ssim_with_grad(a, b, d, cfg, g);
    for (std::size_t i = 0; i < a.size(); i += 7) {
      const double fd = testing::central_diff([&] { return ssim(a, b, d, cfg); }, a[i], 1e-6);
      EXPECT_TRUE(testing::rel_close(g[i], fd, 1e-4, 1e-8)) << i << ": " << g[i] << " vs " << fd;
    }
  }
}

TEST(Ssim, RejectsBadInput) {
  const auto a = uniform_values(kGray.numel(), 1);
  const auto b = uniform_values(kGray.numel() - 1, 2);
  EXPECT_THROW(ssim(a, b, kGray), std::invalid_argument);
  SsimConfig cfg;
  cfg.window = 4;
  EXPECT_THROW(ssim(a, a, kGray, cfg), std::invalid_argument);
  cfg.window = 13;
  EXPECT_THROW(ssim(a, a, kGray, cfg), std::invalid_argument);
}

TEST(Mse, KnownValues) {
  const std::vector<Real> zeros(16, 0.0), ones(16, 1.0);
  EXPECT_EQ(mse(zeros, zeros), 0.0);
  EXPECT_EQ(mse(zeros, ones), 1.0);
  const auto a = uniform_values(50, 3), b = uniform_values(50, 4);
  double loop = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) loop += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(mse(a, b), loop / 50.0, 1e-15);
  EXPECT_THROW(mse(a, std::span<const Real>(b).subspan(1)), std::invalid_argument);
}

TEST(Psnr, FormulaAndSentinel) {
  const auto a = uniform_values(64, 5);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
  auto b = a;
  b[0] += 0.1;
  const double m = mse(a, b);
  EXPECT_NEAR(psnr(a, b, 1.0), 10.0 * std::log10(1.0 / m), 1e-12);
  EXPECT_NEAR(psnr(a, b, 255.0), 10.0 * std::log10(255.0 * 255.0 / m), 1e-12);
}

TEST(Ber, CountsWrongBits) {
  const std::vector<std::uint8_t> s{1, 0, 1, 1, 0, 0, 1, 0};
  auto r = s;
  EXPECT_EQ(ber(s, r), 0.0);
  r[0] ^= 1;
  r[5] ^= 1;
  EXPECT_DOUBLE_EQ(ber(s, r), 0.25);
  EXPECT_THROW(ber(s, std::span<const std::uint8_t>(r).subspan(1)), std::invalid_argument);
}

TEST(Cosine, Basics) {
  const std::vector<Real> u{1, 0, 0}, v{0, 2, 0}, w{3, 0, 0};
  EXPECT_NEAR(cosine(u, v), 0.0, 1e-15);
  EXPECT_NEAR(cosine(u, w), 1.0, 1e-15);
  const std::vector<Real> z{0, 0, 0};
  EXPECT_THROW(cosine(u, z), std::invalid_argument);
}

TEST(Asr, PercentAtOrAboveTau) {
  const std::vector<double> out{0.1, 0.5, 0.9, 0.3};
  EXPECT_DOUBLE_EQ(asr(out, 0.5), 50.0);
  EXPECT_DOUBLE_EQ(asr(out, 0.95), 0.0);
  EXPECT_DOUBLE_EQ(asr(out, 0.0), 100.0);
  EXPECT_THROW(asr({}, 0.5), std::invalid_argument);
}

}  // namespace
}  // namespace fedmark
