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

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fedmark {
namespace {

std::vector<Real> window_weights(const SsimConfig& cfg) {
  std::vector<Real> w(cfg.window);
  if (cfg.kind == SsimWindow::kUniform) {
    std::fill(w.begin(), w.end(), 1.0 / cfg.window);
    return w;
  }
  const int half = cfg.window / 2;
  Real sum = 0.0;
  for (int i = 0; i < cfg.window; ++i) {
    const Real d = i - half;
    w[i] = std::exp(-d * d / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma));
    sum += w[i];
  }
  for (Real& v : w) v /= sum;
  return w;
}

// Separable weighted sum over every fully-contained k x k window.
void filter_valid(const Real* img, int h, int w, const std::vector<Real>& k1, Real* out) {
  const int k = static_cast<int>(k1.size());
  const int oh = h - k + 1, ow = w - k + 1;
  std::vector<Real> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      Real s = 0.0;
      for (int j = 0; j < k; ++j) s += k1[j] * img[y * w + x + j];
      tmp[y * ow + x] = s;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      Real s = 0.0;
      for (int i = 0; i < k; ++i) s += k1[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
}

// Adjoint of filter_valid: scatters a window map back to pixels.
void filter_adjoint(const Real* map, int h, int w, const std::vector<Real>& k1, Real* out) {
  const int k = static_cast<int>(k1.size());
  const int oh = h - k + 1, ow = w - k + 1;
  std::vector<Real> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int i = 0; i < k; ++i)
      for (int x = 0; x < ow; ++x) tmp[(y + i) * ow + x] += k1[i] * map[y * ow + x];
  std::fill(out, out + static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x)
      for (int j = 0; j < k; ++j) out[y * w + x + j] += k1[j] * tmp[y * ow + x];
}

double ssim_impl(std::span<const Real> a, std::span<const Real> b, const ImageDims& dims,
                 const SsimConfig& cfg, Real* grad_a) {
  const std::size_t n = static_cast<std::size_t>(dims.numel());
  if (a.size() != n || b.size() != n)
    throw std::invalid_argument("ssim: image sizes " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " do not match " +
                                shape_str(dims.chw()));
  cfg.validate(dims.height, dims.width);
  const auto k1 = window_weights(cfg);
  const int h = dims.height, w = dims.width;
  const int oh = h - cfg.window + 1, ow = w - cfg.window + 1;
  const std::size_t m = static_cast<std::size_t>(oh) * ow;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Real> mu_a(m), mu_b(m), e_aa(m), e_bb(m), e_ab(m);
  std::vector<Real> aa(plane), bb(plane), ab(plane);
  std::vector<Real> dmu(m), dq(m), dr(m), back(plane);
  const Real c1 = cfg.c1, c2 = cfg.c2;
  const Real scale = 1.0 / (static_cast<Real>(m) * dims.channels);

  double total = 0.0;
  for (int c = 0; c < dims.channels; ++c) {
    const Real* pa = a.data() + c * plane;
    const Real* pb = b.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    filter_valid(pa, h, w, k1, mu_a.data());
    filter_valid(pb, h, w, k1, mu_b.data());
    filter_valid(aa.data(), h, w, k1, e_aa.data());
    filter_valid(bb.data(), h, w, k1, e_bb.data());
    filter_valid(ab.data(), h, w, k1, e_ab.data());
    double channel_sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const Real ma = mu_a[i], mb = mu_b[i];
      const Real va = e_aa[i] - ma * ma;
      const Real vb = e_bb[i] - mb * mb;
      const Real cov = e_ab[i] - ma * mb;
      const Real a1 = 2.0 * ma * mb + c1, a2 = 2.0 * cov + c2;
      const Real b1 = ma * ma + mb * mb + c1, b2 = va + vb + c2;
      const Real s = a1 * a2 / (b1 * b2);
      channel_sum += s;
      if (grad_a) {
        const Real ds_dmu = 2.0 * mb * a2 / (b1 * b2) - 2.0 * ma * s / b1;
        const Real ds_dvar = -s / b2;
        const Real ds_dcov = 2.0 * a1 / (b1 * b2);
        dmu[i] = (ds_dmu - 2.0 * ma * ds_dvar - mb * ds_dcov) * scale;
        dq[i] = 2.0 * ds_dvar * scale;
        dr[i] = ds_dcov * scale;
      }
    }
    total += channel_sum / static_cast<double>(m);
    if (grad_a) {
      Real* g = grad_a + c * plane;
      filter_adjoint(dmu.data(), h, w, k1, g);
      filter_adjoint(dq.data(), h, w, k1, back.data());
      for (std::size_t i = 0; i < plane; ++i) g[i] += pa[i] * back[i];
      filter_adjoint(dr.data(), h, w, k1, back.data());
      for (std::size_t i = 0; i < plane; ++i) g[i] += pb[i] * back[i];
    }
  }
  return total / dims.channels;
}

}  // namespace

SsimConfig SsimConfig::uniform7(double range) {
  SsimConfig c;
  c.window = 7;
  c.kind = SsimWindow::kUniform;
  c.dynamic_range = range;
  c.c1 = (0.01 * range) * (0.01 * range);
  c.c2 = (0.03 * range) * (0.03 * range);
  return c;
}

SsimConfig SsimConfig::gaussian11(double range) {
  SsimConfig c = uniform7(range);
  c.window = 11;
  c.kind = SsimWindow::kGaussian;
  c.gaussian_sigma = 1.5;
  return c;
}

void SsimConfig::validate(int h, int w) const {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("ssim window must be odd and >= 3, got " + std::to_string(window));
  if (window > std::min(h, w))
    throw std::invalid_argument("ssim window " + std::to_string(window) + " exceeds image " +
                                std::to_string(h) + "x" + std::to_string(w));
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw std::invalid_argument("ssim constants must be positive");
  if (kind == SsimWindow::kGaussian && !(gaussian_sigma > 0.0))
    throw std::invalid_argument("ssim gaussian sigma must be positive");
}

double ssim(std::span<const Real> a, std::span<const Real> b, const ImageDims& dims,
            const SsimConfig& cfg) {
  return ssim_impl(a, b, dims, cfg, nullptr);
}

double ssim_with_grad(std::span<const Real> a, std::span<const Real> b, const ImageDims& dims,
                      const SsimConfig& cfg, std::span<Real> grad_a) {
  if (grad_a.size() != a.size()) throw std::invalid_argument("ssim: gradient buffer size mismatch");
  return ssim_impl(a, b, dims, cfg, grad_a.data());
}

double mse(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("mse: image sizes " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double psnr(std::span<const Real> a, std::span<const Real> b, double peak) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / e);
}

double ber(std::span<const std::uint8_t> sent, std::span<const std::uint8_t> received) {
  if (sent.size() != received.size() || sent.empty())
    throw std::invalid_argument("ber: bit strings of length " + std::to_string(sent.size()) +
                                " and " + std::to_string(received.size()));
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < sent.size(); ++i) wrong += (sent[i] != 0) != (received[i] != 0);
  return static_cast<double>(wrong) / static_cast<double>(sent.size());
}

double cosine(std::span<const Real> u, std::span<const Real> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine: zero-norm vector");
  return std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
}

double asr(std::span<const double> outcomes, double tau) {
  if (outcomes.empty()) throw std::invalid_argument("asr: no attempts");
  std::size_t hits = 0;
  for (double s : outcomes) hits += s >= tau;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

}  // namespace fedmark
