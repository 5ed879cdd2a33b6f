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

#ifndef FEDMARK_VERIFICATION_HPP_
#define FEDMARK_VERIFICATION_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmark/checkpoint.hpp"
#include "fedmark/metrics.hpp"
#include "fedmark/training.hpp"
#include "fedmark/watermark.hpp"

namespace fedmark {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t v);

// Everything a verifier needs, independent of the training run.
struct WatermarkKey {
  static constexpr std::uint32_t kFormatVersion = 1;

  int client_id = 0;
  std::string arch_name;
  int num_classes = 0;
  ImageDims dims;
  std::vector<Real> vector;
  std::uint64_t vector_seed = 0;
  BnMomentMap wm_bn;
  std::vector<std::uint8_t> reference;  // 8-bit watermark pixels, (C, H, W)
  std::uint64_t digest = 0;             // FNV-1a of `reference`
  std::string image_path;
  int round = 0;

  WatermarkImage reference_image() const;
  std::string id() const;
  bool operator==(const WatermarkKey&) const = default;
};

// Vector and moments come back rounded to float32, matching a saved key.
WatermarkKey make_key(const ClientState& client, const ArchConfig& arch, int round,
                      const std::string& image_path);
void save_key(const WatermarkKey& key, const std::filesystem::path& path);
// Throws FormatError for a corrupt file, version mismatch or digest mismatch.
WatermarkKey load_key(const std::filesystem::path& path);
// Throws ShapeError when the key does not fit the architecture.
void check_key_compatible(const WatermarkKey& key, const Checkpoint& ckpt);

struct VerificationReport {
  std::string checkpoint_id;
  std::string key_id;
  double tau = 0.5;
  double ssim = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
  bool pass = false;  // ssim >= tau
  std::string image_path;
  std::string timestamp;

  nlohmann::json to_json() const;
};

struct VerifyOptions {
  double tau = 0.5;
  SsimConfig ssim;
  std::optional<std::filesystem::path> image_out;  // PNG of the reconstruction
  std::string checkpoint_id;  // defaults to the digest of the serialized checkpoint
};

// Rebuilds the transposed model from the checkpoint, installs the key's BN
// moments and compares quantize8(clamp(T(v))) with the reference image.
VerificationReport verify(const Checkpoint& ckpt, const WatermarkKey& key,
                          const VerifyOptions& opts = {});
// Same reconstruction without metrics or files; 8-bit quantized values.
std::vector<Real> extract_watermark(const Checkpoint& ckpt, std::span<const Real> vector,
                                    const BnMomentMap& wm_bn);

std::string utc_timestamp();

}  // namespace fedmark

#endif  // FEDMARK_VERIFICATION_HPP_
