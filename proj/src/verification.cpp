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

#include "fedmark/verification.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>

namespace fedmark {
namespace {

constexpr char kKeyMagic[] = "FMKY";

std::vector<Real> round_to_float(std::span<const Real> v) {
  std::vector<Real> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

WatermarkImage WatermarkKey::reference_image() const {
  WatermarkImage img;
  img.dims = dims;
  img.pixels.resize(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) img.pixels[i] = reference[i] / 255.0;
  img.provenance = image_path;
  return img;
}

std::string WatermarkKey::id() const {
  return "client_" + std::to_string(client_id) + "@" + hex64(digest).substr(0, 8);
}

WatermarkKey make_key(const ClientState& client, const ArchConfig& arch, int round,
                      const std::string& image_path) {
  WatermarkKey k;
  k.client_id = client.id;
  k.arch_name = arch.name;
  k.num_classes = arch.num_classes;
  k.dims = client.watermark.dims;
  k.vector = round_to_float(client.vector.values);
  k.vector_seed = client.vector.seed;
  for (const auto& [name, m] : client.wm_bn)
    k.wm_bn[name] = {round_to_float(m.mean), round_to_float(m.var)};
  k.reference.resize(client.watermark.pixels.size());
  for (std::size_t i = 0; i < k.reference.size(); ++i)
    k.reference[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(client.watermark.pixels[i], 0.0, 1.0) * 255.0));
  k.digest = fnv1a64(k.reference);
  k.image_path = image_path;
  k.round = round;
  return k;
}

void save_key(const WatermarkKey& key, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(kKeyMagic);
  w.u32(WatermarkKey::kFormatVersion);
  w.i32(key.client_id);
  w.i32(key.round);
  w.str(key.arch_name);
  w.i32(key.num_classes);
  w.i32(key.dims.height);
  w.i32(key.dims.width);
  w.i32(key.dims.channels);
  w.u64(key.vector_seed);
  w.f32_array(key.vector);
  w.u32(static_cast<std::uint32_t>(key.wm_bn.size()));
  for (const auto& [name, m] : key.wm_bn) {
    w.str(name);
    w.f32_array(m.mean);
    w.f32_array(m.var);
  }
  w.u32(static_cast<std::uint32_t>(key.reference.size()));
  w.raw(std::string(key.reference.begin(), key.reference.end()));
  w.u64(key.digest);
  w.str(key.image_path);
  write_file_bytes(path, w.take());
}

WatermarkKey load_key(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (r.raw(4) != kKeyMagic)
    throw FormatError("corrupt file: '" + path.string() + "' is not a watermark key");
  const std::uint32_t version = r.u32();
  if (version != WatermarkKey::kFormatVersion)
    throw FormatError("key format version " + std::to_string(version) + " is not supported (" +
                      "expected " + std::to_string(WatermarkKey::kFormatVersion) + ")");
  WatermarkKey k;
  k.client_id = r.i32();
  k.round = r.i32();
  k.arch_name = r.str();
  k.num_classes = r.i32();
  k.dims.height = r.i32();
  k.dims.width = r.i32();
  k.dims.channels = r.i32();
  k.vector_seed = r.u64();
  k.vector = r.f32_array();
  const std::uint32_t layers = r.u32();
  for (std::uint32_t i = 0; i < layers; ++i) {
    std::string name = r.str();
    BnMoments m;
    m.mean = r.f32_array();
    m.var = r.f32_array();
    k.wm_bn.emplace(std::move(name), std::move(m));
  }
  const std::uint32_t npix = r.u32();
  const std::string pix = r.raw(npix);
  k.reference.assign(pix.begin(), pix.end());
  k.digest = r.u64();
  k.image_path = r.str();
  if (!r.at_end()) throw FormatError("corrupt file: trailing bytes in key '" + path.string() + "'");
  if (k.dims.height <= 0 || k.dims.width <= 0 || k.dims.channels <= 0 ||
      k.reference.size() != static_cast<std::size_t>(k.dims.numel()))
    throw FormatError("corrupt file: key image does not match its dimensions");
  if (fnv1a64(k.reference) != k.digest)
    throw FormatError("corrupt file: key image digest mismatch in '" + path.string() + "'");
  return k;
}

void check_key_compatible(const WatermarkKey& key, const Checkpoint& ckpt) {
  if (static_cast<int>(key.vector.size()) != ckpt.arch.num_classes)
    throw ShapeError("key vector has " + std::to_string(key.vector.size()) +
                     " entries but the checkpoint model has " +
                     std::to_string(ckpt.arch.num_classes) + " classes");
  if (!(key.dims == ckpt.arch.input))
    throw ShapeError("key image " + shape_str(key.dims.chw()) + " does not match model input " +
                     shape_str(ckpt.arch.input.chw()));
  if (key.wm_bn.size() != ckpt.bn.size())
    throw ShapeError("key holds BN moments for " + std::to_string(key.wm_bn.size()) +
                     " layers, checkpoint has " + std::to_string(ckpt.bn.size()));
  for (const auto& [name, stats] : ckpt.bn) {
    auto it = key.wm_bn.find(name);
    if (it == key.wm_bn.end()) throw ShapeError("key lacks BN moments for '" + name + "'");
    if (it->second.mean.size() != stats.mean_wm.size() ||
        it->second.var.size() != stats.var_wm.size())
      throw ShapeError("key BN moments for '" + name + "' have the wrong width");
  }
}

nlohmann::json VerificationReport::to_json() const {
  nlohmann::json j;
  j["checkpoint"] = checkpoint_id;
  j["key"] = key_id;
  j["tau"] = tau;
  j["ssim"] = ssim;
  j["mse"] = mse;
  if (std::isinf(psnr)) {
    j["psnr"] = "inf";
  } else {
    j["psnr"] = psnr;
  }
  j["lpips"] = nullptr;  // not computed
  j["verdict"] = pass ? "pass" : "fail";
  j["image"] = image_path;
  j["timestamp"] = timestamp;
  return j;
}

std::vector<Real> extract_watermark(const Checkpoint& ckpt, std::span<const Real> vector,
                                    const BnMomentMap& wm_bn) {
  Workspace ws(ModelGraph::from_checkpoint(ckpt));
  return reconstruct_image(ws, vector, wm_bn);
}

VerificationReport verify(const Checkpoint& ckpt, const WatermarkKey& key,
                          const VerifyOptions& opts) {
  check_key_compatible(key, ckpt);
  VerificationReport rep;
  rep.tau = opts.tau;
  rep.key_id = key.id();
  rep.checkpoint_id =
      opts.checkpoint_id.empty() ? hex64(fnv1a64(serialize_checkpoint(ckpt))) : opts.checkpoint_id;
  const auto image = extract_watermark(ckpt, key.vector, key.wm_bn);
  const WatermarkImage ref = key.reference_image();
  rep.ssim = ssim(image, ref.pixels, key.dims, opts.ssim);
  rep.mse = mse(image, ref.pixels);
  rep.psnr = psnr(image, ref.pixels, opts.ssim.dynamic_range);
  rep.pass = rep.ssim >= opts.tau;
  if (opts.image_out) {
    write_png(*opts.image_out, to_raster(image, key.dims));
    rep.image_path = opts.image_out->string();
  }
  rep.timestamp = utc_timestamp();
  return rep;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace fedmark
