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

#include "fedmark/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fedmark {

namespace {
constexpr char kMagic[] = "FMCK";
constexpr std::uint32_t kMaxString = 1u << 24;
constexpr std::uint32_t kMaxArray = 1u << 28;
}  // namespace

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void ByteWriter::raw(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteWriter::f32_array(const std::vector<Real>& values) {
  u32(static_cast<std::uint32_t>(values.size()));
  for (Real v : values) f32(static_cast<float>(v));
}

void ByteReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n)
    throw FormatError("corrupt file: truncated at byte " + std::to_string(pos_));
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  if (n > kMaxString) throw FormatError("corrupt file: string length " + std::to_string(n));
  return raw(n);
}

std::string ByteReader::raw(std::size_t n) {
  need(n);
  std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
  pos_ += n;
  return s;
}

std::vector<Real> ByteReader::f32_array() {
  const std::uint32_t n = u32();
  if (n > kMaxArray) throw FormatError("corrupt file: array length " + std::to_string(n));
  need(static_cast<std::size_t>(n) * 4);
  std::vector<Real> out(n);
  for (auto& v : out) v = f32();
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

nlohmann::json arch_to_json(const ArchConfig& arch) {
  nlohmann::json j;
  j["name"] = arch.name;
  j["input"] = {{"height", arch.input.height},
                {"width", arch.input.width},
                {"channels", arch.input.channels}};
  j["num_classes"] = arch.num_classes;
  j["layers"] = nlohmann::json::array();
  for (const LayerSpec& l : arch.layers) {
    nlohmann::json e{{"kind", to_string(l.kind)}, {"name", l.name}};
    switch (l.kind) {
      case LayerKind::kLinear:
        e["in"] = l.in_features;
        e["out"] = l.out_features;
        break;
      case LayerKind::kConv:
        e["in"] = l.in_channels;
        e["out"] = l.out_channels;
        e["kernel"] = l.kernel;
        e["stride"] = l.stride;
        e["padding"] = l.padding;
        break;
      case LayerKind::kBatchNorm:
        e["features"] = l.features;
        break;
      case LayerKind::kMaxPool:
        e["kernel"] = l.kernel;
        e["stride"] = l.stride;
        break;
      case LayerKind::kDropout:
        e["p"] = l.drop_prob;
        break;
      default:
        break;
    }
    if (!l.weight.empty()) e["weight"] = l.weight;
    if (!l.bias.empty()) e["bias"] = l.bias;
    j["layers"].push_back(std::move(e));
  }
  return j;
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    throw std::invalid_argument("architecture must be an object; use a preset helper for '" +
                                j.get<std::string>() + "'");
  }
  ArchConfig a;
  a.name = j.value("name", "custom");
  const auto& in = j.at("input");
  a.input = {in.at("height").get<int>(), in.at("width").get<int>(), in.at("channels").get<int>()};
  a.num_classes = j.at("num_classes").get<int>();
  for (const auto& e : j.at("layers")) {
    LayerSpec l;
    l.kind = layer_kind_from_string(e.at("kind").get<std::string>());
    l.name = e.value("name", to_string(l.kind) + std::to_string(a.layers.size()));
    switch (l.kind) {
      case LayerKind::kLinear:
        l.in_features = e.at("in").get<int>();
        l.out_features = e.at("out").get<int>();
        break;
      case LayerKind::kConv:
        l.in_channels = e.at("in").get<int>();
        l.out_channels = e.at("out").get<int>();
        l.kernel = e.at("kernel").get<int>();
        l.stride = e.value("stride", 1);
        l.padding = e.value("padding", 0);
        break;
      case LayerKind::kBatchNorm:
        l.features = e.at("features").get<int>();
        break;
      case LayerKind::kMaxPool:
        l.kernel = e.value("kernel", 2);
        l.stride = e.value("stride", l.kernel);
        break;
      case LayerKind::kDropout:
        l.drop_prob = e.value("p", 0.5);
        break;
      default:
        break;
    }
    const bool learnable = l.kind == LayerKind::kLinear || l.kind == LayerKind::kConv ||
                           l.kind == LayerKind::kBatchNorm;
    l.weight = e.value("weight", learnable ? l.name + ".weight" : std::string());
    l.bias = e.value("bias", learnable ? l.name + ".bias" : std::string());
    a.layers.push_back(std::move(l));
  }
  return a;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(Checkpoint::kFormatVersion);
  w.str(arch_to_json(ckpt.arch).dump());
  w.str(ckpt.meta.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.i32(d);
    w.f32_array(t.data);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.bn.size()));
  for (const auto& [name, s] : ckpt.bn) {
    w.str(name);
    w.f32_array(s.mean_main);
    w.f32_array(s.var_main);
    w.f32_array(s.mean_wm);
    w.f32_array(s.var_wm);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.raw(4) != kMagic) throw FormatError("corrupt file: not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kFormatVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) +
                      " is not supported (expected " +
                      std::to_string(Checkpoint::kFormatVersion) + ")");
  Checkpoint c;
  try {
    c.arch = arch_from_json(nlohmann::json::parse(r.str()));
    c.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt file: ") + e.what());
  }
  const std::uint32_t np = r.u32();
  for (std::uint32_t i = 0; i < np; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("corrupt file: tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.i32();
    std::vector<Real> data = r.f32_array();
    if (data.size() != shape_numel(shape))
      throw FormatError("corrupt file: tensor '" + name + "' size does not match its shape");
    c.params.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  const std::uint32_t nb = r.u32();
  for (std::uint32_t i = 0; i < nb; ++i) {
    std::string name = r.str();
    BnStats s;
    s.mean_main = r.f32_array();
    s.var_main = r.f32_array();
    s.mean_wm = r.f32_array();
    s.var_wm = r.f32_array();
    c.bn.emplace(std::move(name), std::move(s));
  }
  if (!r.at_end()) throw FormatError("corrupt file: trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace fedmark
