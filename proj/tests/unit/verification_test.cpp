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

#include <gtest/gtest.h>

#include <fstream>

#include "fedmark/image_io.hpp"
#include "fedmark/watermark.hpp"
#include "test_util.hpp"

namespace fedmark {
namespace {

namespace fs = std::filesystem;
using testing::tiny_experiment;

class VerifyFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(testing::temp_dir("verify_run"));
    ExperimentConfig cfg = tiny_experiment();
    cfg.agg.rounds = 3;
    cfg.train.lr = 0.05;
    RunOptions opts;
    opts.run_dir = *dir_;
    run_ = new RunResult(run_federation(cfg, opts));
  }
  static void TearDownTestSuite() {
    delete run_;
    delete dir_;
  }
  static RunResult* run_;
  static fs::path* dir_;
};
RunResult* VerifyFixture::run_ = nullptr;
fs::path* VerifyFixture::dir_ = nullptr;

TEST(Fnv, KnownValues) {
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
  const std::vector<std::uint8_t> a{'a'};
  EXPECT_EQ(fnv1a64(a), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST_F(VerifyFixture, KeyRoundTripAndFields) {
  const WatermarkKey& k = run_->keys[1];
  EXPECT_EQ(k.client_id, 1);
  EXPECT_EQ(k.num_classes, 4);
  EXPECT_EQ(k.dims, (ImageDims{12, 12, 1}));
  EXPECT_EQ(k.vector.size(), 4u);
  EXPECT_EQ(k.reference.size(), 144u);
  EXPECT_EQ(k.digest, fnv1a64(k.reference));
  EXPECT_EQ(k.round, 3);
  const WatermarkKey back = load_key(*dir_ / "keys" / "client_1.key");
  EXPECT_EQ(back, k);
  const auto p = testing::temp_dir("key_rt") / "k.key";
  save_key(back, p);
  EXPECT_EQ(read_file_bytes(p), read_file_bytes(*dir_ / "keys" / "client_1.key"));
}

TEST_F(VerifyFixture, CorruptKeysAreRejected) {
  auto bytes = read_file_bytes(*dir_ / "keys" / "client_0.key");
  const auto d = testing::temp_dir("key_bad");
  write_file_bytes(d / "short.key", {bytes.begin(), bytes.begin() + bytes.size() / 2});
  EXPECT_THROW(load_key(d / "short.key"), FormatError);
  auto flipped = bytes;
  flipped[0] ^= 0xff;
  write_file_bytes(d / "magic.key", flipped);
  EXPECT_THROW(load_key(d / "magic.key"), FormatError);
  // Last reference pixel sits before the digest and the image path.
  auto tampered = bytes;
  tampered[bytes.size() - 8 - 4 - run_->keys[0].image_path.size() - 1] ^= 0x01;
  write_file_bytes(d / "tampered.key", tampered);
  EXPECT_THROW(load_key(d / "tampered.key"), FormatError);
  EXPECT_THROW(load_key(d / "nope.key"), std::runtime_error);
}

TEST_F(VerifyFixture, IncompatibleKeyIsShapeError) {
  WatermarkKey k = run_->keys[0];
  k.vector.assign(10, 0.1);
  EXPECT_THROW(check_key_compatible(k, run_->global), ShapeError);
  EXPECT_THROW(verify(run_->global, k), ShapeError);
  const Checkpoint other =
      ModelGraph::build(tiny_vgg(run_->global.arch.input, 100, 8, 2, 4), 1).to_checkpoint();
  EXPECT_THROW(check_key_compatible(run_->keys[0], other), ShapeError);
  WatermarkKey dims = run_->keys[0];
  dims.dims = {14, 14, 1};
  EXPECT_THROW(check_key_compatible(dims, run_->global), ShapeError);
  WatermarkKey bn = run_->keys[0];
  bn.wm_bn.erase(bn.wm_bn.begin());
  EXPECT_THROW(check_key_compatible(bn, run_->global), ShapeError);
}

TEST_F(VerifyFixture, VerdictFollowsThreshold) {
  const WatermarkKey& k = run_->keys[0];
  const double s = verify(run_->global, k).ssim;
  EXPECT_NEAR(s, run_->final_ssim[0], 1e-12);
  for (double tau : {-1.0, s - 1e-9, s, s + 1e-9, 1.0}) {
    VerifyOptions o;
    o.tau = tau;
    const VerificationReport r = verify(run_->global, k, o);
    EXPECT_EQ(r.pass, r.ssim >= tau) << tau;
    EXPECT_EQ(r.ssim, s);
  }
}

TEST_F(VerifyFixture, ReadOnlyAndBitStable) {
  const auto ckpt_path = *dir_ / "checkpoints" / "round_3";
  const auto before = read_file_bytes(ckpt_path);
  const Checkpoint c = load_checkpoint(ckpt_path);
  const auto a = verify(c, run_->keys[1]);
  const auto b = verify(c, run_->keys[1]);
  EXPECT_EQ(a.ssim, b.ssim);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_EQ(read_file_bytes(ckpt_path), before);
  EXPECT_EQ(serialize_checkpoint(c), before);
  // The key's moments are used, not the checkpoint's watermark slots.
  Checkpoint scrambled = c;
  for (auto& [name, st] : scrambled.bn) {
    for (auto& v : st.mean_wm) v += 3.0;
    for (auto& v : st.var_wm) v *= 5.0;
  }
  EXPECT_EQ(verify(scrambled, run_->keys[1]).ssim, a.ssim);
}

TEST_F(VerifyFixture, EmittedImageMatchesReportedSsim) {
  const WatermarkKey& k = run_->keys[0];
  VerifyOptions o;
  o.image_out = testing::temp_dir("verify_png") / "rec.png";
  const VerificationReport r = verify(run_->global, k, o);
  EXPECT_EQ(r.image_path, o.image_out->string());
  const Raster ras = read_image(*o.image_out);
  const WatermarkImage img = watermark_from_raster(ras, k.dims);
  const WatermarkImage ref = k.reference_image();
  EXPECT_NEAR(ssim(img.pixels, ref.pixels, k.dims), r.ssim, 1e-4);
  const auto ext = extract_watermark(run_->global, k.vector, k.wm_bn);
  EXPECT_NEAR(ssim(ext, ref.pixels, k.dims), r.ssim, 1e-12);
}

TEST_F(VerifyFixture, ReportJson) {
  VerifyOptions o;
  o.checkpoint_id = "ckpt";
  const nlohmann::json j = verify(run_->global, run_->keys[0], o).to_json();
  EXPECT_EQ(j["checkpoint"], "ckpt");
  EXPECT_EQ(j["key"], run_->keys[0].id());
  EXPECT_TRUE(j["lpips"].is_null());
  EXPECT_TRUE(j["verdict"] == "pass" || j["verdict"] == "fail");
  EXPECT_FALSE(j["timestamp"].get<std::string>().empty());
  VerificationReport perfect;
  perfect.psnr = std::numeric_limits<double>::infinity();
  EXPECT_EQ(perfect.to_json()["psnr"], "inf");
  VerifyOptions d;
  EXPECT_EQ(verify(run_->global, run_->keys[0], d).checkpoint_id,
            hex64(fnv1a64(serialize_checkpoint(run_->global))));
}

TEST_F(VerifyFixture, WrongKeyOrVectorScoresLower) {
  const WatermarkKey& own = run_->keys[0];
  WatermarkKey swapped = own;
  swapped.vector = run_->keys[1].vector;
  swapped.wm_bn = run_->keys[1].wm_bn;
  const double right = verify(run_->global, own).ssim;
  EXPECT_LT(verify(run_->global, swapped).ssim, right);
  WatermarkKey rnd = own;
  const auto v = generate_extraction_vector(12345, 4);
  rnd.vector = v.values;
  EXPECT_LT(verify(run_->global, rnd).ssim, right);
}

}  // namespace
}  // namespace fedmark
