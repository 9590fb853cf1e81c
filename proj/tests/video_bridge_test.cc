// Copyright 2026 The Foley Bridge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "foley/video_bridge.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "gtest/gtest.h"

#include "foley/rng.h"
#include "test_util.h"

namespace foley {
namespace {

using ::foley::testing::MaxAbsDiff;
using ::foley::testing::ThrowsCode;

BackboneConfig TinyConfig() {
  BackboneConfig c;
  c.n_blocks = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_text = 4;
  return c;
}

VideoTokens RandomVideo(int rows, int width, RngStream& rng) {
  VideoTokens v;
  v.tokens = rng.NormalMatrix(rows, width);
  for (int i = 0; i < rows; ++i) v.positions.push_back(i / 2);
  return v;
}

// Replaces every bridge scalar with a small random value so that no
// gradient is masked by the zero output projection.
void Perturb(BridgeParams& bridge, uint64_t seed, double scale) {
  RngStream rng(seed);
  for (auto& view : bridge.Views()) {
    for (Eigen::Index i = 0; i < view.size; ++i) {
      view.data[i] += scale * rng.Normal();
    }
  }
}

RawVideoTokens RawClip(int frames_eff, int patches, int width, uint64_t seed) {
  RngStream rng(seed);
  RawVideoTokens raw;
  raw.tokens = rng.NormalMatrix(static_cast<Eigen::Index>(frames_eff) * patches,
                                width);
  raw.n_frames_eff = frames_eff;
  raw.n_patches = patches;
  return raw;
}

// Reference rotation written independently of the library kernel.
Matrix RotatePerHead(const Matrix& x, std::span<const int64_t> pos,
                     int n_heads, double base) {
  Matrix y = x;
  const int dh = static_cast<int>(x.cols()) / n_heads;
  for (int r = 0; r < x.rows(); ++r) {
    for (int h = 0; h < n_heads; ++h) {
      for (int i = 0; i < dh / 2; ++i) {
        const double ang = pos[r] * std::pow(base, -2.0 * i / dh);
        const int c = h * dh + 2 * i;
        y(r, c) = x(r, c) * std::cos(ang) - x(r, c + 1) * std::sin(ang);
        y(r, c + 1) = x(r, c) * std::sin(ang) + x(r, c + 1) * std::cos(ang);
      }
    }
  }
  return y;
}

Matrix NaiveCrossAttention(const Matrix& x, std::span<const int64_t> pa,
                           const Matrix& v, std::span<const int64_t> pv,
                           const BridgeBlock& b, int n_heads, double base) {
  const int d = static_cast<int>(x.cols());
  const int dh = d / n_heads;
  Matrix n(x.rows(), d);
  for (int r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    for (int c = 0; c < d; ++c) {
      n(r, c) = (x(r, c) - mean) / std::sqrt(var + nn::kLayerNormEps) *
                    b.norm.gamma(c) +
                b.norm.beta(c);
    }
  }
  Matrix q = n * b.attn.q.weight.transpose();
  q.rowwise() += b.attn.q.bias.transpose();
  Matrix kv = v * b.attn.kv.weight.transpose();
  kv.rowwise() += b.attn.kv.bias.transpose();
  const Matrix qr = RotatePerHead(q, pa, n_heads, base);
  const Matrix kr = RotatePerHead(kv.leftCols(d), pv, n_heads, base);
  Matrix heads = Matrix::Zero(x.rows(), d);
  for (int i = 0; i < x.rows(); ++i) {
    for (int h = 0; h < n_heads; ++h) {
      std::vector<double> w(v.rows());
      double z = 0.0;
      for (int j = 0; j < v.rows(); ++j) {
        double s = 0.0;
        for (int c = h * dh; c < (h + 1) * dh; ++c) s += qr(i, c) * kr(j, c);
        w[j] = std::exp(s / std::sqrt(static_cast<double>(dh)));
        z += w[j];
      }
      for (int j = 0; j < v.rows(); ++j) {
        for (int c = h * dh; c < (h + 1) * dh; ++c) {
          heads(i, c) += w[j] / z * kv(j, d + c);
        }
      }
    }
  }
  Matrix out = heads * b.attn.o.weight.transpose();
  out.rowwise() += b.attn.o.bias.transpose();
  return x + out;
}

TEST(PoolVideoTest, FrameModeFourSeconds) {
  const RawVideoTokens raw = RawClip(32, 64, 4, 1);
  const VideoTokens v = PoolVideo(raw, {PoolingMode::kFrame});
  EXPECT_EQ(v.length(), 32);
  EXPECT_EQ(PooledTokenCount({PoolingMode::kFrame}, 4.0), 32);
  const Vector mean = raw.tokens.topRows(64).colwise().mean().transpose();
  EXPECT_LT((v.tokens.row(0).transpose() - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoolVideoTest, Grid8ModeFourSeconds) {
  const RawVideoTokens raw = RawClip(32, 64, 4, 2);
  const VideoTokens v = PoolVideo(raw, {PoolingMode::kGrid8});
  EXPECT_EQ(v.length(), 2048);
  EXPECT_EQ(PooledTokenCount({PoolingMode::kGrid8}, 4.0), 2048);
  // With 64 patches in an 8x8 grid each cell holds one patch.
  EXPECT_EQ(v.tokens, raw.tokens);
  EXPECT_EQ(v.positions[63], 0);
  EXPECT_EQ(v.positions[64], 1);
}

TEST(PoolVideoTest, TwelveSecondsAndTruncation) {
  EXPECT_EQ(PoolVideo(RawClip(96, 4, 3, 3), {PoolingMode::kFrame}).length(), 96);
  EXPECT_EQ(PoolVideo(RawClip(120, 4, 3, 3), {PoolingMode::kFrame}).length(),
            96);
  EXPECT_EQ(PooledTokenCount({PoolingMode::kFrame}, 15.0), 96);
}

TEST(PoolVideoTest, BudgetScalesWithDuration) {
  for (double s : {1.0, 2.5, 4.0, 8.0, 12.0}) {
    EXPECT_EQ(PooledTokenCount({PoolingMode::kFrame}, s), 8 * s);
    EXPECT_EQ(PooledTokenCount({PoolingMode::kGrid8}, s), 512 * s);
  }
}

TEST(PoolVideoTest, Grid16CellsAveragePatches) {
  const RawVideoTokens raw = RawClip(2, 1024, 2, 4);  // 32x32 patches
  const VideoTokens v = PoolVideo(raw, {PoolingMode::kGrid16});
  ASSERT_EQ(v.length(), 512);
  // Cell (0, 0) covers patches (0,0), (0,1), (1,0), (1,1).
  const Vector expected = (raw.tokens.row(0) + raw.tokens.row(1) +
                           raw.tokens.row(32) + raw.tokens.row(33))
                              .transpose() /
                          4.0;
  EXPECT_LT((v.tokens.row(0).transpose() - expected).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(PoolVideoTest, UnpartitionableGridIsPoolingError) {
  EXPECT_TRUE(ThrowsCode(
      [] { PoolVideo(RawClip(2, 36, 2, 5), {PoolingMode::kGrid8}); },
      ErrorCode::kPooling));
  EXPECT_TRUE(ThrowsCode(
      [] { PoolVideo(RawClip(2, 50, 2, 5), {PoolingMode::kGrid8}); },
      ErrorCode::kPooling));
}

TEST(AdapterTest, ZeroSecondMapIsIdentity) {
  BridgeParams bridge = InitBridge(TinyConfig(), 24, 1);
  BridgeBlock& b = bridge.blocks[0];
  b.mlp_w2.weight.setZero();
  b.mlp_w2.bias.setZero();
  RngStream rng(2);
  const VideoTokens v = RandomVideo(32, 24, rng);
  const VideoTokens out = AdapterMlp(v, b);
  EXPECT_EQ(out.tokens.rows(), 32);
  EXPECT_EQ(out.tokens.cols(), 24);
  EXPECT_EQ(out.tokens, v.tokens);
}

TEST(AdapterTest, MatchesPerTokenOracle) {
  BridgeParams bridge = InitBridge(TinyConfig(), 6, 1);
  Perturb(bridge, 9, 0.3);
  const BridgeBlock& b = bridge.blocks[1];
  RngStream rng(3);
  const VideoTokens v = RandomVideo(5, 6, rng);
  const VideoTokens out = AdapterMlp(v, b);
  for (int r = 0; r < 5; ++r) {
    const Vector x = v.tokens.row(r).transpose();
    Vector pre = b.mlp_w1.weight * x + b.mlp_w1.bias;
    for (int i = 0; i < pre.size(); ++i) {
      pre(i) = 0.5 * pre(i) * (1.0 + std::erf(pre(i) / std::sqrt(2.0)));
    }
    const Vector y = x + b.mlp_w2.weight * pre + b.mlp_w2.bias;
    EXPECT_LT((out.tokens.row(r).transpose() - y).cwiseAbs().maxCoeff(),
              1e-12);
  }
}

TEST(AdapterTest, WidthMismatchIsShapeError) {
  const BridgeParams bridge = InitBridge(TinyConfig(), 6, 1);
  RngStream rng(3);
  const VideoTokens v = RandomVideo(5, 7, rng);
  EXPECT_TRUE(ThrowsCode([&] { AdapterMlp(v, bridge.blocks[0]); },
                         ErrorCode::kShape));
}

TEST(VideoCrossAttentionTest, ZeroInitIsExactIdentity) {
  const BackboneConfig c = TinyConfig();
  const BridgeParams bridge = InitBridge(c, 6, 1);
  RngStream rng(4);
  const LatentSequence x = LatentSequence::FromTokens(rng.NormalMatrix(4, 8));
  const VideoTokens v = AdapterMlp(RandomVideo(6, 6, rng), bridge.blocks[0]);
  EXPECT_EQ(VideoCrossAttention(x, v, bridge.blocks[0], 2, 1e4).tokens,
            x.tokens);
  EXPECT_EQ(VideoCrossAttention(x, VideoTokens::Absent(), bridge.blocks[0], 2,
                                1e4)
                .tokens,
            x.tokens);
}

TEST(VideoCrossAttentionTest, MatchesDenseOracle) {
  BridgeParams bridge = InitBridge(TinyConfig(), 6, 1);
  Perturb(bridge, 5, 0.3);
  RngStream rng(5);
  const LatentSequence x = LatentSequence::FromTokens(rng.NormalMatrix(4, 8));
  const VideoTokens v = RandomVideo(6, 6, rng);
  const BridgeBlock& b = bridge.blocks[0];
  const Matrix got = VideoCrossAttention(x, v, b, 2, 100.0).tokens;
  const Matrix want =
      NaiveCrossAttention(x.tokens, x.positions, v.tokens, v.positions, b, 2,
                          100.0);
  EXPECT_LT(MaxAbsDiff(got, want), 1e-12);
}

TEST(VideoCrossAttentionTest, LogitsInvariantToCommonShift) {
  BridgeParams bridge = InitBridge(TinyConfig(), 6, 1);
  Perturb(bridge, 6, 0.3);
  RngStream rng(6);
  const Matrix q = rng.NormalMatrix(4, 8);
  const Matrix kv = rng.NormalMatrix(6, 6);
  nn::AttentionWeights w = bridge.blocks[0].attn;
  w.n_heads = 2;
  const std::vector<int64_t> pa = {0, 1, 2, 3}, pv = {0, 0, 1, 1, 2, 2};
  std::vector<int64_t> pa_s = pa, pv_s = pv;
  for (auto& p : pa_s) p += 37;
  for (auto& p : pv_s) p += 37;
  for (int h = 0; h < 2; ++h) {
    const Matrix base = nn::AttentionLogits(q, kv, w, nn::RopePositions{pa, pv, 1e4}, h);
    const Matrix both =
        nn::AttentionLogits(q, kv, w, nn::RopePositions{pa_s, pv_s, 1e4}, h);
    const Matrix video_only =
        nn::AttentionLogits(q, kv, w, nn::RopePositions{pa, pv_s, 1e4}, h);
    EXPECT_LT(MaxAbsDiff(base, both), 1e-10);
    EXPECT_GT(MaxAbsDiff(base, video_only), 1e-6);
  }
}

class BridgedTest : public ::testing::Test {
 protected:
  BridgedTest()
      : backbone_(InitBackbone(TinyConfig(), 3)),
        bridge_(InitBridge(TinyConfig(), 6, 4)),
        rng_(12) {
    a_t_ = LatentSequence::FromTokens(rng_.NormalMatrix(4, 8));
    text_.tokens = rng_.NormalMatrix(2, 4);
    video_ = RandomVideo(6, 6, rng_);
  }
  BackboneParams backbone_;
  BridgeParams bridge_;
  RngStream rng_;
  LatentSequence a_t_;
  TextTokens text_;
  VideoTokens video_;
};

TEST_F(BridgedTest, ZeroInitMatchesBackbone) {
  const Matrix bridged =
      BridgedForward(a_t_, 0.6, text_, video_, backbone_, bridge_).tokens;
  const Matrix plain = BackboneForward(a_t_, 0.6, text_, backbone_).tokens;
  EXPECT_LT(MaxAbsDiff(bridged, plain), 1e-12);
}

TEST_F(BridgedTest, ShapePreservedAt16x32) {
  BackboneConfig c = TinyConfig();
  c.d_model = 32;
  const BackboneParams bb = InitBackbone(c, 1);
  BridgeParams br = InitBridge(c, 6, 1);
  Perturb(br, 2, 0.1);
  const LatentSequence a = LatentSequence::FromTokens(rng_.NormalMatrix(16, 32));
  const LatentSequence out = BridgedForward(a, 0.3, text_, video_, bb, br);
  EXPECT_EQ(out.tokens.rows(), 16);
  EXPECT_EQ(out.tokens.cols(), 32);
}

TEST_F(BridgedTest, SublayerOrderPerBlock) {
  SublayerTrace trace;
  BridgedForward(a_t_, 0.5, text_, video_, backbone_, bridge_, &trace);
  const Sublayer order[] = {Sublayer::kSelfAttention,
                            Sublayer::kTextCrossAttention,
                            Sublayer::kVideoCrossAttention,
                            Sublayer::kFeedForward};
  ASSERT_EQ(trace.size(), 8u);
  for (size_t i = 0; i < trace.size(); ++i) {
    EXPECT_EQ(trace[i], (SublayerEvent{static_cast<int>(i / 4), order[i % 4]}));
  }
}

TEST_F(BridgedTest, GradientMatchesFiniteDifferences) {
  Perturb(bridge_, 21, 0.2);
  const Matrix target = rng_.NormalMatrix(4, 8);
  const double t = 0.37;
  BridgeParams grad = bridge_.ZerosLike();
  BridgedLossAndGradient(a_t_, t, text_, video_, target, backbone_, bridge_,
                         &grad);
  BridgeParams probe = bridge_;
  auto views = probe.Views();
  const auto grads = std::as_const(grad).Views();
  const double h = 1e-5;
  for (size_t k = 0; k < views.size(); ++k) {
    double max_num = 0.0, max_err = 0.0;
    for (Eigen::Index i = 0; i < views[k].size; ++i) {
      const double orig = views[k].data[i];
      views[k].data[i] = orig + h;
      const double up = BridgedLossAndGradient(a_t_, t, text_, video_, target,
                                               backbone_, probe, nullptr);
      views[k].data[i] = orig - h;
      const double down = BridgedLossAndGradient(
          a_t_, t, text_, video_, target, backbone_, probe, nullptr);
      views[k].data[i] = orig;
      const double num = (up - down) / (2 * h);
      max_num = std::max(max_num, std::abs(num));
      max_err = std::max(max_err, std::abs(num - grads[k].data[i]));
    }
    EXPECT_LT(max_err / std::max(max_num, 1e-12), 1e-4) << views[k].name;
  }
}

TEST_F(BridgedTest, BackboneUntouchedByGradientStep) {
  Perturb(bridge_, 22, 0.2);
  const std::string before = EncodeBlob(backbone_.ToArchive());
  BridgeParams grad = bridge_.ZerosLike();
  BridgedLossAndGradient(a_t_, 0.5, text_, video_, rng_.NormalMatrix(4, 8),
                         backbone_, bridge_, &grad);
  EXPECT_EQ(EncodeBlob(backbone_.ToArchive()), before);
}

TEST(TrainableMaskTest, DefaultConfigHasOnlyBridgeGroups) {
  const BackboneConfig c;
  const BackboneParams backbone = InitBackbone(c, 1);
  const BridgeParams bridge = InitBridge(c, 32, 1);
  const auto mask = TrainableMask(backbone, bridge);
  EXPECT_EQ(mask.size(), 36u);
  for (int b = 0; b < 6; ++b) {
    for (const char* g : kBridgeGroups) {
      EXPECT_TRUE(mask.contains("bridge." + std::to_string(b) + "." + g));
    }
  }
  for (const auto& id : BackboneTensorIds(backbone)) {
    EXPECT_FALSE(mask.contains(id)) << id;
  }
  const double ratio = static_cast<double>(bridge.ScalarCount()) /
                       static_cast<double>(backbone.ScalarCount());
  EXPECT_LT(ratio, 0.5);
}

}  // namespace
}  // namespace foley
