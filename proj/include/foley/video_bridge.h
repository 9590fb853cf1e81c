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

#ifndef FOLEY_VIDEO_BRIDGE_H_
#define FOLEY_VIDEO_BRIDGE_H_

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "foley/backbone.h"
#include "foley/common.h"
#include "foley/nn.h"
#include "foley/tensor_io.h"

namespace foley {

// Patch-level video encoder output, one row per (effective frame, patch),
// frame-major. Patches form a square grid in row-major order.
struct RawVideoTokens {
  Matrix tokens;
  int n_frames_eff = 0;
  int n_patches = 0;
  double fps = 16.0;
  int stride = 2;

  Eigen::Index d_video() const { return tokens.cols(); }
  double effective_fps() const { return fps / stride; }
  double duration_s() const { return n_frames_eff / effective_fps(); }
  void Validate() const;
};

enum class PoolingMode { kFrame, kGrid8, kGrid16 };

std::string_view PoolingModeName(PoolingMode mode);
PoolingMode ParsePoolingMode(std::string_view name);

struct PoolingSpec {
  PoolingMode mode = PoolingMode::kFrame;
  double max_duration_s = 12.0;
  double segment_s = 4.0;

  void Validate() const;
  // 1 for frame pooling, g*g for a g x g grid.
  int TokensPerFrame() const;
};

// Conditioning sequence consumed by the video cross-attention. Positions are
// effective-frame indices; grid cells of one frame share a position.
struct VideoTokens {
  Matrix tokens;
  std::vector<int64_t> positions;
  bool present = true;

  static VideoTokens Absent() { return {Matrix(), {}, false}; }
  Eigen::Index length() const { return tokens.rows(); }
  void Validate() const;
};

// Mean-pools each effective frame (or each grid cell of it) into one token,
// keeping at most max_duration_s of video.
VideoTokens PoolVideo(const RawVideoTokens& raw, const PoolingSpec& spec);

// Token count PoolVideo produces for `duration_s` seconds of video.
int PooledTokenCount(const PoolingSpec& spec, double duration_s,
                     double fps = 16.0, int stride = 2);

// Trainable sublayer of one backbone block.
struct BridgeBlock {
  nn::Linear mlp_w1;          // d_video -> d_video
  nn::Linear mlp_w2;          // d_video -> d_video
  nn::AttentionWeights attn;  // W_q, W_kv, W_o
  nn::LayerNorm norm;         // audio-path pre-norm
};

// One tensor of BridgeParams viewed as flat storage.
struct TensorView {
  std::string name;
  double* data;
  Eigen::Index size;
  std::vector<int64_t> shape;
};

struct ConstTensorView {
  std::string name;
  const double* data;
  Eigen::Index size;
};

struct BridgeParams {
  int d_video = 0;
  std::vector<BridgeBlock> blocks;

  // Same shapes, all zeros (gradient accumulators, optimizer moments).
  BridgeParams ZerosLike() const;
  std::vector<TensorView> Views();
  std::vector<ConstTensorView> Views() const;
  std::vector<NamedTensor> Tensors() const;
  int64_t ScalarCount() const;

  // Per-block trainable group ids, e.g. "bridge.0.W_kv".
  std::vector<std::string> GroupIds() const;
};

inline constexpr const char* kBridgeGroups[] = {"mlp_w1", "mlp_w2", "W_q",
                                                "W_kv",   "W_o",    "norm"};

// Fresh bridge: W_o weight and bias are zero, the norm is the identity and
// the remaining maps are small seeded Gaussians.
BridgeParams InitBridge(const BackboneConfig& config, int d_video,
                        uint64_t seed);
// Overwrites every tensor of `bridge` from archive tensors named
// `prefix` + tensor name.
void LoadBridgeTensors(const TensorArchive& archive, const std::string& prefix,
                       BridgeParams& bridge);

// v + W2 GELU(W1 v + b1) + b2, positions unchanged.
VideoTokens AdapterMlp(const VideoTokens& v, const BridgeBlock& block);

// x + O(Attn(RoPE(W_q norm(x)), RoPE(K(v)), V(v))). `adapted` must already
// have gone through AdapterMlp. Absent video leaves x untouched.
LatentSequence VideoCrossAttention(const LatentSequence& x,
                                   const VideoTokens& adapted,
                                   const BridgeBlock& block, int n_heads,
                                   double rope_base);

// Backbone with a video cross-attention sublayer after the text
// cross-attention of every block (SA -> Tx-CA -> Vid-CA -> FFN).
LatentSequence BridgedForward(const LatentSequence& a_t, double t,
                              const TextTokens& text,
                              const VideoTokens& video,
                              const BackboneParams& backbone,
                              const BridgeParams& bridge,
                              SublayerTrace* trace = nullptr);

// Mean squared error between the bridged prediction and `target`. When grad
// is non-null, accumulates weight * d(loss)/d(bridge) into it. Gradients
// are never formed for backbone tensors or for the video input.
double BridgedLossAndGradient(const LatentSequence& a_t, double t,
                              const TextTokens& text,
                              const VideoTokens& video, const Matrix& target,
                              const BackboneParams& backbone,
                              const BridgeParams& bridge, BridgeParams* grad,
                              double weight = 1.0);

std::set<std::string> TrainableMask(const BackboneParams& backbone,
                                    const BridgeParams& bridge);
std::set<std::string> BackboneTensorIds(const BackboneParams& backbone);

}  // namespace foley

#endif  // FOLEY_VIDEO_BRIDGE_H_
