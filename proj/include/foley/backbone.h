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

#ifndef FOLEY_BACKBONE_H_
#define FOLEY_BACKBONE_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "foley/common.h"
#include "foley/nn.h"
#include "foley/tensor_io.h"

namespace foley {

// Shape of the frozen latent diffusion transformer. The latent width is
// d_model.
struct BackboneConfig {
  int n_blocks = 6;
  int d_model = 64;
  int n_heads = 4;
  int d_text = 16;
  int s_a_max = 256;
  double rope_base = 10000.0;
  int ffn_mult = 4;
  // Data scale for the input/skip/output scalings around the network.
  // 1.0 makes all three scalings the identity.
  double sigma_data = 0.5;

  void Validate() const;
  int d_head() const { return d_model / n_heads; }
};

// Audio latent a in R^{s_a x d_model} with per-frame positions.
struct LatentSequence {
  Matrix tokens;
  std::vector<int64_t> positions;

  // Positions first, first+1, ...
  static LatentSequence FromTokens(Matrix tokens, int64_t first = 0);

  Eigen::Index length() const { return tokens.rows(); }
  void Validate(const BackboneConfig& config) const;
};

struct TextTokens {
  Matrix tokens;
  bool present = true;

  static TextTokens Absent() { return {Matrix(), false}; }
  void Validate(int d_text) const;
};

// Stand-in for a pretrained text encoder: one seeded pseudo-random unit-scale
// vector per whitespace-separated word, keyed by the word's hash. Empty
// prompts produce an absent condition.
TextTokens EncodePrompt(std::string_view prompt, int d_text);

struct BackboneBlock {
  nn::Linear time_shift;  // t_emb -> residual stream
  nn::LayerNorm norm_self;
  nn::AttentionWeights self_attn;
  nn::LayerNorm norm_text;
  nn::AttentionWeights text_attn;
  nn::LayerNorm norm_ffn;
  nn::Linear ffn_in;
  nn::Linear ffn_out;
};

// Frozen weights. Treated as immutable once InitBackbone returns; every
// consumer takes it by const reference.
struct BackboneParams {
  BackboneConfig config;
  nn::Linear input_proj;
  nn::Linear time_proj;
  Matrix null_text;  // [1 x d_text]
  std::vector<BackboneBlock> blocks;
  nn::LayerNorm final_norm;
  nn::Linear output_proj;

  std::vector<NamedTensor> Tensors() const;
  // fp32 archive; meta carries the config.
  TensorArchive ToArchive() const;
  int64_t ScalarCount() const;
};

BackboneParams InitBackbone(const BackboneConfig& config, uint64_t seed);
// Rebuilds params from an archive written by ToArchive.
BackboneParams BackboneFromArchive(const TensorArchive& archive);

// Sinusoidal features of t in [0, 1]: the first half are sines and the
// second half cosines of t * 1000 * 10000^(-k/half).
Vector TimestepEmbed(double t, int dim);

// Generic multi-head attention used by every sublayer; RoPE is applied to
// projected queries and keys when positions are given.
Matrix Attention(const Matrix& q_in, const Matrix& kv_in,
                 const nn::AttentionWeights& weights,
                 const std::optional<nn::RopePositions>& rope = std::nullopt);

enum class Sublayer {
  kSelfAttention,
  kTextCrossAttention,
  kVideoCrossAttention,
  kFeedForward,
};

std::string_view SublayerName(Sublayer s);

struct SublayerEvent {
  int block;
  Sublayer sublayer;
  bool operator==(const SublayerEvent&) const = default;
};

// Records sublayer invocations when non-null.
using SublayerTrace = std::vector<SublayerEvent>;

// Building blocks of the residual stream, shared by the backbone-only and
// bridged forward passes. Each returns x + sublayer(norm(x)); caches are
// optional and only filled for backward.
struct AttentionSublayerCache {
  nn::LayerNormCache norm;
  nn::AttentionCache attn;
};

struct FeedForwardCache {
  nn::LayerNormCache norm;
  Matrix normed;
  Matrix pre_activation;
  Matrix hidden;
};

struct OutputCache {
  nn::LayerNormCache norm;
  Matrix normed;
};

// Returns the timestep embedding after time_proj.
Vector ConditionTimestep(double t, const BackboneParams& params);
// Scalings that wrap the network F as
//   v(a_t, t) = c_skip * a_t + c_out * F(c_in * a_t, t)
// so that c_skip * a_t is the best linear v-predictor for data of scale
// sigma_data and F's target has unit variance.
struct Preconditioning {
  double c_in = 1.0;
  double c_skip = 0.0;
  double c_out = 1.0;
};
Preconditioning PreconditionAt(double t, double sigma_data);

Matrix EmbedInput(const Matrix& a_t, const Vector& t_emb,
                  const BackboneParams& params);
Matrix AddBlockTime(const Matrix& x, const Vector& t_emb,
                    const BackboneBlock& block);
Matrix SelfAttentionSublayer(const Matrix& x,
                             std::span<const int64_t> positions,
                             const BackboneBlock& block, double rope_base,
                             AttentionSublayerCache* cache);
// Keys/values the text sublayer attends to (the null token when absent).
const Matrix& TextMemory(const TextTokens& text, const BackboneParams& params);
Matrix TextSublayer(const Matrix& x, const Matrix& text_memory,
                    const BackboneBlock& block, AttentionSublayerCache* cache);
Matrix FeedForwardSublayer(const Matrix& x, const BackboneBlock& block,
                           FeedForwardCache* cache);
Matrix OutputHead(const Matrix& x, const BackboneParams& params,
                  OutputCache* cache);

// Input-gradient backward passes of the frozen sublayers.
Matrix SelfAttentionSublayerBackward(const AttentionSublayerCache& cache,
                                     std::span<const int64_t> positions,
                                     const BackboneBlock& block,
                                     double rope_base, const Matrix& dy);
Matrix TextSublayerBackward(const AttentionSublayerCache& cache,
                            const BackboneBlock& block, const Matrix& dy);
Matrix FeedForwardSublayerBackward(const FeedForwardCache& cache,
                                   const BackboneBlock& block,
                                   const Matrix& dy);
Matrix OutputHeadBackward(const OutputCache& cache,
                          const BackboneParams& params, const Matrix& dy);

// One frozen block: SA -> Tx-CA -> FFN with the block's time shift applied
// first.
LatentSequence BackboneBlockForward(const LatentSequence& x,
                                    const TextTokens& text,
                                    const BackboneParams& params, int block,
                                    const Vector& t_emb,
                                    SublayerTrace* trace = nullptr);

// Backbone-only velocity prediction.
LatentSequence BackboneForward(const LatentSequence& a_t, double t,
                               const TextTokens& text,
                               const BackboneParams& params,
                               SublayerTrace* trace = nullptr);

}  // namespace foley

#endif  // FOLEY_BACKBONE_H_
