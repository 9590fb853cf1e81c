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

#ifndef FOLEY_NN_H_
#define FOLEY_NN_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "foley/common.h"

// Dense layers with hand-written backward passes. Backward functions return
// the input gradient and, when `grad` is non-null, accumulate parameter
// gradients into it. Frozen layers pass nullptr and never materialize
// parameter gradients.
namespace foley::nn {

// y = x W^T + b, W is [out x in].
struct Linear {
  Matrix weight;
  Vector bias;

  Eigen::Index in_features() const { return weight.cols(); }
  Eigen::Index out_features() const { return weight.rows(); }
};

Linear ZerosLike(const Linear& l);
Matrix LinearForward(const Matrix& x, const Linear& l);
Matrix LinearBackward(const Matrix& x, const Linear& l, const Matrix& dy,
                      Linear* grad);

struct LayerNorm {
  Vector gamma;
  Vector beta;
};

inline constexpr double kLayerNormEps = 1e-5;

LayerNorm IdentityNorm(Eigen::Index width);
LayerNorm ZerosLike(const LayerNorm& n);

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

Matrix LayerNormForward(const Matrix& x, const LayerNorm& n,
                        LayerNormCache* cache);
Matrix LayerNormBackward(const LayerNormCache& cache, const LayerNorm& n,
                         const Matrix& dy, LayerNorm* grad);

// Exact (erf) GELU.
double Gelu(double x);
double GeluDerivative(double x);
Matrix Gelu(const Matrix& x);

// Rotates coordinate pairs (2i, 2i+1) of each row by
// position * base^(-2i / width). `inverse` rotates by the negated angle,
// which is also the backward pass of the forward rotation.
Matrix ApplyRope(const Matrix& x, std::span<const int64_t> positions,
                 double base, bool inverse = false);

struct RopePositions {
  std::span<const int64_t> query;
  std::span<const int64_t> key;
  double base = 10000.0;
};

// Multi-head attention with fused key/value projection: kv has 2*d_model
// outputs, the first half keys and the second half values.
struct AttentionWeights {
  Linear q;
  Linear kv;
  Linear o;
  int n_heads = 1;

  Eigen::Index d_model() const { return q.out_features(); }
};

AttentionWeights ZerosLike(const AttentionWeights& w);

struct AttentionCache {
  Matrix q_in;
  Matrix kv_in;
  Matrix q_rot;   // projected (and rotated) queries, [n x d_model]
  Matrix k_rot;   // projected (and rotated) keys, [m x d_model]
  Matrix values;  // [m x d_model]
  std::vector<Matrix> probs;  // per head [n x m]
  Matrix heads;   // concatenated head outputs before O, [n x d_model]
};

Matrix AttentionForward(const Matrix& q_in, const Matrix& kv_in,
                        const AttentionWeights& w,
                        const std::optional<RopePositions>& rope,
                        AttentionCache* cache);

struct AttentionInputGrads {
  Matrix d_q_in;
  Matrix d_kv_in;  // empty unless requested
};

AttentionInputGrads AttentionBackward(const AttentionCache& cache,
                                      const AttentionWeights& w,
                                      const std::optional<RopePositions>& rope,
                                      const Matrix& dy, AttentionWeights* grad,
                                      bool need_kv_grad);

// Pre-logit scores for head `head`, [n x m] (used by property tests).
Matrix AttentionLogits(const Matrix& q_in, const Matrix& kv_in,
                       const AttentionWeights& w,
                       const std::optional<RopePositions>& rope, int head);

}  // namespace foley::nn

#endif  // FOLEY_NN_H_
