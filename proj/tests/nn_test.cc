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

#include "foley/nn.h"

#include <cmath>
#include <functional>
#include <vector>

#include "gtest/gtest.h"

#include "foley/rng.h"
#include "test_util.h"

namespace foley::nn {
namespace {

using ::foley::testing::MaxAbsDiff;
using ::foley::testing::ThrowsCode;

Linear RandomLinear(int in, int out, RngStream& rng) {
  return {rng.NormalMatrix(out, in) / std::sqrt(in),
          Vector(rng.NormalMatrix(out, 1).col(0)) * 0.1};
}

AttentionWeights RandomAttention(int d_q_in, int d_kv_in, int d_model,
                                 int heads, RngStream& rng) {
  return {RandomLinear(d_q_in, d_model, rng),
          RandomLinear(d_kv_in, 2 * d_model, rng),
          RandomLinear(d_model, d_model, rng), heads};
}

// Central differences of a scalar function over every entry of x.
Matrix NumericGradient(const std::function<double(const Matrix&)>& f,
                       Matrix x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + h;
    const double up = f(x);
    x.data()[i] = orig - h;
    const double down = f(x);
    x.data()[i] = orig;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

TEST(LinearTest, BackwardMatchesFiniteDifferences) {
  RngStream rng(1);
  const Linear l = RandomLinear(5, 3, rng);
  const Matrix x = rng.NormalMatrix(4, 5);
  const Matrix w = rng.NormalMatrix(4, 3);  // loss = sum(w .* y)
  Linear grad = ZerosLike(l);
  const Matrix dx = LinearBackward(x, l, w, &grad);
  const Matrix num_dx = NumericGradient(
      [&](const Matrix& xx) {
        return (LinearForward(xx, l).array() * w.array()).sum();
      },
      x);
  EXPECT_LT(MaxAbsDiff(dx, num_dx), 1e-8);
  const Matrix num_dw = NumericGradient(
      [&](const Matrix& ww) {
        Linear m = l;
        m.weight = ww;
        return (LinearForward(x, m).array() * w.array()).sum();
      },
      l.weight);
  EXPECT_LT(MaxAbsDiff(grad.weight, num_dw), 1e-8);
}

TEST(LayerNormTest, NormalizesRows) {
  RngStream rng(2);
  const Matrix x = rng.NormalMatrix(3, 8) * 4.0;
  const Matrix y = LayerNormForward(x, IdentityNorm(8), nullptr);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(i).squaredNorm() / 8.0, 1.0, 1e-5);
  }
}

TEST(LayerNormTest, BackwardMatchesFiniteDifferences) {
  RngStream rng(3);
  LayerNorm n{Vector(rng.NormalMatrix(6, 1).col(0)),
              Vector(rng.NormalMatrix(6, 1).col(0))};
  const Matrix x = rng.NormalMatrix(3, 6);
  const Matrix w = rng.NormalMatrix(3, 6);
  LayerNormCache cache;
  LayerNormForward(x, n, &cache);
  LayerNorm grad = ZerosLike(n);
  const Matrix dx = LayerNormBackward(cache, n, w, &grad);
  const Matrix num = NumericGradient(
      [&](const Matrix& xx) {
        return (LayerNormForward(xx, n, nullptr).array() * w.array()).sum();
      },
      x);
  EXPECT_LT(MaxAbsDiff(dx, num), 1e-7);
}

TEST(GeluTest, DerivativeMatchesFiniteDifferences) {
  for (double x : {-3.0, -1.0, -0.1, 0.0, 0.4, 2.5}) {
    const double h = 1e-6;
    EXPECT_NEAR(GeluDerivative(x), (Gelu(x + h) - Gelu(x - h)) / (2 * h),
                1e-8);
  }
  EXPECT_EQ(Gelu(0.0), 0.0);
}

TEST(RopeTest, OddWidthIsConfigError) {
  const std::vector<int64_t> pos = {0};
  EXPECT_TRUE(ThrowsCode([&] { ApplyRope(Matrix::Ones(1, 3), pos, 100.0); },
                         ErrorCode::kConfig));
}

TEST(RopeTest, InverseUndoesForward) {
  RngStream rng(4);
  const Matrix x = rng.NormalMatrix(5, 8);
  const std::vector<int64_t> pos = {0, 3, 7, 11, 40};
  const Matrix back =
      ApplyRope(ApplyRope(x, pos, 10000.0), pos, 10000.0, /*inverse=*/true);
  EXPECT_LT(MaxAbsDiff(back, x), 1e-12);
}

TEST(AttentionTest, BackwardMatchesFiniteDifferencesWithRope) {
  RngStream rng(5);
  const AttentionWeights w = RandomAttention(8, 6, 8, 2, rng);
  const Matrix q_in = rng.NormalMatrix(3, 8);
  const Matrix kv_in = rng.NormalMatrix(4, 6);
  const Matrix wsum = rng.NormalMatrix(3, 8);
  const std::vector<int64_t> qp = {0, 1, 2};
  const std::vector<int64_t> kp = {0, 0, 1, 3};
  const RopePositions rope{qp, kp, 50.0};
  AttentionCache cache;
  AttentionForward(q_in, kv_in, w, rope, &cache);
  AttentionWeights grad = ZerosLike(w);
  const auto g = AttentionBackward(cache, w, rope, wsum, &grad, true);

  auto loss_q = [&](const Matrix& q) {
    return (AttentionForward(q, kv_in, w, rope, nullptr).array() *
            wsum.array()).sum();
  };
  auto loss_kv = [&](const Matrix& kv) {
    return (AttentionForward(q_in, kv, w, rope, nullptr).array() *
            wsum.array()).sum();
  };
  EXPECT_LT(MaxAbsDiff(g.d_q_in, NumericGradient(loss_q, q_in)), 1e-7);
  EXPECT_LT(MaxAbsDiff(g.d_kv_in, NumericGradient(loss_kv, kv_in)), 1e-7);

  auto loss_wkv = [&](const Matrix& m) {
    AttentionWeights ww = w;
    ww.kv.weight = m;
    return (AttentionForward(q_in, kv_in, ww, rope, nullptr).array() *
            wsum.array()).sum();
  };
  EXPECT_LT(MaxAbsDiff(grad.kv.weight, NumericGradient(loss_wkv, w.kv.weight)),
            1e-7);
}

}  // namespace
}  // namespace foley::nn
