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
#include <numbers>

namespace foley::nn {

Linear ZerosLike(const Linear& l) {
  return {Matrix::Zero(l.weight.rows(), l.weight.cols()),
          Vector::Zero(l.bias.size())};
}

Matrix LinearForward(const Matrix& x, const Linear& l) {
  Require(x.cols() == l.in_features(), ErrorCode::kShape,
          "linear input width " + std::to_string(x.cols()) + " != " +
              std::to_string(l.in_features()));
  Matrix y = x * l.weight.transpose();
  y.rowwise() += l.bias.transpose();
  return y;
}

Matrix LinearBackward(const Matrix& x, const Linear& l, const Matrix& dy,
                      Linear* grad) {
  if (grad != nullptr) {
    grad->weight.noalias() += dy.transpose() * x;
    grad->bias += dy.colwise().sum().transpose();
  }
  return dy * l.weight;
}

LayerNorm IdentityNorm(Eigen::Index width) {
  return {Vector::Ones(width), Vector::Zero(width)};
}

LayerNorm ZerosLike(const LayerNorm& n) {
  return {Vector::Zero(n.gamma.size()), Vector::Zero(n.beta.size())};
}

Matrix LayerNormForward(const Matrix& x, const LayerNorm& n,
                        LayerNormCache* cache) {
  Require(x.cols() == n.gamma.size(), ErrorCode::kShape,
          "layer norm width mismatch");
  const Eigen::Index d = x.cols();
  Matrix xhat(x.rows(), d);
  Vector rstd(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const auto centered = x.row(i).array() - mean;
    const double var = centered.square().sum() / static_cast<double>(d);
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = centered * rstd(i);
  }
  Matrix y = xhat;
  y.array().rowwise() *= n.gamma.transpose().array();
  y.rowwise() += n.beta.transpose();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Matrix LayerNormBackward(const LayerNormCache& cache, const LayerNorm& n,
                         const Matrix& dy, LayerNorm* grad) {
  if (grad != nullptr) {
    grad->gamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix()
                       .transpose();
    grad->beta += dy.colwise().sum().transpose();
  }
  Matrix dxhat = dy;
  dxhat.array().rowwise() *= n.gamma.transpose().array();
  const double d = static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_d = dxhat.row(i).sum() / d;
    const double mean_dx =
        (dxhat.row(i).array() * cache.xhat.row(i).array()).sum() / d;
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - mean_d -
                                 cache.xhat.row(i).array() * mean_dx);
  }
  return dx;
}

double Gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
}

double GeluDerivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf =
      std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix Gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return Gelu(v); });
}

Matrix ApplyRope(const Matrix& x, std::span<const int64_t> positions,
                 double base, bool inverse) {
  const Eigen::Index width = x.cols();
  Require(width % 2 == 0, ErrorCode::kConfig,
          "rotary width must be even, got " + std::to_string(width));
  Require(static_cast<Eigen::Index>(positions.size()) == x.rows(),
          ErrorCode::kShape, "rotary positions do not match row count");
  const Eigen::Index half = width / 2;
  std::vector<double> freq(half);
  for (Eigen::Index i = 0; i < half; ++i) {
    freq[i] = std::pow(base, -2.0 * static_cast<double>(i) /
                                 static_cast<double>(width));
  }
  const double sign = inverse ? -1.0 : 1.0;
  Matrix out(x.rows(), width);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double p = static_cast<double>(positions[r]);
    for (Eigen::Index i = 0; i < half; ++i) {
      const double angle = sign * p * freq[i];
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double a = x(r, 2 * i);
      const double b = x(r, 2 * i + 1);
      out(r, 2 * i) = a * c - b * s;
      out(r, 2 * i + 1) = a * s + b * c;
    }
  }
  return out;
}

AttentionWeights ZerosLike(const AttentionWeights& w) {
  return {ZerosLike(w.q), ZerosLike(w.kv), ZerosLike(w.o), w.n_heads};
}

namespace {

void CheckAttentionShapes(const Matrix& q_in, const Matrix& kv_in,
                          const AttentionWeights& w,
                          const std::optional<RopePositions>& rope) {
  const Eigen::Index d = w.d_model();
  Require(w.n_heads > 0 && d % w.n_heads == 0, ErrorCode::kConfig,
          "d_model must be divisible by n_heads");
  Require(w.kv.out_features() == 2 * d && w.o.in_features() == d,
          ErrorCode::kShape, "attention projection widths inconsistent");
  Require(q_in.cols() == w.q.in_features(), ErrorCode::kShape,
          "query input width mismatch");
  Require(kv_in.cols() == w.kv.in_features(), ErrorCode::kShape,
          "key/value input width mismatch");
  Require(kv_in.rows() > 0, ErrorCode::kShape, "attention over zero keys");
  if (rope) {
    Require(static_cast<Eigen::Index>(rope->query.size()) == q_in.rows() &&
                static_cast<Eigen::Index>(rope->key.size()) == kv_in.rows(),
            ErrorCode::kShape, "positions do not match sequence lengths");
  }
  CheckFinite(q_in, "attention query input");
  CheckFinite(kv_in, "attention key/value input");
}

void RotateHeads(Matrix& x, std::span<const int64_t> positions, int n_heads,
                 double base, bool inverse) {
  const Eigen::Index dh = x.cols() / n_heads;
  for (int h = 0; h < n_heads; ++h) {
    x.middleCols(h * dh, dh) =
        ApplyRope(x.middleCols(h * dh, dh), positions, base, inverse);
  }
}

void SoftmaxRows(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

struct Projected {
  Matrix q;
  Matrix k;
  Matrix v;
};

Projected Project(const Matrix& q_in, const Matrix& kv_in,
                  const AttentionWeights& w,
                  const std::optional<RopePositions>& rope) {
  const Eigen::Index d = w.d_model();
  Projected p;
  p.q = LinearForward(q_in, w.q);
  const Matrix kv = LinearForward(kv_in, w.kv);
  p.k = kv.leftCols(d);
  p.v = kv.rightCols(d);
  if (rope) {
    RotateHeads(p.q, rope->query, w.n_heads, rope->base, false);
    RotateHeads(p.k, rope->key, w.n_heads, rope->base, false);
  }
  return p;
}

}  // namespace

Matrix AttentionForward(const Matrix& q_in, const Matrix& kv_in,
                        const AttentionWeights& w,
                        const std::optional<RopePositions>& rope,
                        AttentionCache* cache) {
  CheckAttentionShapes(q_in, kv_in, w, rope);
  Projected p = Project(q_in, kv_in, w, rope);
  const Eigen::Index d = w.d_model();
  const Eigen::Index dh = d / w.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix heads(q_in.rows(), d);
  std::vector<Matrix> probs;
  if (cache != nullptr) probs.reserve(w.n_heads);
  for (int h = 0; h < w.n_heads; ++h) {
    Matrix s = p.q.middleCols(h * dh, dh) *
               p.k.middleCols(h * dh, dh).transpose() * scale;
    SoftmaxRows(s);
    heads.middleCols(h * dh, dh).noalias() = s * p.v.middleCols(h * dh, dh);
    if (cache != nullptr) probs.push_back(std::move(s));
  }
  Matrix out = LinearForward(heads, w.o);
  if (cache != nullptr) {
    cache->q_in = q_in;
    cache->kv_in = kv_in;
    cache->q_rot = std::move(p.q);
    cache->k_rot = std::move(p.k);
    cache->values = std::move(p.v);
    cache->probs = std::move(probs);
    cache->heads = std::move(heads);
  }
  return out;
}

AttentionInputGrads AttentionBackward(const AttentionCache& cache,
                                      const AttentionWeights& w,
                                      const std::optional<RopePositions>& rope,
                                      const Matrix& dy, AttentionWeights* grad,
                                      bool need_kv_grad) {
  const Eigen::Index d = w.d_model();
  const Eigen::Index dh = d / w.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix d_heads =
      LinearBackward(cache.heads, w.o, dy, grad ? &grad->o : nullptr);
  Matrix dq(cache.q_rot.rows(), d);
  Matrix dkv(cache.k_rot.rows(), 2 * d);
  for (int h = 0; h < w.n_heads; ++h) {
    const Matrix& p = cache.probs[h];
    const auto d_out = d_heads.middleCols(h * dh, dh);
    dkv.middleCols(d + h * dh, dh).noalias() = p.transpose() * d_out;
    const Matrix dp = d_out * cache.values.middleCols(h * dh, dh).transpose();
    const Vector row_dot = (p.array() * dp.array()).rowwise().sum();
    Matrix ds = p.array() * (dp.colwise() - row_dot).array();
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() =
        ds * cache.k_rot.middleCols(h * dh, dh);
    dkv.middleCols(h * dh, dh).noalias() =
        ds.transpose() * cache.q_rot.middleCols(h * dh, dh);
  }
  if (rope) {
    RotateHeads(dq, rope->query, w.n_heads, rope->base, true);
    Matrix dk = dkv.leftCols(d);
    RotateHeads(dk, rope->key, w.n_heads, rope->base, true);
    dkv.leftCols(d) = dk;
  }
  AttentionInputGrads out;
  out.d_q_in = LinearBackward(cache.q_in, w.q, dq, grad ? &grad->q : nullptr);
  if (need_kv_grad || grad != nullptr) {
    Matrix d_kv_in =
        LinearBackward(cache.kv_in, w.kv, dkv, grad ? &grad->kv : nullptr);
    if (need_kv_grad) out.d_kv_in = std::move(d_kv_in);
  }
  return out;
}

Matrix AttentionLogits(const Matrix& q_in, const Matrix& kv_in,
                       const AttentionWeights& w,
                       const std::optional<RopePositions>& rope, int head) {
  CheckAttentionShapes(q_in, kv_in, w, rope);
  const Projected p = Project(q_in, kv_in, w, rope);
  const Eigen::Index dh = w.d_model() / w.n_heads;
  return p.q.middleCols(head * dh, dh) *
         p.k.middleCols(head * dh, dh).transpose() /
         std::sqrt(static_cast<double>(dh));
}

}  // namespace foley::nn
