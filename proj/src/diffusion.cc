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

#include "foley/diffusion.h"

#include <chrono>
#include <cmath>
#include <numbers>

namespace foley {
namespace {

void RequireSameShape(const Matrix& a, const Matrix& b, const char* what) {
  Require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShape,
          std::string(what) + ": shapes differ (" + std::to_string(a.rows()) +
              "x" + std::to_string(a.cols()) + " vs " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
}

void Accumulate(BridgeParams& into, const BridgeParams& from) {
  auto dst = into.Views();
  auto src = from.Views();
  for (size_t i = 0; i < dst.size(); ++i) {
    Eigen::Map<Eigen::VectorXd>(dst[i].data, dst[i].size) +=
        Eigen::Map<const Eigen::VectorXd>(src[i].data, src[i].size);
  }
}

}  // namespace

NoiseSchedulePoint Schedule(double t) {
  Require(t >= 0.0 && t <= 1.0, ErrorCode::kDomain,
          "schedule time " + std::to_string(t) + " outside [0, 1]");
  // Exact endpoints; cos(pi/2) is not exactly zero in floating point.
  if (t == 0.0) return {0.0, 1.0, 0.0};
  if (t == 1.0) return {1.0, 0.0, 1.0};
  const double angle = 0.5 * std::numbers::pi * t;
  return {t, std::cos(angle), std::sin(angle)};
}

LatentSequence Corrupt(const LatentSequence& a0, const Matrix& eps,
                       const NoiseSchedulePoint& p) {
  RequireSameShape(a0.tokens, eps, "corrupt");
  return {p.alpha * a0.tokens + p.sigma * eps, a0.positions};
}

Matrix VTarget(const Matrix& a0, const Matrix& eps,
               const NoiseSchedulePoint& p) {
  RequireSameShape(a0, eps, "v_target");
  return p.alpha * eps - p.sigma * a0;
}

void TrainConfig::Validate() const {
  Require(token_drop_p >= 0.0 && token_drop_p < 1.0 + 1e-12,
          ErrorCode::kConfig, "token_drop_p must be in [0, 1]");
  Require(lr > 0.0, ErrorCode::kConfig, "lr must be positive");
  Require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
  Require(steps >= 0, ErrorCode::kConfig, "steps must be >= 0");
}

SampleDraw DrawSample(const RngStream& rng, int index, Eigen::Index rows,
                      Eigen::Index cols, double token_drop_p) {
  const RngStream s = rng.Substream(streams::kExample, index);
  SampleDraw d;
  d.t = s.Substream(streams::kTimestep).Uniform();
  d.eps = s.Substream(streams::kNoise).NormalMatrix(rows, cols);
  d.drop = s.Substream(streams::kTokenDrop).Bernoulli(token_drop_p);
  return d;
}

StepResult TrainingStep(std::span<const TrainingExample* const> batch,
                        const BackboneParams& backbone,
                        const BridgeParams& bridge, const TrainConfig& cfg,
                        const RngStream& rng) {
  Require(!batch.empty(), ErrorCode::kShape, "empty training batch");
  const int n = static_cast<int>(batch.size());
  const double weight = 1.0 / n;
  std::vector<BridgeParams> grads(n);
  std::vector<double> losses(n);
  std::vector<SampleDraw> draws(n);
  ParallelFor(n, [&](int i) {
    const TrainingExample& ex = *batch[i];
    draws[i] = DrawSample(rng, i, ex.a0.tokens.rows(), ex.a0.tokens.cols(),
                          cfg.token_drop_p);
    const SampleDraw& d = draws[i];
    const NoiseSchedulePoint p = Schedule(d.t);
    const LatentSequence a_t = Corrupt(ex.a0, d.eps, p);
    const Matrix target = VTarget(ex.a0.tokens, d.eps, p);
    const VideoTokens& video = d.drop ? VideoTokens::Absent() : ex.video;
    const TextTokens text =
        d.drop && cfg.drop_text ? TextTokens::Absent() : ex.text;
    grads[i] = bridge.ZerosLike();
    try {
      losses[i] = BridgedLossAndGradient(a_t, d.t, text, video, target,
                                         backbone, bridge, &grads[i], weight);
    } catch (const FoleyError& e) {
      if (e.code() != ErrorCode::kNumeric) throw;
      Fail(ErrorCode::kNumeric, "batch sample " + std::to_string(i) +
                                    " (t=" + std::to_string(d.t) +
                                    "): " + e.what());
    }
  });

  StepResult result;
  result.grads = bridge.ZerosLike();
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(losses[i])) {
      Fail(ErrorCode::kNumeric, "non-finite loss at batch sample " +
                                    std::to_string(i) + " (t=" +
                                    std::to_string(draws[i].t) + ")");
    }
    result.loss += losses[i] * weight;
    Accumulate(result.grads, grads[i]);
    result.dropped.push_back(draws[i].drop);
    result.timesteps.push_back(draws[i].t);
    if (draws[i].drop) ++result.drop_count;
  }
  return result;
}

AdamOptimizer::AdamOptimizer(const BridgeParams& like, double lr, double beta1,
                             double beta2, double eps)
    : lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(like.ZerosLike()),
      v_(like.ZerosLike()) {}

void AdamOptimizer::Step(BridgeParams& params, const BridgeParams& grads) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  auto p = params.Views();
  const auto g = grads.Views();
  auto m = m_.Views();
  auto v = v_.Views();
  for (size_t k = 0; k < p.size(); ++k) {
    for (Eigen::Index i = 0; i < p[k].size; ++i) {
      const double gi = g[k].data[i];
      m[k].data[i] = beta1_ * m[k].data[i] + (1.0 - beta1_) * gi;
      v[k].data[i] = beta2_ * v[k].data[i] + (1.0 - beta2_) * gi * gi;
      const double m_hat = m[k].data[i] / c1;
      const double v_hat = v[k].data[i] / c2;
      p[k].data[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

std::vector<NamedTensor> AdamOptimizer::StateTensors() const {
  std::vector<NamedTensor> out;
  for (const auto& t : m_.Tensors()) {
    out.push_back({"adam.m." + t.name, t.shape, t.values});
  }
  for (const auto& t : v_.Tensors()) {
    out.push_back({"adam.v." + t.name, t.shape, t.values});
  }
  out.push_back({"adam.step", {1}, {static_cast<double>(steps_)}});
  return out;
}

void AdamOptimizer::LoadState(const TensorArchive& archive) {
  LoadBridgeTensors(archive, "adam.m.", m_);
  LoadBridgeTensors(archive, "adam.v.", v_);
  steps_ = static_cast<int64_t>(archive.Get("adam.step").values.at(0));
}

Trainer::Trainer(const BackboneParams& backbone, BridgeParams bridge,
                 TrainConfig cfg, std::vector<TrainingExample> data)
    : backbone_(backbone),
      bridge_(std::move(bridge)),
      cfg_(cfg),
      data_(std::move(data)),
      optimizer_(bridge_, cfg.lr) {
  cfg_.Validate();
  Require(!data_.empty(), ErrorCode::kInput, "no training examples");
}

void Trainer::Run(
    int end_step,
    const std::function<void(const StepLog&, const StepResult&)>& on_step) {
  const RngStream root(cfg_.seed);
  std::vector<const TrainingExample*> batch(cfg_.batch_size);
  for (; next_step_ < end_step; ++next_step_) {
    const auto start = std::chrono::steady_clock::now();
    RngStream pick = root.Substream(streams::kBatch, next_step_);
    for (auto& b : batch) b = &data_[pick.Below(data_.size())];
    const StepResult r =
        TrainingStep(batch, backbone_, bridge_, cfg_,
                     root.Substream(streams::kSample, next_step_));
    optimizer_.Step(bridge_, r.grads);
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
    if (on_step) on_step({next_step_, r.loss, ms, r.drop_count}, r);
  }
}

Matrix CfgCombine(const Matrix& v_cond, const Matrix& v_uncond, double scale) {
  RequireSameShape(v_cond, v_uncond, "cfg_combine");
  return v_uncond + scale * (v_cond - v_uncond);
}

Matrix IntegrateDdim(const VelocityFn& velocity, Matrix init, int n_steps) {
  Require(n_steps >= 1, ErrorCode::kDomain, "sampler needs n_steps >= 1");
  Matrix a = std::move(init);
  for (int k = 0; k < n_steps; ++k) {
    const NoiseSchedulePoint cur = Schedule(1.0 - static_cast<double>(k) /
                                                      n_steps);
    const NoiseSchedulePoint next =
        Schedule(k + 1 == n_steps
                     ? 0.0
                     : 1.0 - static_cast<double>(k + 1) / n_steps);
    const Matrix v = velocity(a, cur.t);
    CheckFinite(v, "predicted velocity");
    const Matrix a0_hat = cur.alpha * a - cur.sigma * v;
    const Matrix eps_hat = cur.sigma * a + cur.alpha * v;
    a = next.alpha * a0_hat + next.sigma * eps_hat;
  }
  return a;
}

LatentSequence Sample(const BackboneParams& backbone,
                      const BridgeParams& bridge, const TextTokens& text,
                      const VideoTokens& video, int s_a, int n_steps,
                      double cfg_scale, const RngStream& rng) {
  Require(n_steps >= 1, ErrorCode::kDomain, "sampler needs n_steps >= 1");
  Require(s_a >= 1 && s_a <= backbone.config.s_a_max, ErrorCode::kShape,
          "sample length outside [1, s_a_max]");
  LatentSequence shell = LatentSequence::FromTokens(Matrix(s_a, 1));
  const std::vector<int64_t> positions = shell.positions;
  const VideoTokens absent = VideoTokens::Absent();
  const bool guided = video.present && cfg_scale != 1.0;
  auto velocity = [&](const Matrix& a, double t) -> Matrix {
    const LatentSequence a_t{a, positions};
    if (!video.present) {
      return BridgedForward(a_t, t, text, absent, backbone, bridge).tokens;
    }
    Matrix cond = BridgedForward(a_t, t, text, video, backbone, bridge).tokens;
    if (!guided) return cond;
    const Matrix uncond =
        BridgedForward(a_t, t, text, absent, backbone, bridge).tokens;
    return CfgCombine(cond, uncond, cfg_scale);
  };
  Matrix init = RngStream(rng).Substream(streams::kSample)
                    .NormalMatrix(s_a, backbone.config.d_model);
  return {IntegrateDdim(velocity, std::move(init), n_steps), positions};
}

double VelocityMse(std::span<const TrainingExample> examples,
                   const BackboneParams& backbone, const BridgeParams& bridge,
                   bool with_video, const RngStream& rng, int draws) {
  Require(!examples.empty() && draws >= 1, ErrorCode::kInput,
          "velocity MSE needs examples");
  const int n = static_cast<int>(examples.size());
  std::vector<double> per(n, 0.0);
  ParallelFor(n, [&](int i) {
    const TrainingExample& ex = examples[i];
    const RngStream clip_rng = rng.Substream(streams::kEval, i);
    for (int k = 0; k < draws; ++k) {
      const SampleDraw d = DrawSample(clip_rng, k, ex.a0.tokens.rows(),
                                      ex.a0.tokens.cols(), 0.0);
      const NoiseSchedulePoint p = Schedule(d.t);
      const LatentSequence a_t = Corrupt(ex.a0, d.eps, p);
      const Matrix target = VTarget(ex.a0.tokens, d.eps, p);
      per[i] += BridgedLossAndGradient(
          a_t, d.t, ex.text, with_video ? ex.video : VideoTokens::Absent(),
          target, backbone, bridge, nullptr);
    }
  });
  double total = 0.0;
  for (double v : per) total += v;
  return total / (static_cast<double>(n) * draws);
}

}  // namespace foley
