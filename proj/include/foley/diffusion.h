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

#ifndef FOLEY_DIFFUSION_H_
#define FOLEY_DIFFUSION_H_

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "foley/backbone.h"
#include "foley/common.h"
#include "foley/rng.h"
#include "foley/tensor_io.h"
#include "foley/video_bridge.h"

namespace foley {

struct NoiseSchedulePoint {
  double t;
  double alpha;
  double sigma;
};

// Cosine schedule: alpha = cos(pi t / 2), sigma = sin(pi t / 2).
NoiseSchedulePoint Schedule(double t);

// a_t = alpha a0 + sigma eps.
LatentSequence Corrupt(const LatentSequence& a0, const Matrix& eps,
                       const NoiseSchedulePoint& p);
// v = alpha eps - sigma a0, so that a0 = alpha a_t - sigma v.
Matrix VTarget(const Matrix& a0, const Matrix& eps,
               const NoiseSchedulePoint& p);

struct TrainConfig {
  double token_drop_p = 0.10;
  int batch_size = 8;
  int steps = 1000;
  double lr = 1e-3;
  double cfg_scale_eval = 2.0;
  uint64_t seed = 0;
  // Also replace the text condition with the null prompt on dropped samples.
  bool drop_text = false;

  void Validate() const;
};

struct TrainingExample {
  LatentSequence a0;
  TextTokens text;
  VideoTokens video;
};

struct StepResult {
  double loss = 0.0;
  BridgeParams grads;
  int drop_count = 0;
  std::vector<bool> dropped;
  std::vector<double> timesteps;
};

// Per-sample draws of one training step. Each sample i owns substream i of
// `rng`, with independent timestep, noise and drop substreams.
struct SampleDraw {
  double t;
  Matrix eps;
  bool drop;
};
SampleDraw DrawSample(const RngStream& rng, int index, Eigen::Index rows,
                      Eigen::Index cols, double token_drop_p);

// Batch-mean v-prediction MSE and its gradient over the bridge tensors.
// With probability token_drop_p a sample's video condition is replaced by
// its absent form.
StepResult TrainingStep(std::span<const TrainingExample* const> batch,
                        const BackboneParams& backbone,
                        const BridgeParams& bridge, const TrainConfig& cfg,
                        const RngStream& rng);

// Adam with zero weight decay over every bridge tensor.
class AdamOptimizer {
 public:
  AdamOptimizer(const BridgeParams& like, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void Step(BridgeParams& params, const BridgeParams& grads);

  int64_t steps_taken() const { return steps_; }
  // Moments under "adam.m." / "adam.v." prefixes plus the step counter.
  std::vector<NamedTensor> StateTensors() const;
  void LoadState(const TensorArchive& archive);

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  int64_t steps_ = 0;
  BridgeParams m_;
  BridgeParams v_;
};

struct StepLog {
  int step;
  double loss;
  double wall_ms;
  int drop_count;
};

// Owns the trainable state and runs optimization steps. The batch for step
// s and its per-sample draws depend only on (cfg.seed, s), so a run resumed
// from a checkpoint at step s reproduces the uninterrupted trajectory.
class Trainer {
 public:
  Trainer(const BackboneParams& backbone, BridgeParams bridge, TrainConfig cfg,
          std::vector<TrainingExample> data);

  // Runs steps [next_step(), end_step). on_step sees every step's result
  // before the update is applied.
  void Run(int end_step,
           const std::function<void(const StepLog&, const StepResult&)>&
               on_step = {});

  int next_step() const { return next_step_; }
  void set_next_step(int step) { next_step_ = step; }
  const BridgeParams& bridge() const { return bridge_; }
  BridgeParams& mutable_bridge() { return bridge_; }
  AdamOptimizer& optimizer() { return optimizer_; }
  const AdamOptimizer& optimizer() const { return optimizer_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  const BackboneParams& backbone_;
  BridgeParams bridge_;
  TrainConfig cfg_;
  std::vector<TrainingExample> data_;
  AdamOptimizer optimizer_;
  int next_step_ = 0;
};

// Classifier-free guidance: uncond + scale (cond - uncond).
Matrix CfgCombine(const Matrix& v_cond, const Matrix& v_uncond, double scale);

using VelocityFn = std::function<Matrix(const Matrix& a_t, double t)>;

// Deterministic DDIM integration in v-parameterization over the uniform grid
// t = 1, 1 - 1/n, ..., 0 starting from `init` at t = 1.
Matrix IntegrateDdim(const VelocityFn& velocity, Matrix init, int n_steps);

// Draws the t = 1 noise from `rng` and integrates the bridged model. Video
// guidance contrasts the video-conditioned and video-absent predictions.
LatentSequence Sample(const BackboneParams& backbone,
                      const BridgeParams& bridge, const TextTokens& text,
                      const VideoTokens& video, int s_a, int n_steps,
                      double cfg_scale, const RngStream& rng);

// Mean v-prediction MSE over examples with `draws` (t, eps) draws each.
// Draws come from `rng` and are identical with and without video.
double VelocityMse(std::span<const TrainingExample> examples,
                   const BackboneParams& backbone, const BridgeParams& bridge,
                   bool with_video, const RngStream& rng, int draws = 4);

}  // namespace foley

#endif  // FOLEY_DIFFUSION_H_
