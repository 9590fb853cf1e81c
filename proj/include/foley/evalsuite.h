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


#ifndef FOLEY_EVALSUITE_H_
#define FOLEY_EVALSUITE_H_

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "foley/backbone.h"
#include "foley/common.h"
#include "foley/synthdata.h"
#include "foley/video_bridge.h"

namespace foley {

struct EmbeddingSet {
  Matrix embeddings;  // [n x d]
  std::string provider_id;
};

struct PosteriorSet {
  Matrix posteriors;  // [n x c], rows on the simplex

  void Validate() const;
};

inline constexpr double kFdEigenTolerance = 1e-8;
inline constexpr double kKlClamp = 1e-10;

double FrechetDistance(const EmbeddingSet& a, const EmbeddingSet& b);

// (1/n) sum_i KL(ref_i || gen_i), gen clamped below at kKlClamp.
double MeanKl(const PosteriorSet& ref, const PosteriorSet& gen);

struct IbPair {
  std::string clip_id;
  Vector audio;
  Matrix frames;  // one embedding per sampled frame
};

double IbScore(std::span<const IbPair> pairs);

inline constexpr double kDefaultOnsetThreshold = 0.25;

// Onset times (seconds) of a latent sampled at `fps` frames per second.
std::vector<double> OnsetDetect(const Matrix& latent, double threshold,
                                double fps);

inline constexpr double kDesyncWindowS = 1.0;
inline constexpr double kDesyncPenaltyS = 1.0;

double Desync(std::span<const double> pred, std::span<const double> truth);

struct EmbeddingProvider {
  std::string id;
  std::function<Vector(const Matrix& latent)> embed;
};

struct ClassifierProvider {
  std::string id;
  std::function<Vector(const Matrix& latent)> posterior;
};

struct IbProvider {
  std::string id;
  std::function<Vector(const Matrix& latent)> audio;
  std::function<Vector(const Vector& frame_token)> image;
  int frame_stride = 8;  // effective frames between sampled frames
};

// Slots: embedders "vgg", "panns", "passt"; classifiers "panns", "passt".
struct Providers {
  std::map<std::string, EmbeddingProvider> embedders;
  std::map<std::string, ClassifierProvider> classifiers;
  std::optional<IbProvider> ib;
};

Providers ToyProviders(const SynthSpec& spec);

struct EvalConfig {
  double cfg_scale = 2.0;
  int n_steps = 25;
  uint64_t seed = 0;
  bool no_text = false;
  bool use_video = true;
  PoolingSpec pooling;
  double onset_threshold = kDefaultOnsetThreshold;
  double latent_fps = 8.0;
  // Score the reference latents against themselves instead of sampling.
  bool ground_truth = false;
  // Hash of the enclosing run configuration, folded into the report hash.
  std::string run_config_hash;

  std::string Canonical() const;
  std::string Hash() const;
};

struct EvalItem {
  std::string id;
  SynthClip clip;
};

struct EvalReport {
  std::map<std::string, double> metrics;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Matrix> generated;  // one latent per clip, manifest order

  std::string ToKeyValue() const;
  std::string ToTableRow() const;
};

inline constexpr const char* kReportColumns[] = {
    "KL-PANNs", "KL-PaSST", "IB", "FD-VGG", "FD-PANNs", "FD-PaSST", "DeSync"};

EvalReport Evaluate(std::span<const EvalItem> items,
                    const BackboneParams& backbone, const BridgeParams& bridge,
                    const Providers& providers, const EvalConfig& cfg);

}  // namespace foley

#endif  // FOLEY_EVALSUITE_H_
