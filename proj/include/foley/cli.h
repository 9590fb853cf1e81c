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

#ifndef FOLEY_CLI_H_
#define FOLEY_CLI_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "foley/backbone.h"
#include "foley/curation.h"
#include "foley/diffusion.h"
#include "foley/evalsuite.h"
#include "foley/synthdata.h"
#include "foley/video_bridge.h"

namespace foley {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIncompatible = 3;

// Everything a run needs, read from an INI file with sections [model],
// [video], [data], [train], [eval] and [paths]. Unset keys keep their
// defaults; unknown sections or keys are configuration errors.
struct RunConfig {
  BackboneConfig model;
  uint64_t backbone_seed = 1;
  uint64_t bridge_seed = 2;
  PoolingSpec pooling;
  // latent_dim mirrors model.d_model.
  SynthSpec data;
  TrainConfig train;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  EvalConfig eval;
  std::string train_manifest = "data/train.jsonl";
  std::string eval_manifest = "data/eval.jsonl";
  std::string run_dir = "run";
  // Relative paths resolve against this directory.
  std::filesystem::path base_dir = ".";

  void Validate() const;
  std::filesystem::path Resolve(const std::string& p) const;

  // Sorted "section.key=value" lines for the given sections (all sections
  // except [paths] when empty).
  std::string Canonical(const std::vector<std::string>& sections = {}) const;
  // SHA-256 of Canonical(): run identity, reported by eval.
  std::string Hash() const;
  // Covers the sections that fix parameter shapes and the frozen backbone;
  // checked whenever a checkpoint is loaded.
  std::string ModelHash() const;
  // Covers everything that shapes a training trajectory; checked on resume.
  std::string TrainHash() const;
};

// Parses INI text; `overrides` are "section.key=value" strings applied after
// the file.
RunConfig ParseRunConfig(std::string_view ini_text,
                         const std::vector<std::string>& overrides = {});
RunConfig LoadRunConfig(const std::filesystem::path& path,
                        const std::vector<std::string>& overrides = {});
// Every recognized "section.key".
std::vector<std::string> RunConfigKeys();

BackboneParams BuildBackbone(const RunConfig& cfg);

// Trainable-only checkpoint: bridge tensors, Adam state and hashes. The
// model sections of the config ride along in the metadata so sampling can
// rebuild the frozen backbone.
struct Checkpoint {
  BridgeParams bridge;
  TensorArchive optimizer_state;
  int step = 0;
  std::string model_hash;
  std::string train_hash;
  nlohmann::json model_config;
};
TensorArchive CheckpointToArchive(const BridgeParams& bridge,
                                  const AdamOptimizer& optimizer, int step,
                                  const RunConfig& cfg);
Checkpoint LoadCheckpoint(const std::filesystem::path& path,
                          const BackboneConfig& model, int d_video);
// Model and video sections of a checkpoint's embedded config.
RunConfig CheckpointRunConfig(const std::filesystem::path& path);

// Toy scorers for curation: "latent_energy", "av_consistency",
// "aesthetics". Each loads the record's clip relative to `root`.
std::map<std::string, Scorer> ToyScorers(const std::filesystem::path& root);
// Registered curation stage types.
inline constexpr const char* kStageTypes[] = {"silence", "score"};

// Entry point for the foley_bridge tool. args excludes the program name.
int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err);

}  // namespace foley

#endif  // FOLEY_CLI_H_
