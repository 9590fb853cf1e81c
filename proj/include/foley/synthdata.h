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


#ifndef FOLEY_SYNTHDATA_H_
#define FOLEY_SYNTHDATA_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "foley/backbone.h"
#include "foley/common.h"
#include "foley/curation.h"
#include "foley/tensor_io.h"
#include "foley/video_bridge.h"

namespace foley {

struct SynthSpec {
  int latent_dim = 64;  // must equal the backbone d_model
  int d_video = 32;
  int n_patches = 64;  // 8 x 8
  int n_classes = 4;
  double fps = 16.0;
  int stride = 2;
  // Latent frames per second. Equal to the effective video frame rate so
  // one latent frame lines up with one effective video frame.
  double latent_fps = 8.0;
  double noise_floor = 0.05;
  double amplitude = 2.0;
  double flash = 1.5;
  double duration_s = 4.0;
  int min_events = 1;
  int max_events = 4;
  // Class signatures and video patterns are shared by every corpus.
  uint64_t world_seed = 2026;

  void Validate() const;
  double effective_fps() const { return fps / stride; }
};

std::string ClassName(int class_id);
// Inverse of ClassName; -1 when the prompt names no class.
int ClassFromPrompt(const std::string& prompt);

struct SynthClip {
  RawVideoTokens video;
  LatentSequence a0;
  std::vector<double> onsets_s;
  std::string prompt;
  int class_id = 0;
  double duration_s = 0.0;
};

SynthClip GenClip(uint64_t seed, double duration_s, int n_events, int class_id,
                  const SynthSpec& spec);

// Unit-norm latent signature and decay time (in latent frames) of a class.
Vector ClassSignature(int class_id, const SynthSpec& spec);
double ClassDecayFrames(int class_id);
// Unit-norm video pattern of a class. Channel 0 is zero; events add it
// together with a shared flash on channel 0.
Vector ClassVideoPattern(int class_id, const SynthSpec& spec);

struct Corpus {
  Manifest train;
  Manifest eval;
};

inline constexpr double kDefaultSplitRatio = 0.9;

// Clip i of a corpus: id "clip_%05d", class i mod n_classes, events and
// seed derived from (seed, i).
std::string ClipId(int index);
int ClipIndex(const std::string& id);
SynthClip GenCorpusClip(uint64_t corpus_seed, int index,
                        const SynthSpec& spec);

Corpus GenCorpus(int n_clips, uint64_t seed, double split_ratio,
                 const SynthSpec& spec);

// Writes clips/<id>.bin (+ sidecar) under root, plus train.jsonl and
// eval.jsonl.
Corpus WriteCorpus(const std::filesystem::path& root, int n_clips,
                   uint64_t seed, double split_ratio, const SynthSpec& spec);

TensorArchive ClipToArchive(const SynthClip& clip);
SynthClip ClipFromArchive(const TensorArchive& archive);
void SaveClip(const std::filesystem::path& path, const SynthClip& clip);
SynthClip LoadClip(const std::filesystem::path& path);

// Toy sinusoid-bank rendering of a latent for listening. Channel j drives a
// partial at 110 * 2^(j / 12) Hz (folded below Nyquist) with its amplitude
// linearly interpolated between latent frames.
std::vector<double> RenderWaveform(const Matrix& latent, double latent_fps,
                                   double sample_rate = 8000.0);

}  // namespace foley

#endif  // FOLEY_SYNTHDATA_H_
