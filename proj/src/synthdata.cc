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


#include "foley/synthdata.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "foley/rng.h"

namespace foley {
namespace {

constexpr int kMinEventGapFrames = 4;

constexpr std::array<const char*, 8> kClassNames = {
    "knock", "splash", "chime", "thud", "clap", "rattle", "whoosh", "creak"};

int FrameCount(double duration_s, double rate) {
  return static_cast<int>(std::floor(duration_s * rate + 1e-9));
}

void RoundToFloat(Matrix& m) {
  m = m.cast<float>().cast<double>();
}

// Stratified event frames: one per equal segment, at least
// kMinEventGapFrames apart when segments allow it. Frame 0 is left free so
// every onset has a preceding baseline frame.
std::vector<int> PlaceEvents(int n_events, int frames, RngStream rng) {
  std::vector<int> out;
  const int usable = frames - 1;
  for (int i = 0; i < n_events; ++i) {
    const int start = 1 + static_cast<int>(static_cast<int64_t>(i) * usable /
                                           n_events);
    const int end = 1 + static_cast<int>(static_cast<int64_t>(i + 1) * usable /
                                         n_events);
    const int width = end - start;
    const int gap = std::min(kMinEventGapFrames, width - 1);
    out.push_back(start + static_cast<int>(rng.Below(
                              static_cast<uint64_t>(std::max(1, width - gap)))));
  }
  return out;
}

}  // namespace

void SynthSpec::Validate() const {
  Require(latent_dim >= 2 && d_video >= 2, ErrorCode::kConfig,
          "synthetic widths must be >= 2");
  Require(n_classes >= 1 && n_classes <= static_cast<int>(kClassNames.size()),
          ErrorCode::kConfig, "n_classes must be in [1, 8]");
  Require(latent_dim >= n_classes, ErrorCode::kConfig,
          "latent_dim must be >= n_classes");
  const int side = static_cast<int>(std::lround(std::sqrt(n_patches)));
  Require(n_patches >= 1 && side * side == n_patches, ErrorCode::kConfig,
          "n_patches must be a perfect square");
  Require(fps > 0 && stride >= 1 && latent_fps > 0, ErrorCode::kConfig,
          "frame rates must be positive");
  Require(duration_s > 0 && duration_s <= 12.0, ErrorCode::kConfig,
          "duration_s must be in (0, 12]");
  Require(min_events >= 0 && max_events >= min_events, ErrorCode::kConfig,
          "event count range is empty");
  Require(noise_floor >= 0 && amplitude > 0 && flash > 0, ErrorCode::kConfig,
          "noise_floor, amplitude and flash must be non-negative");
}

std::string ClassName(int class_id) {
  Require(class_id >= 0 && class_id < static_cast<int>(kClassNames.size()),
          ErrorCode::kDomain, "class id out of range");
  return kClassNames[class_id];
}

int ClassFromPrompt(const std::string& prompt) {
  for (size_t c = 0; c < kClassNames.size(); ++c) {
    if (prompt == kClassNames[c]) return static_cast<int>(c);
  }
  return -1;
}

Vector ClassSignature(int class_id, const SynthSpec& spec) {
  Require(class_id >= 0 && class_id < spec.n_classes, ErrorCode::kDomain,
          "class id out of range");
  RngStream rng =
      RngStream(spec.world_seed).Substream(streams::kClip, 2000 + class_id);
  const int band = spec.latent_dim / spec.n_classes;
  Vector s(spec.latent_dim);
  for (int j = 0; j < spec.latent_dim; ++j) {
    const bool in_band = j >= class_id * band && j < (class_id + 1) * band;
    const double g = rng.Normal();
    s(j) = in_band ? std::abs(g) + 0.5 : 0.1 * g;
  }
  return s / s.norm();
}

double ClassDecayFrames(int class_id) { return 1.5 + class_id; }

Vector ClassVideoPattern(int class_id, const SynthSpec& spec) {
  Require(class_id >= 0 && class_id < spec.n_classes, ErrorCode::kDomain,
          "class id out of range");
  RngStream rng =
      RngStream(spec.world_seed).Substream(streams::kClip, 1000 + class_id);
  Vector u = Vector::Zero(spec.d_video);
  for (int i = 1; i < spec.d_video; ++i) u(i) = rng.Normal();
  return u / u.norm();
}

SynthClip GenClip(uint64_t seed, double duration_s, int n_events, int class_id,
                  const SynthSpec& spec) {
  spec.Validate();
  Require(duration_s > 0 && duration_s <= 12.0, ErrorCode::kDomain,
          "clip duration must be in (0, 12] s");
  Require(n_events >= 0, ErrorCode::kDomain, "n_events must be >= 0");
  Require(class_id >= 0 && class_id < spec.n_classes, ErrorCode::kDomain,
          "class id out of range");
  const double eff_fps = spec.effective_fps();
  const int frames = FrameCount(duration_s, eff_fps);
  const int latent_frames = FrameCount(duration_s, spec.latent_fps);
  Require(frames >= 1 && latent_frames >= 1, ErrorCode::kGeneration,
          "clip shorter than one frame");
  Require(n_events <= frames - 1, ErrorCode::kGeneration,
          std::to_string(n_events) + " events do not fit in " +
              std::to_string(frames) + " effective frames");

  const RngStream root(seed);
  SynthClip clip;
  clip.class_id = class_id;
  clip.prompt = ClassName(class_id);
  clip.duration_s = duration_s;
  const std::vector<int> events =
      PlaceEvents(n_events, frames, root.Substream(streams::kClip, 0));

  // Audio latent: noise floor plus one decaying signature per event.
  const Vector sig = ClassSignature(class_id, spec);
  const double tau = ClassDecayFrames(class_id);
  Matrix a0 = root.Substream(streams::kClip, 1).NormalMatrix(
                  latent_frames, spec.latent_dim) *
              spec.noise_floor;
  for (int f : events) {
    const double t = f / eff_fps;
    clip.onsets_s.push_back(t);
    const int k0 = static_cast<int>(std::lround(t * spec.latent_fps));
    for (int k = k0; k < latent_frames; ++k) {
      const double env = std::exp(-(k - k0) / tau);
      if (env < 1e-3) break;
      a0.row(k) += spec.amplitude * env * sig.transpose();
    }
  }
  a0 = a0.cwiseMax(-3.0).cwiseMin(3.0);
  RoundToFloat(a0);
  clip.a0 = LatentSequence::FromTokens(std::move(a0));

  // Video: smooth per-patch background plus a one-frame flash per event.
  const int side = static_cast<int>(std::lround(std::sqrt(spec.n_patches)));
  RngStream bg = root.Substream(streams::kClip, 2);
  Matrix base = bg.NormalMatrix(spec.n_patches, spec.d_video) * 0.3;
  Matrix drift = bg.NormalMatrix(spec.n_patches, spec.d_video) * 0.1;
  base.col(0).setZero();
  drift.col(0).setZero();
  Vector phase(spec.n_patches);
  for (int p = 0; p < spec.n_patches; ++p) {
    phase(p) = 2.0 * std::numbers::pi * bg.Uniform();
  }
  RngStream place = root.Substream(streams::kClip, 3);
  const double cx = side * place.Uniform();
  const double cy = side * place.Uniform();
  Vector pattern = ClassVideoPattern(class_id, spec);
  pattern(0) = 1.0;
  RawVideoTokens& v = clip.video;
  v.fps = spec.fps;
  v.stride = spec.stride;
  v.n_frames_eff = frames;
  v.n_patches = spec.n_patches;
  v.tokens.resize(static_cast<Eigen::Index>(frames) * spec.n_patches,
                  spec.d_video);
  for (int f = 0; f < frames; ++f) {
    const double w = std::sin(2.0 * std::numbers::pi * f / frames);
    for (int p = 0; p < spec.n_patches; ++p) {
      v.tokens.row(static_cast<Eigen::Index>(f) * spec.n_patches + p) =
          base.row(p) + std::sin(phase(p) + w) * drift.row(p);
    }
  }
  // Spatial gain peaks at (cx, cy) and has unit mean over patches.
  Vector gain(spec.n_patches);
  for (int p = 0; p < spec.n_patches; ++p) {
    const double dx = p % side + 0.5 - cx;
    const double dy = p / side + 0.5 - cy;
    gain(p) = 0.5 + 0.5 * std::exp(-(dx * dx + dy * dy) / 8.0);
  }
  gain /= gain.mean();
  for (int f : events) {
    for (int p = 0; p < spec.n_patches; ++p) {
      v.tokens.row(static_cast<Eigen::Index>(f) * spec.n_patches + p) +=
          spec.flash * gain(p) * pattern.transpose();
    }
  }
  RoundToFloat(v.tokens);
  return clip;
}

std::string ClipId(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%05d", index);
  return buf;
}

int ClipIndex(const std::string& id) {
  int index = -1;
  char tail = 0;
  if (std::sscanf(id.c_str(), "clip_%d%c", &index, &tail) != 1 || index < 0) {
    Fail(ErrorCode::kManifest, "'" + id + "' is not a synthetic clip id");
  }
  return index;
}

SynthClip GenCorpusClip(uint64_t corpus_seed, int index,
                        const SynthSpec& spec) {
  spec.Validate();
  RngStream rng = RngStream(corpus_seed).Substream(streams::kClip, index);
  const uint64_t clip_seed = rng.NextU64();
  const int n_events =
      spec.min_events +
      static_cast<int>(rng.Below(spec.max_events - spec.min_events + 1));
  return GenClip(clip_seed, spec.duration_s, n_events, index % spec.n_classes,
                 spec);
}

Corpus GenCorpus(int n_clips, uint64_t seed, double split_ratio,
                 const SynthSpec& spec) {
  spec.Validate();
  Require(n_clips >= 2, ErrorCode::kManifest,
          "a train/eval split needs at least 2 clips");
  Require(split_ratio > 0.0 && split_ratio < 1.0, ErrorCode::kConfig,
          "split_ratio must be in (0, 1)");
  const int n_eval = std::clamp(
      n_clips - static_cast<int>(std::lround(n_clips * split_ratio)), 1,
      n_clips - 1);

  // Per-class eval quotas by largest remainder, then a seeded pick within
  // each class.
  const int k = spec.n_classes;
  std::vector<std::vector<int>> members(k);
  for (int i = 0; i < n_clips; ++i) members[i % k].push_back(i);
  std::vector<int> quota(k);
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int c = 0; c < k; ++c) {
    const double exact =
        static_cast<double>(n_eval) * members[c].size() / n_clips;
    quota[c] = static_cast<int>(std::floor(exact));
    assigned += quota[c];
    remainders.push_back({exact - quota[c], c});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int r = 0; assigned < n_eval; ++r, ++assigned) {
    ++quota[remainders[r % k].second];
  }
  std::vector<bool> is_eval(n_clips, false);
  const RngStream split(seed);
  for (int c = 0; c < k; ++c) {
    std::vector<int> order = members[c];
    RngStream rng = split.Substream(streams::kSplit, c);
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.Below(i)]);
    }
    for (int q = 0; q < quota[c]; ++q) is_eval[order[q]] = true;
  }

  Corpus corpus;
  for (int i = 0; i < n_clips; ++i) {
    ClipRecord r;
    r.id = ClipId(i);
    r.duration_s = spec.duration_s;
    r.media_ref = "clips/" + r.id + ".bin";
    (is_eval[i] ? corpus.eval : corpus.train).push_back(std::move(r));
  }
  return corpus;
}

Corpus WriteCorpus(const std::filesystem::path& root, int n_clips,
                   uint64_t seed, double split_ratio, const SynthSpec& spec) {
  Corpus corpus = GenCorpus(n_clips, seed, split_ratio, spec);
  std::error_code ec;
  std::filesystem::create_directories(root / "clips", ec);
  Require(!ec, ErrorCode::kIo,
          "cannot create " + (root / "clips").string() + ": " + ec.message());
  for (const Manifest* m : {&corpus.train, &corpus.eval}) {
    const Manifest& manifest = *m;
    ParallelFor(static_cast<int>(manifest.size()), [&](int i) {
      const ClipRecord& r = manifest[i];
      SaveClip(root / r.media_ref, GenCorpusClip(seed, ClipIndex(r.id), spec));
    });
  }
  WriteManifest(root / "train.jsonl", corpus.train);
  WriteManifest(root / "eval.jsonl", corpus.eval);
  return corpus;
}

TensorArchive ClipToArchive(const SynthClip& clip) {
  TensorArchive a;
  a.dtype = DType::kF32;
  a.tensors.push_back(MakeTensor("video", clip.video.tokens));
  a.tensors.push_back(MakeTensor("a0", clip.a0.tokens));
  a.meta = {{"kind", "synth_clip"},
            {"prompt", clip.prompt},
            {"class_id", clip.class_id},
            {"duration_s", clip.duration_s},
            {"onsets_s", clip.onsets_s},
            {"n_frames_eff", clip.video.n_frames_eff},
            {"n_patches", clip.video.n_patches},
            {"fps", clip.video.fps},
            {"stride", clip.video.stride}};
  return a;
}

SynthClip ClipFromArchive(const TensorArchive& archive) {
  const auto& m = archive.meta;
  Require(m.value("kind", "") == "synth_clip", ErrorCode::kIo,
          "archive is not a synthetic clip");
  SynthClip clip;
  try {
    clip.prompt = m.at("prompt").get<std::string>();
    clip.class_id = m.at("class_id").get<int>();
    clip.duration_s = m.at("duration_s").get<double>();
    clip.onsets_s = m.at("onsets_s").get<std::vector<double>>();
    clip.video.n_frames_eff = m.at("n_frames_eff").get<int>();
    clip.video.n_patches = m.at("n_patches").get<int>();
    clip.video.fps = m.at("fps").get<double>();
    clip.video.stride = m.at("stride").get<int>();
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kIo, std::string("bad clip metadata: ") + e.what());
  }
  clip.video.tokens = TensorToMatrix(archive.Get("video"));
  clip.a0 = LatentSequence::FromTokens(TensorToMatrix(archive.Get("a0")));
  clip.video.Validate();
  return clip;
}

void SaveClip(const std::filesystem::path& path, const SynthClip& clip) {
  WriteArchive(path, ClipToArchive(clip));
}

SynthClip LoadClip(const std::filesystem::path& path) {
  return ClipFromArchive(ReadArchive(path));
}

std::vector<double> RenderWaveform(const Matrix& latent, double latent_fps,
                                   double sample_rate) {
  Require(latent.rows() >= 1 && latent_fps > 0 && sample_rate > 0,
          ErrorCode::kInput, "cannot render an empty latent");
  const Eigen::Index frames = latent.rows();
  const Eigen::Index channels = latent.cols();
  std::vector<double> freq(channels);
  for (Eigen::Index j = 0; j < channels; ++j) {
    double f = 110.0 * std::pow(2.0, static_cast<double>(j) / 12.0);
    while (f >= sample_rate / 2) f /= 2;
    freq[j] = f;
  }
  const auto n = static_cast<size_t>(
      std::llround(frames / latent_fps * sample_rate));
  std::vector<double> out(n, 0.0);
  const double norm = 1.0 / std::sqrt(static_cast<double>(channels));
  for (size_t s = 0; s < n; ++s) {
    const double pos = std::min<double>(s * latent_fps / sample_rate,
                                        static_cast<double>(frames - 1));
    const auto k = static_cast<Eigen::Index>(std::floor(pos));
    const Eigen::Index k1 = std::min(k + 1, frames - 1);
    const double w = pos - k;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < channels; ++j) {
      const double amp = (1 - w) * latent(k, j) + w * latent(k1, j);
      acc += amp * std::sin(2.0 * std::numbers::pi * freq[j] * s / sample_rate);
    }
    out[s] = acc * norm;
  }
  return out;
}

}  // namespace foley
