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


#ifndef FOLEY_CURATION_H_
#define FOLEY_CURATION_H_

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace foley {

enum class ClipStatus { kPending, kKept, kDropped };

std::string_view ClipStatusName(ClipStatus s);

struct ClipRecord {
  std::string id;
  double duration_s = 0.0;
  std::string media_ref;  // relative to the manifest directory
  std::map<std::string, double> scores;
  ClipStatus status = ClipStatus::kPending;
  std::optional<std::string> drop_reason;

  bool active() const { return status != ClipStatus::kDropped; }
  void Validate() const;
  bool operator==(const ClipRecord&) const = default;
};

using Manifest = std::vector<ClipRecord>;

nlohmann::json RecordToJson(const ClipRecord& r);
ClipRecord RecordFromJson(const nlohmann::json& j);

// One JSON object per line.
std::string ManifestToJsonl(const Manifest& m);
Manifest ParseManifest(std::string_view text);
Manifest ReadManifest(const std::filesystem::path& path);
void WriteManifest(const std::filesystem::path& path, const Manifest& m);

// Record invariants plus id uniqueness.
void ValidateManifest(const Manifest& m);

inline constexpr double kSilenceRmsThreshold = 1e-3;
inline constexpr double kSilenceMinActiveFraction = 0.05;

bool SilenceFilter(std::span<const double> waveform, double sample_rate,
                   double rms_threshold = kSilenceRmsThreshold,
                   double min_active_fraction = kSilenceMinActiveFraction);

enum class ScoreDirection { kKeepAbove, kKeepBelow };

ScoreDirection ParseScoreDirection(std::string_view s);

struct ScorerSpec {
  std::string scorer_id;
  double threshold = 0.0;
  ScoreDirection direction = ScoreDirection::kKeepAbove;
};

using Scorer = std::function<double(const ClipRecord&)>;

// Scores every active record, marks failures dropped.
Manifest ScoreFilter(Manifest manifest, const ScorerSpec& spec,
                     const Scorer& scorer);

using WaveformLoader = std::function<std::vector<double>(const ClipRecord&)>;

struct CurationStage {
  std::string name;
  // Acts on active records only.
  std::function<Manifest(Manifest)> apply;
};

CurationStage SilenceStage(WaveformLoader loader, double sample_rate,
                           double rms_threshold = kSilenceRmsThreshold,
                           double min_active_fraction =
                               kSilenceMinActiveFraction);
CurationStage ScoreStage(ScorerSpec spec, Scorer scorer);

struct StageSummary {
  std::string name;
  int active_in = 0;
  int dropped = 0;
  int active_out = 0;
};

struct CurationSummary {
  int input_count = 0;
  std::vector<StageSummary> stages;
  int total_dropped = 0;
  int active = 0;

  nlohmann::json ToJson() const;
};

struct CurationResult {
  Manifest manifest;
  CurationSummary summary;
};

CurationResult Curate(Manifest manifest,
                      std::span<const CurationStage> pipeline);

}  // namespace foley

#endif  // FOLEY_CURATION_H_
