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


#include "foley/curation.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "foley/common.h"
#include "foley/tensor_io.h"

namespace foley {
namespace {

ClipStatus ParseStatus(const std::string& s) {
  if (s == "pending") return ClipStatus::kPending;
  if (s == "kept") return ClipStatus::kKept;
  if (s == "dropped") return ClipStatus::kDropped;
  Fail(ErrorCode::kManifest, "unknown clip status '" + s + "'");
}

int ActiveCount(const Manifest& m) {
  return static_cast<int>(
      std::count_if(m.begin(), m.end(), [](const ClipRecord& r) {
        return r.active();
      }));
}

}  // namespace

std::string_view ClipStatusName(ClipStatus s) {
  switch (s) {
    case ClipStatus::kPending: return "pending";
    case ClipStatus::kKept: return "kept";
    case ClipStatus::kDropped: return "dropped";
  }
  return "?";
}

void ClipRecord::Validate() const {
  Require(!id.empty(), ErrorCode::kManifest, "clip record without id");
  Require(duration_s > 0.0 && std::isfinite(duration_s), ErrorCode::kManifest,
          "clip " + id + " has non-positive duration");
  Require(status != ClipStatus::kDropped || drop_reason.has_value(),
          ErrorCode::kManifest, "dropped clip " + id + " has no drop_reason");
}

nlohmann::json RecordToJson(const ClipRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["duration_s"] = r.duration_s;
  j["media_ref"] = r.media_ref;
  j["scores"] = r.scores;
  j["status"] = ClipStatusName(r.status);
  if (r.drop_reason) j["drop_reason"] = *r.drop_reason;
  return j;
}

ClipRecord RecordFromJson(const nlohmann::json& j) {
  ClipRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.duration_s = j.at("duration_s").get<double>();
    r.media_ref = j.value("media_ref", "");
    r.scores = j.value("scores", std::map<std::string, double>{});
    r.status = ParseStatus(j.value("status", "pending"));
    if (j.contains("drop_reason") && !j["drop_reason"].is_null()) {
      r.drop_reason = j["drop_reason"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kManifest, std::string("malformed clip record: ") +
                                   e.what());
  }
  r.Validate();
  return r;
}

std::string ManifestToJsonl(const Manifest& m) {
  std::string out;
  for (const auto& r : m) out += RecordToJson(r).dump() + "\n";
  return out;
}

Manifest ParseManifest(std::string_view text) {
  Manifest m;
  std::istringstream in{std::string(text)};
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      Fail(ErrorCode::kManifest, "manifest line " + std::to_string(line_no) +
                                     ": " + e.what());
    }
    m.push_back(RecordFromJson(j));
  }
  ValidateManifest(m);
  return m;
}

Manifest ReadManifest(const std::filesystem::path& path) {
  return ParseManifest(ReadFileBytes(path));
}

void WriteManifest(const std::filesystem::path& path, const Manifest& m) {
  WriteFileBytes(path, ManifestToJsonl(m));
}

void ValidateManifest(const Manifest& m) {
  std::set<std::string> seen;
  for (const auto& r : m) {
    r.Validate();
    Require(seen.insert(r.id).second, ErrorCode::kManifest,
            "duplicate clip id '" + r.id + "'");
  }
}

bool SilenceFilter(std::span<const double> waveform, double sample_rate,
                   double rms_threshold, double min_active_fraction) {
  Require(!waveform.empty(), ErrorCode::kInput, "empty waveform");
  Require(sample_rate > 0 && rms_threshold > 0 && min_active_fraction > 0,
          ErrorCode::kInput, "silence filter parameters must be positive");
  const size_t window = std::max<size_t>(
      1, static_cast<size_t>(std::llround(0.1 * sample_rate)));
  const size_t n_windows = std::max<size_t>(1, waveform.size() / window);
  size_t active = 0;
  for (size_t w = 0; w < n_windows; ++w) {
    const size_t begin = w * window;
    const size_t end =
        n_windows == 1 ? waveform.size() : std::min(begin + window,
                                                    waveform.size());
    double sum_sq = 0.0;
    for (size_t i = begin; i < end; ++i) sum_sq += waveform[i] * waveform[i];
    if (std::sqrt(sum_sq / static_cast<double>(end - begin)) > rms_threshold) {
      ++active;
    }
  }
  return static_cast<double>(active) / static_cast<double>(n_windows) >
         min_active_fraction;
}

ScoreDirection ParseScoreDirection(std::string_view s) {
  if (s == "keep_above") return ScoreDirection::kKeepAbove;
  if (s == "keep_below") return ScoreDirection::kKeepBelow;
  Fail(ErrorCode::kConfig, "unknown score direction '" + std::string(s) +
                               "' (expected keep_above or keep_below)");
}

Manifest ScoreFilter(Manifest manifest, const ScorerSpec& spec,
                     const Scorer& scorer) {
  const int n = static_cast<int>(manifest.size());
  std::vector<std::optional<double>> scores(n);
  ParallelFor(n, [&](int i) {
    if (!manifest[i].active()) return;
    try {
      const double s = scorer(manifest[i]);
      if (std::isfinite(s)) scores[i] = s;
    } catch (const std::exception&) {
      // Recorded as a scorer error below.
    }
  });
  for (int i = 0; i < n; ++i) {
    ClipRecord& r = manifest[i];
    if (!r.active()) continue;
    if (!scores[i]) {
      r.status = ClipStatus::kDropped;
      r.drop_reason = "scorer_error:" + spec.scorer_id;
      continue;
    }
    const double s = *scores[i];
    r.scores[spec.scorer_id] = s;
    const bool keep = spec.direction == ScoreDirection::kKeepAbove
                          ? s >= spec.threshold
                          : s <= spec.threshold;
    if (keep) {
      r.status = ClipStatus::kKept;
    } else {
      r.status = ClipStatus::kDropped;
      r.drop_reason = spec.scorer_id;
    }
  }
  return manifest;
}

CurationStage SilenceStage(WaveformLoader loader, double sample_rate,
                           double rms_threshold, double min_active_fraction) {
  return {"silence", [=](Manifest m) {
            const int n = static_cast<int>(m.size());
            // 1 keep, 0 silent, -1 load/filter failure.
            std::vector<int> verdict(n, 1);
            ParallelFor(n, [&](int i) {
              if (!m[i].active()) return;
              try {
                verdict[i] = SilenceFilter(loader(m[i]), sample_rate,
                                           rms_threshold, min_active_fraction)
                                 ? 1
                                 : 0;
              } catch (const std::exception&) {
                verdict[i] = -1;
              }
            });
            for (int i = 0; i < n; ++i) {
              if (!m[i].active()) continue;
              if (verdict[i] == 1) {
                m[i].status = ClipStatus::kKept;
              } else {
                m[i].status = ClipStatus::kDropped;
                m[i].drop_reason =
                    verdict[i] == 0 ? "silence" : "scorer_error:silence";
              }
            }
            return m;
          }};
}

CurationStage ScoreStage(ScorerSpec spec, Scorer scorer) {
  std::string name = "score:" + spec.scorer_id;
  return {std::move(name), [spec = std::move(spec),
                            scorer = std::move(scorer)](Manifest m) {
            return ScoreFilter(std::move(m), spec, scorer);
          }};
}

nlohmann::json CurationSummary::ToJson() const {
  nlohmann::json j;
  j["input_count"] = input_count;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : stages) {
    list.push_back({{"stage", s.name},
                    {"active_in", s.active_in},
                    {"dropped", s.dropped},
                    {"active_out", s.active_out}});
  }
  j["stages"] = std::move(list);
  j["total_dropped"] = total_dropped;
  j["active"] = active;
  return j;
}

CurationResult Curate(Manifest manifest,
                      std::span<const CurationStage> pipeline) {
  ValidateManifest(manifest);
  CurationResult result;
  result.summary.input_count = static_cast<int>(manifest.size());
  for (const auto& stage : pipeline) {
    const Manifest before = manifest;
    StageSummary s{stage.name, ActiveCount(before), 0, 0};
    manifest = stage.apply(std::move(manifest));
    Require(manifest.size() == before.size(), ErrorCode::kManifest,
            "stage " + stage.name + " changed the record count");
    for (size_t i = 0; i < manifest.size(); ++i) {
      Require(manifest[i].id == before[i].id, ErrorCode::kManifest,
              "stage " + stage.name + " reordered records");
      Require(before[i].active() || manifest[i] == before[i],
              ErrorCode::kManifest,
              "stage " + stage.name + " modified a dropped record");
      if (before[i].active() && !manifest[i].active()) ++s.dropped;
    }
    s.active_out = ActiveCount(manifest);
    result.summary.total_dropped += s.dropped;
    result.summary.stages.push_back(std::move(s));
  }
  result.summary.active = ActiveCount(manifest);
  result.manifest = std::move(manifest);
  return result;
}

}  // namespace foley
