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

#include "foley/cli.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>
#include <type_traits>
#include <utility>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "CLI11.hpp"
#include "foley/common.h"
#include "foley/rng.h"
#include "foley/tensor_io.h"

namespace foley {
namespace {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

constexpr const char* kCheckpointFormat = "foley-checkpoint/1";

std::string FormatDouble(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
T ParseValue(const std::string& key, const std::string& text) {
  const auto bad = [&] {
    Fail(ErrorCode::kConfig, "invalid value '" + text + "' for " + key);
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    Fail(ErrorCode::kConfig, "invalid value '" + text + "' for " + key);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else {
    size_t used = 0;
    T value{};
    try {
      if constexpr (std::is_same_v<T, int>) {
        value = std::stoi(text, &used);
      } else if constexpr (std::is_same_v<T, uint64_t>) {
        if (!text.empty() && text[0] == '-') bad();
        value = std::stoull(text, &used);
      } else {
        value = std::stod(text, &used);
      }
    } catch (const std::exception&) {
      bad();
    }
    if (used != text.size()) bad();
    return value;
  }
}

template <typename T>
std::string FormatValue(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    return FormatDouble(v);
  } else {
    return std::to_string(v);
  }
}

struct KeySpec {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string full() const { return section + "." + key; }
};

template <typename Ref>
KeySpec Field(std::string section, std::string key, Ref ref) {
  using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
  const std::string full = section + "." + key;
  return {std::move(section), std::move(key),
          [ref, full](RunConfig& c, const std::string& text) {
            ref(c) = ParseValue<T>(full, text);
          },
          [ref](const RunConfig& c) {
            return FormatValue(ref(const_cast<RunConfig&>(c)));
          }};
}

#define FOLEY_FIELD(section, key, expr) \
  Field(section, key, [](RunConfig& c) -> auto& { return expr; })

const std::vector<KeySpec>& Keys() {
  static const std::vector<KeySpec> keys = [] {
    std::vector<KeySpec> k = {
        FOLEY_FIELD("model", "n_blocks", c.model.n_blocks),
        FOLEY_FIELD("model", "d_model", c.model.d_model),
        FOLEY_FIELD("model", "n_heads", c.model.n_heads),
        FOLEY_FIELD("model", "d_text", c.model.d_text),
        FOLEY_FIELD("model", "s_a_max", c.model.s_a_max),
        FOLEY_FIELD("model", "rope_base", c.model.rope_base),
        FOLEY_FIELD("model", "ffn_mult", c.model.ffn_mult),
        FOLEY_FIELD("model", "sigma_data", c.model.sigma_data),
        FOLEY_FIELD("model", "backbone_seed", c.backbone_seed),
        FOLEY_FIELD("model", "bridge_seed", c.bridge_seed),
        FOLEY_FIELD("video", "d_video", c.data.d_video),
        FOLEY_FIELD("video", "max_duration_s", c.pooling.max_duration_s),
        FOLEY_FIELD("video", "segment_s", c.pooling.segment_s),
        FOLEY_FIELD("video", "n_patches", c.data.n_patches),
        FOLEY_FIELD("video", "fps", c.data.fps),
        FOLEY_FIELD("video", "stride", c.data.stride),
        FOLEY_FIELD("data", "n_classes", c.data.n_classes),
        FOLEY_FIELD("data", "latent_fps", c.data.latent_fps),
        FOLEY_FIELD("data", "noise_floor", c.data.noise_floor),
        FOLEY_FIELD("data", "amplitude", c.data.amplitude),
        FOLEY_FIELD("data", "flash", c.data.flash),
        FOLEY_FIELD("data", "duration_s", c.data.duration_s),
        FOLEY_FIELD("data", "min_events", c.data.min_events),
        FOLEY_FIELD("data", "max_events", c.data.max_events),
        FOLEY_FIELD("data", "world_seed", c.data.world_seed),
        FOLEY_FIELD("train", "steps", c.train.steps),
        FOLEY_FIELD("train", "batch_size", c.train.batch_size),
        FOLEY_FIELD("train", "lr", c.train.lr),
        FOLEY_FIELD("train", "token_drop_p", c.train.token_drop_p),
        FOLEY_FIELD("train", "seed", c.train.seed),
        FOLEY_FIELD("train", "drop_text", c.train.drop_text),
        FOLEY_FIELD("train", "checkpoint_every", c.checkpoint_every),
        FOLEY_FIELD("eval", "cfg_scale", c.eval.cfg_scale),
        FOLEY_FIELD("eval", "n_steps", c.eval.n_steps),
        FOLEY_FIELD("eval", "seed", c.eval.seed),
        FOLEY_FIELD("eval", "no_text", c.eval.no_text),
        FOLEY_FIELD("eval", "use_video", c.eval.use_video),
        FOLEY_FIELD("eval", "onset_threshold", c.eval.onset_threshold),
        FOLEY_FIELD("paths", "train_manifest", c.train_manifest),
        FOLEY_FIELD("paths", "eval_manifest", c.eval_manifest),
        FOLEY_FIELD("paths", "run_dir", c.run_dir),
    };
    k.push_back({"video", "pooling",
                 [](RunConfig& c, const std::string& text) {
                   c.pooling.mode = ParsePoolingMode(text);
                 },
                 [](const RunConfig& c) {
                   return std::string(PoolingModeName(c.pooling.mode));
                 }});
    return k;
  }();
  return keys;
}

#undef FOLEY_FIELD

const KeySpec& FindKey(const std::string& full) {
  for (const auto& k : Keys()) {
    if (k.full() == full) return k;
  }
  Fail(ErrorCode::kConfig, "unknown config key '" + full + "'");
}

// Values derived from other sections.
void Finalize(RunConfig& c) {
  c.data.latent_dim = c.model.d_model;
  c.eval.latent_fps = c.data.latent_fps;
  c.eval.pooling = c.pooling;
}

void ApplyOverride(RunConfig& c, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  Require(eq != std::string::npos, ErrorCode::kConfig,
          "override '" + assignment + "' is not section.key=value");
  FindKey(assignment.substr(0, eq)).set(c, assignment.substr(eq + 1));
}

std::string CanonicalOf(const RunConfig& c,
                        const std::function<bool(const KeySpec&)>& keep) {
  std::vector<std::string> lines;
  for (const auto& k : Keys()) {
    if (keep(k)) lines.push_back(k.full() + "=" + k.get(c));
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

pt::ptree ReadIni(std::string_view text, const std::string& what) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    Fail(ErrorCode::kConfig, what + ": " + e.message() + " (line " +
                                 std::to_string(e.line()) + ")");
  }
  return tree;
}

// ---------------------------------------------------------------- data ----

std::vector<ClipRecord> ActiveRecords(const Manifest& m) {
  std::vector<ClipRecord> out;
  for (const auto& r : m) {
    if (r.active()) out.push_back(r);
  }
  return out;
}

std::vector<TrainingExample> LoadExamples(const fs::path& manifest_path,
                                          const RunConfig& cfg) {
  const Manifest m = ReadManifest(manifest_path);
  const std::vector<ClipRecord> records = ActiveRecords(m);
  Require(!records.empty(), ErrorCode::kInput,
          "manifest " + manifest_path.string() + " has no active records");
  std::vector<TrainingExample> out(records.size());
  const fs::path root = manifest_path.parent_path();
  ParallelFor(static_cast<int>(records.size()), [&](int i) {
    const SynthClip clip = LoadClip(root / records[i].media_ref);
    Require(clip.a0.tokens.cols() == cfg.model.d_model, ErrorCode::kShape,
            "clip " + records[i].id + " latent width " +
                std::to_string(clip.a0.tokens.cols()) + " != d_model " +
                std::to_string(cfg.model.d_model));
    out[i] = {clip.a0, EncodePrompt(clip.prompt, cfg.model.d_text),
              PoolVideo(clip.video, cfg.pooling)};
  });
  return out;
}

std::vector<EvalItem> LoadEvalItems(const fs::path& manifest_path) {
  const Manifest m = ReadManifest(manifest_path);
  const std::vector<ClipRecord> records = ActiveRecords(m);
  Require(!records.empty(), ErrorCode::kInput,
          "manifest " + manifest_path.string() + " is empty");
  std::vector<EvalItem> items(records.size());
  const fs::path root = manifest_path.parent_path();
  ParallelFor(static_cast<int>(records.size()), [&](int i) {
    items[i] = {records[i].id, LoadClip(root / records[i].media_ref)};
  });
  return items;
}

void EnsureDirectory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  Require(!ec, ErrorCode::kIo,
          "cannot create " + dir.string() + ": " + ec.message());
}

// 16-bit mono PCM, samples clipped to [-1, 1].
std::string EncodeWav(const std::vector<double>& samples, int sample_rate) {
  std::string out;
  auto put = [&](uint32_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
  };
  const auto data_bytes = static_cast<uint32_t>(samples.size() * 2);
  out += "RIFF";
  put(36 + data_bytes, 4);
  out += "WAVEfmt ";
  put(16, 4);
  put(1, 2);  // PCM
  put(1, 2);  // mono
  put(static_cast<uint32_t>(sample_rate), 4);
  put(static_cast<uint32_t>(sample_rate * 2), 4);
  put(2, 2);
  put(16, 2);
  out += "data";
  put(data_bytes, 4);
  for (double s : samples) {
    const auto v = static_cast<int16_t>(
        std::lround(std::clamp(s, -1.0, 1.0) * 32767.0));
    put(static_cast<uint16_t>(v), 2);
  }
  return out;
}

void CheckModelHash(const Checkpoint& ckpt, const RunConfig& cfg) {
  Require(ckpt.model_hash == cfg.ModelHash(), ErrorCode::kIncompatible,
          "checkpoint model hash " + ckpt.model_hash +
              " does not match config " + cfg.ModelHash());
}

// ------------------------------------------------------------ commands ----

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
};

RunConfig ConfigFrom(const CommonOptions& o) {
  if (o.config.empty()) return ParseRunConfig("", o.sets);
  return LoadRunConfig(o.config, o.sets);
}

int CmdGenData(int n, uint64_t seed, double split, const std::string& out_dir,
               const CommonOptions& common, std::ostream& out) {
  const RunConfig cfg = ConfigFrom(common);
  const Corpus c = WriteCorpus(out_dir, n, seed, split, cfg.data);
  out << "wrote " << c.train.size() << " train and " << c.eval.size()
      << " eval clips to " << out_dir << "\n";
  return kExitOk;
}

CurationStage BuildStage(const std::string& name, const pt::ptree& tree,
                         const std::map<std::string, Scorer>& scorers) {
  const auto section =
      tree.get_child_optional(pt::ptree::path_type(name, '/'));
  std::map<std::string, std::string> params;
  if (section) {
    for (const auto& [k, v] : *section) params[k] = v.data();
  }
  std::string type = name.substr(0, name.find('.'));
  if (params.contains("type")) type = params["type"];
  auto take = [&](const std::string& key, const std::string& fallback) {
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    std::string v = it->second;
    params.erase(it);
    return v;
  };
  params.erase("type");
  CurationStage stage;
  if (type == "silence") {
    const double rms = ParseValue<double>(
        name + ".rms_threshold",
        take("rms_threshold", FormatDouble(kSilenceRmsThreshold)));
    const double frac = ParseValue<double>(
        name + ".min_active_fraction",
        take("min_active_fraction", FormatDouble(kSilenceMinActiveFraction)));
    const double rate = ParseValue<double>(name + ".sample_rate",
                                           take("sample_rate", "8000"));
    const double latent_fps = ParseValue<double>(name + ".latent_fps",
                                                 take("latent_fps", "8"));
    stage = SilenceStage(
        [latent_fps, rate](const ClipRecord& r) {
          return RenderWaveform(LoadClip(r.media_ref).a0.tokens, latent_fps,
                                rate);
        },
        rate, rms, frac);
  } else if (type == "score") {
    ScorerSpec spec;
    spec.scorer_id = take("scorer", "");
    Require(scorers.contains(spec.scorer_id), ErrorCode::kConfig,
            "stage " + name + ": unknown scorer '" + spec.scorer_id +
                "' (registered: latent_energy, av_consistency, aesthetics)");
    spec.threshold =
        ParseValue<double>(name + ".threshold", take("threshold", "0"));
    spec.direction = ParseScoreDirection(take("direction", "keep_above"));
    stage = ScoreStage(spec, scorers.at(spec.scorer_id));
  } else {
    Fail(ErrorCode::kConfig, "unknown stage '" + name +
                                 "' (registered stages: silence, score)");
  }
  Require(params.empty(), ErrorCode::kConfig,
          "stage " + name + ": unknown key '" +
              (params.empty() ? "" : params.begin()->first) + "'");
  return stage;
}

int CmdCurate(const std::string& manifest_path, const std::string& pipeline,
              const std::string& out_path, std::ostream& out) {
  fs::path root = fs::path(manifest_path).parent_path();
  if (root.empty()) root = ".";
  Manifest m = ReadManifest(manifest_path);
  // Stages see media paths resolved against the manifest directory.
  std::vector<std::string> refs;
  for (auto& r : m) {
    refs.push_back(r.media_ref);
    r.media_ref = (root / r.media_ref).string();
  }
  std::vector<CurationStage> stages;
  if (!pipeline.empty()) {
    const pt::ptree tree = ReadIni(ReadFileBytes(pipeline), pipeline);
    for (const auto& [section, body] : tree) {
      Require(!body.empty() || body.data().empty(), ErrorCode::kConfig,
              "pipeline key '" + section + "' outside a section");
    }
    const std::map<std::string, Scorer> scorers = ToyScorers("");
    std::string list = tree.get<std::string>("pipeline.stages", "");
    std::stringstream ss(list);
    for (std::string name; std::getline(ss, name, ',');) {
      name.erase(0, name.find_first_not_of(" \t"));
      name.erase(name.find_last_not_of(" \t") + 1);
      if (!name.empty()) stages.push_back(BuildStage(name, tree, scorers));
    }
  }
  CurationResult result = Curate(std::move(m), stages);
  // Rebase media paths onto the output manifest's directory.
  fs::path out_dir = fs::path(out_path).parent_path();
  if (out_dir.empty()) out_dir = ".";
  EnsureDirectory(out_dir);
  for (size_t i = 0; i < result.manifest.size(); ++i) {
    const fs::path target = root / refs[i];
    result.manifest[i].media_ref =
        fs::weakly_canonical(root) == fs::weakly_canonical(out_dir)
            ? refs[i]
            : fs::relative(target, out_dir).generic_string();
  }
  WriteManifest(out_path, result.manifest);
  const std::string summary = result.summary.ToJson().dump(2) + "\n";
  WriteFileBytes(out_path + ".summary.json", summary);
  out << summary;
  return kExitOk;
}

int CmdTrain(const CommonOptions& common, const std::string& resume,
             std::ostream& out) {
  Require(!common.config.empty(), ErrorCode::kInput, "train needs --config");
  const RunConfig cfg = ConfigFrom(common);
  const BackboneParams backbone = BuildBackbone(cfg);
  std::vector<TrainingExample> data =
      LoadExamples(cfg.Resolve(cfg.train_manifest), cfg);
  Trainer trainer(backbone,
                  InitBridge(cfg.model, cfg.data.d_video, cfg.bridge_seed),
                  cfg.train, std::move(data));
  const fs::path run_dir = cfg.Resolve(cfg.run_dir);
  const fs::path log_path = run_dir / "train_log.jsonl";
  std::string log;
  if (!resume.empty()) {
    const TensorArchive a = ReadArchive(resume);
    Require(a.meta.value("format", "") == kCheckpointFormat, ErrorCode::kIo,
            resume + " is not a checkpoint");
    Require(a.meta.value("train_hash", "") == cfg.TrainHash(),
            ErrorCode::kIncompatible,
            "checkpoint train hash " + a.meta.value("train_hash", "") +
                " does not match config " + cfg.TrainHash());
    LoadBridgeTensors(a, "", trainer.mutable_bridge());
    trainer.optimizer().LoadState(a);
    const int step = a.meta.at("step").get<int>();
    trainer.set_next_step(step);
    // Keep the log lines of steps before the resume point.
    std::istringstream old(fs::exists(log_path) ? ReadFileBytes(log_path)
                                                : std::string());
    for (std::string line; std::getline(old, line);) {
      if (!line.empty() && nlohmann::json::parse(line).at("step") < step) {
        log += line + "\n";
      }
    }
  }
  EnsureDirectory(run_dir);
  WriteArchive(run_dir / "backbone.bin", backbone.ToArchive());

  double last_loss = NAN;
  auto on_step = [&](const StepLog& l, const StepResult&) {
    nlohmann::ordered_json j;
    j["step"] = l.step;
    j["loss"] = l.loss;
    j["drop_count"] = l.drop_count;
    log += j.dump() + "\n";
    last_loss = l.loss;
  };
  const int end = cfg.train.steps;
  while (trainer.next_step() < end) {
    int stop = end;
    if (cfg.checkpoint_every > 0) {
      stop = std::min(end, (trainer.next_step() / cfg.checkpoint_every + 1) *
                               cfg.checkpoint_every);
    }
    trainer.Run(stop, on_step);
    if (cfg.checkpoint_every > 0 && stop % cfg.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%06d.bin", stop);
      WriteArchive(run_dir / name,
                   CheckpointToArchive(trainer.bridge(), trainer.optimizer(),
                                       stop, cfg));
    }
  }
  WriteArchive(run_dir / "checkpoint.bin",
               CheckpointToArchive(trainer.bridge(), trainer.optimizer(),
                                   trainer.next_step(), cfg));
  WriteFileBytes(log_path, log);
  out << "trained to step " << trainer.next_step() << ", last loss "
      << FormatDouble(last_loss) << ", checkpoint "
      << (run_dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

struct SampleOptions {
  std::string checkpoint;
  std::string clip;
  std::optional<std::string> prompt;
  double cfg_scale = 2.0;
  int steps = 25;
  uint64_t seed = 0;
  std::string out;
  bool render = false;
  bool no_video = false;
};

RunConfig CheckpointConfig(const std::string& checkpoint,
                           const CommonOptions& common) {
  return common.config.empty() && common.sets.empty()
             ? CheckpointRunConfig(checkpoint)
             : ConfigFrom(common);
}

int CmdSample(const SampleOptions& o, const CommonOptions& common,
              std::ostream& out) {
  Require(o.steps >= 1, ErrorCode::kInput, "--steps must be >= 1");
  const RunConfig cfg = CheckpointConfig(o.checkpoint, common);
  const Checkpoint ckpt =
      LoadCheckpoint(o.checkpoint, cfg.model, cfg.data.d_video);
  CheckModelHash(ckpt, cfg);
  Require(fs::exists(o.clip), ErrorCode::kInput, "clip " + o.clip +
                                                     " does not exist");
  const SynthClip clip = LoadClip(o.clip);
  const BackboneParams backbone = BuildBackbone(cfg);
  const std::string prompt = o.prompt.value_or(clip.prompt);
  const TextTokens text = EncodePrompt(prompt, cfg.model.d_text);
  const VideoTokens video = o.no_video ? VideoTokens::Absent()
                                       : PoolVideo(clip.video, cfg.pooling);
  const LatentSequence latent =
      Sample(backbone, ckpt.bridge, text, video,
             static_cast<int>(clip.a0.length()), o.steps, o.cfg_scale,
             RngStream(o.seed));
  TensorArchive a;
  a.dtype = DType::kF32;
  a.tensors.push_back(MakeTensor("latent", latent.tokens));
  a.meta = {{"kind", "sampled_latent"}, {"clip", o.clip},
            {"prompt", prompt},          {"cfg_scale", o.cfg_scale},
            {"steps", o.steps},          {"seed", o.seed},
            {"use_video", !o.no_video},  {"model_hash", ckpt.model_hash},
            {"checkpoint_step", ckpt.step}};
  const fs::path out_path(o.out);
  if (out_path.has_parent_path()) EnsureDirectory(out_path.parent_path());
  WriteArchive(out_path, a);
  out << "wrote " << o.out;
  if (o.render) {
    // Toy sinusoid-bank rendering for listening only.
    const int rate = 8000;
    fs::path wav = out_path;
    wav.replace_extension(".wav");
    WriteFileBytes(wav, EncodeWav(RenderWaveform(latent.tokens,
                                                 cfg.data.latent_fps, rate),
                                  rate));
    out << " and " << wav.string();
  }
  out << "\n";
  return kExitOk;
}

struct EvalOptions {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  bool no_text = false;
  bool no_video = false;
  bool ground_truth = false;
  std::optional<uint64_t> seed;
  std::optional<double> cfg_scale;
  std::optional<int> steps;
};

int CmdEval(const EvalOptions& o, const CommonOptions& common,
            std::ostream& out) {
  Require(!o.checkpoint.empty() || o.ground_truth, ErrorCode::kInput,
          "eval needs --checkpoint unless --ground-truth is set");
  RunConfig cfg = o.checkpoint.empty() ? ConfigFrom(common)
                                       : CheckpointConfig(o.checkpoint, common);
  BridgeParams bridge = InitBridge(cfg.model, cfg.data.d_video,
                                   cfg.bridge_seed);
  int step = 0;
  if (!o.checkpoint.empty()) {
    const Checkpoint ckpt =
        LoadCheckpoint(o.checkpoint, cfg.model, cfg.data.d_video);
    CheckModelHash(ckpt, cfg);
    bridge = ckpt.bridge;
    step = ckpt.step;
  }
  const std::vector<EvalItem> items = LoadEvalItems(o.manifest);
  EvalConfig ec = cfg.eval;
  if (o.no_text) ec.no_text = true;
  if (o.no_video) ec.use_video = false;
  if (o.seed) ec.seed = *o.seed;
  if (o.cfg_scale) ec.cfg_scale = *o.cfg_scale;
  if (o.steps) ec.n_steps = *o.steps;
  ec.ground_truth = o.ground_truth;
  ec.run_config_hash = cfg.Hash();
  const BackboneParams backbone = BuildBackbone(cfg);
  EvalReport report =
      Evaluate(items, backbone, bridge, ToyProviders(cfg.data), ec);
  report.meta["checkpoint_step"] = step;
  report.meta["model_hash"] = cfg.ModelHash();
  report.meta["run_config_hash"] = cfg.Hash();
  const fs::path dir(o.out);
  EnsureDirectory(dir);
  WriteFileBytes(dir / "report.txt", report.ToKeyValue());
  WriteFileBytes(dir / "report.md", report.ToTableRow());
  out << report.ToTableRow();
  return kExitOk;
}

int ExitCodeFor(ErrorCode code) {
  return code == ErrorCode::kIncompatible ? kExitIncompatible : kExitUsage;
}

}  // namespace

// ------------------------------------------------------------ RunConfig ----

void RunConfig::Validate() const {
  model.Validate();
  pooling.Validate();
  data.Validate();
  train.Validate();
  Require(data.latent_dim == model.d_model, ErrorCode::kConfig,
          "latent width must equal model.d_model");
  Require(eval.n_steps >= 1, ErrorCode::kConfig, "eval.n_steps must be >= 1");
  Require(eval.onset_threshold > 0, ErrorCode::kConfig,
          "eval.onset_threshold must be > 0");
  Require(checkpoint_every >= 0, ErrorCode::kConfig,
          "train.checkpoint_every must be >= 0");
}

fs::path RunConfig::Resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::string RunConfig::Canonical(
    const std::vector<std::string>& sections) const {
  return CanonicalOf(*this, [&](const KeySpec& k) {
    if (sections.empty()) return k.section != "paths";
    return std::find(sections.begin(), sections.end(), k.section) !=
           sections.end();
  });
}

std::string RunConfig::Hash() const { return Sha256Hex(Canonical()); }

std::string RunConfig::ModelHash() const {
  return Sha256Hex(CanonicalOf(*this, [](const KeySpec& k) {
    return k.section == "model" || k.full() == "video.d_video";
  }));
}

std::string RunConfig::TrainHash() const {
  return Sha256Hex(Canonical({"model", "video", "data", "train"}));
}

RunConfig ParseRunConfig(std::string_view ini_text,
                         const std::vector<std::string>& overrides) {
  RunConfig c;
  const pt::ptree tree = ReadIni(ini_text, "run config");
  for (const auto& [section, body] : tree) {
    Require(!body.empty() || body.data().empty(), ErrorCode::kConfig,
            "config key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      FindKey(section + "." + key).set(c, value.data());
    }
  }
  for (const auto& o : overrides) ApplyOverride(c, o);
  Finalize(c);
  c.Validate();
  return c;
}

RunConfig LoadRunConfig(const fs::path& path,
                        const std::vector<std::string>& overrides) {
  RunConfig c = ParseRunConfig(ReadFileBytes(path), overrides);
  c.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return c;
}

std::vector<std::string> RunConfigKeys() {
  std::vector<std::string> out;
  for (const auto& k : Keys()) out.push_back(k.full());
  return out;
}

BackboneParams BuildBackbone(const RunConfig& cfg) {
  return InitBackbone(cfg.model, cfg.backbone_seed);
}

// ----------------------------------------------------------- checkpoint ----

TensorArchive CheckpointToArchive(const BridgeParams& bridge,
                                  const AdamOptimizer& optimizer, int step,
                                  const RunConfig& cfg) {
  TensorArchive a;
  a.dtype = DType::kF64;
  a.tensors = bridge.Tensors();
  for (auto& t : optimizer.StateTensors()) a.tensors.push_back(std::move(t));
  nlohmann::json model = nlohmann::json::object();
  for (const auto& k : Keys()) {
    if (k.section == "model" || k.section == "video" || k.section == "data") {
      model[k.full()] = k.get(cfg);
    }
  }
  a.meta = {{"format", kCheckpointFormat},
            {"step", step},
            {"config_hash", cfg.TrainHash()},
            {"model_hash", cfg.ModelHash()},
            {"train_hash", cfg.TrainHash()},
            {"model_config", model}};
  return a;
}

Checkpoint LoadCheckpoint(const fs::path& path, const BackboneConfig& model,
                          int d_video) {
  const TensorArchive a = ReadArchive(path);
  Require(a.meta.value("format", "") == kCheckpointFormat, ErrorCode::kIo,
          path.string() + " is not a checkpoint");
  Checkpoint c;
  c.bridge = InitBridge(model, d_video, 0);
  try {
    LoadBridgeTensors(a, "", c.bridge);
  } catch (const FoleyError& e) {
    Fail(ErrorCode::kIncompatible,
         "checkpoint does not fit the configured model: " +
             std::string(e.what()));
  }
  c.step = a.meta.at("step").get<int>();
  c.model_hash = a.meta.value("model_hash", "");
  c.train_hash = a.meta.value("train_hash", "");
  c.model_config = a.meta.value("model_config", nlohmann::json::object());
  c.optimizer_state.dtype = a.dtype;
  for (const auto& t : a.tensors) {
    if (t.name.rfind("adam.", 0) == 0) c.optimizer_state.tensors.push_back(t);
  }
  return c;
}

RunConfig CheckpointRunConfig(const fs::path& path) {
  const TensorArchive a = ReadArchive(path);
  Require(a.meta.value("format", "") == kCheckpointFormat, ErrorCode::kIo,
          path.string() + " is not a checkpoint");
  std::vector<std::string> sets;
  for (const auto& [k, v] : a.meta.at("model_config").items()) {
    sets.push_back(k + "=" + v.get<std::string>());
  }
  return ParseRunConfig("", sets);
}

// -------------------------------------------------------------- scorers ----

std::map<std::string, Scorer> ToyScorers(const fs::path& root) {
  auto load = [root](const ClipRecord& r) {
    return LoadClip(root.empty() ? fs::path(r.media_ref) : root / r.media_ref);
  };
  std::map<std::string, Scorer> s;
  // Mean squared latent entry.
  s["latent_energy"] = [load](const ClipRecord& r) {
    const Matrix& a = load(r).a0.tokens;
    return a.squaredNorm() / static_cast<double>(a.size());
  };
  // Pearson correlation between the per-frame mean of the video flash
  // channel and the positive change in latent frame norm.
  s["av_consistency"] = [load](const ClipRecord& r) {
    const SynthClip c = load(r);
    const Eigen::Index frames =
        std::min<Eigen::Index>(c.video.n_frames_eff, c.a0.length());
    if (frames < 2) return 0.0;
    Vector flash(frames), novelty(frames);
    for (Eigen::Index f = 0; f < frames; ++f) {
      flash(f) = c.video.tokens.col(0)
                     .segment(f * c.video.n_patches, c.video.n_patches)
                     .mean();
      const double prev = f == 0 ? 0.0 : c.a0.tokens.row(f - 1).norm();
      novelty(f) = std::max(0.0, c.a0.tokens.row(f).norm() - prev);
    }
    const Vector fc = flash.array() - flash.mean();
    const Vector nc = novelty.array() - novelty.mean();
    const double denom = fc.norm() * nc.norm();
    return denom > 0 ? fc.dot(nc) / denom : 0.0;
  };
  // Smoothness of the latent trajectory, in (0, 1].
  s["aesthetics"] = [load](const ClipRecord& r) {
    const Matrix& a = load(r).a0.tokens;
    if (a.rows() < 2) return 1.0;
    const Matrix diff = a.bottomRows(a.rows() - 1) - a.topRows(a.rows() - 1);
    return 1.0 / (1.0 + diff.squaredNorm() / static_cast<double>(diff.size()));
  };
  return s;
}

// ------------------------------------------------------------------ CLI ----

int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"Video-conditioned Foley bridge on a frozen audio DiT",
               "foley_bridge"};
  app.require_subcommand(1);

  CommonOptions common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "INI run config");
    sub->add_option("--set", common.sets,
                    "Override a config key (section.key=value)");
  };

  int n = 0;
  uint64_t data_seed = 0;
  double split = kDefaultSplitRatio;
  std::string data_out;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--n", n, "Number of clips")->required();
  gen->add_option("--seed", data_seed, "Corpus seed");
  gen->add_option("--split", split, "Train fraction");
  gen->add_option("--out", data_out, "Output directory")->required();
  add_common(gen);

  std::string cur_manifest, cur_pipeline, cur_out;
  CLI::App* cur = app.add_subcommand("curate", "Filter a manifest");
  cur->add_option("--manifest", cur_manifest, "Input manifest")->required();
  cur->add_option("--pipeline-config", cur_pipeline, "Pipeline INI");
  cur->add_option("--out", cur_out, "Output manifest")->required();

  std::string resume;
  CLI::App* train = app.add_subcommand("train", "Train the video bridge");
  train->add_option("--resume", resume, "Checkpoint to resume from");
  add_common(train);

  SampleOptions so;
  CLI::App* sample = app.add_subcommand("sample", "Sample one latent");
  sample->add_option("--checkpoint", so.checkpoint)->required();
  sample->add_option("--clip", so.clip, "Clip blob")->required();
  sample->add_option("--prompt", so.prompt, "Text prompt (default: clip's)");
  sample->add_option("--cfg-scale", so.cfg_scale);
  sample->add_option("--steps", so.steps);
  sample->add_option("--seed", so.seed);
  sample->add_option("--out", so.out, "Output latent blob")->required();
  sample->add_flag("--render", so.render, "Also write a toy .wav");
  sample->add_flag("--no-video", so.no_video, "Sample without video");
  add_common(sample);

  EvalOptions eo;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate on a manifest");
  eval->add_option("--checkpoint", eo.checkpoint);
  eval->add_option("--manifest", eo.manifest)->required();
  eval->add_option("--out", eo.out, "Report directory")->required();
  eval->add_flag("--no-text", eo.no_text, "Generate without text");
  eval->add_flag("--no-video", eo.no_video, "Generate without video");
  eval->add_flag("--ground-truth", eo.ground_truth,
                 "Score reference latents against themselves");
  eval->add_option("--seed", eo.seed);
  eval->add_option("--cfg-scale", eo.cfg_scale);
  eval->add_option("--steps", eo.steps);
  add_common(eval);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return CmdGenData(n, data_seed, split, data_out, common, out);
    if (*cur) return CmdCurate(cur_manifest, cur_pipeline, cur_out, out);
    if (*train) return CmdTrain(common, resume, out);
    if (*sample) return CmdSample(so, common, out);
    if (*eval) return CmdEval(eo, common, out);
  } catch (const FoleyError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace foley
