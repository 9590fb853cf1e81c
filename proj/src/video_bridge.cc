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

#include "foley/video_bridge.h"

#include <cmath>

#include "foley/rng.h"

namespace foley {
namespace {

int GridSide(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::kFrame: return 1;
    case PoolingMode::kGrid8: return 8;
    case PoolingMode::kGrid16: return 16;
  }
  return 1;
}

template <typename Bridge, typename F>
void VisitBridge(Bridge& b, F&& f) {
  for (size_t i = 0; i < b.blocks.size(); ++i) {
    auto& blk = b.blocks[i];
    const std::string p = "bridge." + std::to_string(i) + ".";
    f(p + "mlp_w1.weight", blk.mlp_w1.weight);
    f(p + "mlp_w1.bias", blk.mlp_w1.bias);
    f(p + "mlp_w2.weight", blk.mlp_w2.weight);
    f(p + "mlp_w2.bias", blk.mlp_w2.bias);
    f(p + "W_q.weight", blk.attn.q.weight);
    f(p + "W_q.bias", blk.attn.q.bias);
    f(p + "W_kv.weight", blk.attn.kv.weight);
    f(p + "W_kv.bias", blk.attn.kv.bias);
    f(p + "W_o.weight", blk.attn.o.weight);
    f(p + "W_o.bias", blk.attn.o.bias);
    f(p + "norm.gamma", blk.norm.gamma);
    f(p + "norm.beta", blk.norm.beta);
  }
}

template <typename T>
std::vector<int64_t> ShapeOf(const T& t) {
  if constexpr (T::ColsAtCompileTime == 1) {
    return {t.size()};
  } else {
    return {t.rows(), t.cols()};
  }
}

// Everything the backward pass needs from one block.
struct BlockTape {
  AttentionSublayerCache self;
  AttentionSublayerCache text;
  bool video = false;
  Matrix adapter_pre;     // W1 v + b1
  Matrix adapter_hidden;  // GELU(pre)
  nn::LayerNormCache video_norm;
  nn::AttentionCache video_attn;
  FeedForwardCache ffn;
};

Matrix AdapterForward(const Matrix& v, const BridgeBlock& block,
                      Matrix* pre_out, Matrix* hidden_out) {
  Matrix pre = nn::LinearForward(v, block.mlp_w1);
  Matrix hidden = nn::Gelu(pre);
  Matrix out = v + nn::LinearForward(hidden, block.mlp_w2);
  if (pre_out) *pre_out = std::move(pre);
  if (hidden_out) *hidden_out = std::move(hidden);
  return out;
}

Matrix VideoSublayer(const Matrix& x, const Matrix& adapted,
                     std::span<const int64_t> audio_pos,
                     std::span<const int64_t> video_pos,
                     const BridgeBlock& block, int n_heads, double rope_base,
                     nn::LayerNormCache* norm_cache,
                     nn::AttentionCache* attn_cache) {
  const Matrix n = nn::LayerNormForward(x, block.norm, norm_cache);
  nn::AttentionWeights w = block.attn;
  w.n_heads = n_heads;
  const nn::RopePositions rope{audio_pos, video_pos, rope_base};
  return x + nn::AttentionForward(n, adapted, w, rope, attn_cache);
}

void CheckCompatible(const BackboneParams& backbone, const BridgeParams& bridge,
                     const VideoTokens& video) {
  Require(bridge.blocks.size() == backbone.blocks.size(), ErrorCode::kShape,
          "bridge has " + std::to_string(bridge.blocks.size()) +
              " blocks, backbone " + std::to_string(backbone.blocks.size()));
  if (!video.present) return;
  video.Validate();
  Require(video.tokens.cols() == bridge.d_video, ErrorCode::kShape,
          "video width " + std::to_string(video.tokens.cols()) +
              " != bridge d_video " + std::to_string(bridge.d_video));
}

// Forward pass over the full bridged network, optionally recording a tape.
Matrix RunBridged(const LatentSequence& a_t, double t, const TextTokens& text,
                  const VideoTokens& video, const BackboneParams& backbone,
                  const BridgeParams& bridge, SublayerTrace* trace,
                  std::vector<BlockTape>* tape, OutputCache* out_cache) {
  a_t.Validate(backbone.config);
  text.Validate(backbone.config.d_text);
  CheckCompatible(backbone, bridge, video);
  const auto& cfg = backbone.config;
  const Vector t_emb = ConditionTimestep(t, backbone);
  const Matrix& memory = TextMemory(text, backbone);
  const Preconditioning pc = PreconditionAt(t, cfg.sigma_data);
  Matrix h = EmbedInput(pc.c_in * a_t.tokens, t_emb, backbone);
  if (tape) tape->resize(backbone.blocks.size());
  for (size_t i = 0; i < backbone.blocks.size(); ++i) {
    const BackboneBlock& b = backbone.blocks[i];
    const BridgeBlock& vb = bridge.blocks[i];
    BlockTape* bt = tape ? &(*tape)[i] : nullptr;
    const int blk = static_cast<int>(i);
    h = AddBlockTime(h, t_emb, b);
    h = SelfAttentionSublayer(h, a_t.positions, b, cfg.rope_base,
                              bt ? &bt->self : nullptr);
    if (trace) trace->push_back({blk, Sublayer::kSelfAttention});
    h = TextSublayer(h, memory, b, bt ? &bt->text : nullptr);
    if (trace) trace->push_back({blk, Sublayer::kTextCrossAttention});
    if (video.present) {
      const Matrix adapted =
          AdapterForward(video.tokens, vb, bt ? &bt->adapter_pre : nullptr,
                         bt ? &bt->adapter_hidden : nullptr);
      h = VideoSublayer(h, adapted, a_t.positions, video.positions, vb,
                        cfg.n_heads, cfg.rope_base,
                        bt ? &bt->video_norm : nullptr,
                        bt ? &bt->video_attn : nullptr);
      if (bt) bt->video = true;
      if (trace) trace->push_back({blk, Sublayer::kVideoCrossAttention});
    }
    h = FeedForwardSublayer(h, b, bt ? &bt->ffn : nullptr);
    if (trace) trace->push_back({blk, Sublayer::kFeedForward});
  }
  return pc.c_skip * a_t.tokens + pc.c_out * OutputHead(h, backbone, out_cache);
}

}  // namespace

void RawVideoTokens::Validate() const {
  Require(n_frames_eff >= 0 && n_patches >= 1, ErrorCode::kShape,
          "raw video needs at least one patch per frame");
  Require(tokens.rows() ==
              static_cast<Eigen::Index>(n_frames_eff) * n_patches,
          ErrorCode::kShape, "raw video rows != frames * patches");
  Require(fps > 0 && stride >= 1, ErrorCode::kConfig,
          "raw video fps/stride must be positive");
  CheckFinite(tokens, "raw video tokens");
}

std::string_view PoolingModeName(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::kFrame: return "frame";
    case PoolingMode::kGrid8: return "grid8";
    case PoolingMode::kGrid16: return "grid16";
  }
  return "?";
}

PoolingMode ParsePoolingMode(std::string_view name) {
  if (name == "frame") return PoolingMode::kFrame;
  if (name == "grid8") return PoolingMode::kGrid8;
  if (name == "grid16") return PoolingMode::kGrid16;
  Fail(ErrorCode::kConfig, "unknown pooling mode '" + std::string(name) +
                               "' (expected frame, grid8, grid16)");
}

void PoolingSpec::Validate() const {
  Require(segment_s > 0 && max_duration_s > 0, ErrorCode::kConfig,
          "pooling durations must be positive");
  const double segments = max_duration_s / segment_s;
  Require(std::abs(segments - std::round(segments)) < 1e-9, ErrorCode::kConfig,
          "max_duration_s must be a multiple of segment_s");
}

int PoolingSpec::TokensPerFrame() const {
  const int g = GridSide(mode);
  return g * g;
}

void VideoTokens::Validate() const {
  if (!present) return;
  Require(static_cast<Eigen::Index>(positions.size()) == tokens.rows(),
          ErrorCode::kShape, "video positions do not match token count");
  Require(tokens.rows() >= 1, ErrorCode::kShape,
          "present video needs at least one token");
  for (size_t i = 1; i < positions.size(); ++i) {
    Require(positions[i] >= positions[i - 1], ErrorCode::kShape,
            "video positions must be non-decreasing");
  }
  CheckFinite(tokens, "video tokens");
}

int PooledTokenCount(const PoolingSpec& spec, double duration_s, double fps,
                     int stride) {
  const double kept = std::min(duration_s, spec.max_duration_s);
  const int frames = static_cast<int>(std::floor(kept * fps / stride + 1e-9));
  return frames * spec.TokensPerFrame();
}

VideoTokens PoolVideo(const RawVideoTokens& raw, const PoolingSpec& spec) {
  raw.Validate();
  spec.Validate();
  const int max_frames = static_cast<int>(
      std::floor(spec.max_duration_s * raw.effective_fps() + 1e-9));
  const int frames = std::min(raw.n_frames_eff, max_frames);
  const int grid = GridSide(spec.mode);
  const int side = static_cast<int>(std::lround(std::sqrt(raw.n_patches)));
  if (grid > 1) {
    Require(side * side == raw.n_patches, ErrorCode::kPooling,
            std::to_string(raw.n_patches) + " patches do not form a square");
    Require(side % grid == 0, ErrorCode::kPooling,
            "patch grid " + std::to_string(side) + "x" + std::to_string(side) +
                " cannot be partitioned into " + std::to_string(grid) + "x" +
                std::to_string(grid) + " cells");
  }
  const int cells = grid * grid;
  const int cell_side = grid > 1 ? side / grid : 1;
  VideoTokens out;
  out.tokens = Matrix::Zero(static_cast<Eigen::Index>(frames) * cells,
                            raw.d_video());
  out.positions.resize(static_cast<size_t>(frames) * cells);
  for (int f = 0; f < frames; ++f) {
    const auto frame = raw.tokens.middleRows(
        static_cast<Eigen::Index>(f) * raw.n_patches, raw.n_patches);
    if (grid == 1) {
      out.tokens.row(f) = frame.colwise().mean();
      out.positions[f] = f;
      continue;
    }
    for (int cy = 0; cy < grid; ++cy) {
      for (int cx = 0; cx < grid; ++cx) {
        const Eigen::Index row = static_cast<Eigen::Index>(f) * cells +
                                 cy * grid + cx;
        for (int py = 0; py < cell_side; ++py) {
          for (int px = 0; px < cell_side; ++px) {
            const int patch = (cy * cell_side + py) * side + cx * cell_side + px;
            out.tokens.row(row) += frame.row(patch);
          }
        }
        out.tokens.row(row) /= static_cast<double>(cell_side * cell_side);
        out.positions[row] = f;
      }
    }
  }
  return out;
}

BridgeParams BridgeParams::ZerosLike() const {
  BridgeParams z;
  z.d_video = d_video;
  z.blocks.reserve(blocks.size());
  for (const auto& b : blocks) {
    z.blocks.push_back({nn::ZerosLike(b.mlp_w1), nn::ZerosLike(b.mlp_w2),
                        nn::ZerosLike(b.attn), nn::ZerosLike(b.norm)});
  }
  return z;
}

std::vector<TensorView> BridgeParams::Views() {
  std::vector<TensorView> out;
  VisitBridge(*this, [&](const std::string& name, auto& t) {
    out.push_back({name, t.data(), t.size(), ShapeOf(t)});
  });
  return out;
}

std::vector<ConstTensorView> BridgeParams::Views() const {
  std::vector<ConstTensorView> out;
  VisitBridge(*this, [&](const std::string& name, const auto& t) {
    out.push_back({name, t.data(), t.size()});
  });
  return out;
}

std::vector<NamedTensor> BridgeParams::Tensors() const {
  std::vector<NamedTensor> out;
  VisitBridge(*this, [&](const std::string& name, const auto& t) {
    out.push_back(MakeTensor(name, t));
  });
  return out;
}

int64_t BridgeParams::ScalarCount() const {
  int64_t n = 0;
  VisitBridge(*this, [&](const std::string&, const auto& t) { n += t.size(); });
  return n;
}

std::vector<std::string> BridgeParams::GroupIds() const {
  std::vector<std::string> ids;
  for (size_t i = 0; i < blocks.size(); ++i) {
    for (const char* g : kBridgeGroups) {
      ids.push_back("bridge." + std::to_string(i) + "." + g);
    }
  }
  return ids;
}

BridgeParams InitBridge(const BackboneConfig& config, int d_video,
                        uint64_t seed) {
  config.Validate();
  Require(d_video >= 1, ErrorCode::kConfig, "d_video must be >= 1");
  const int d = config.d_model;
  RngStream root(seed);
  uint64_t index = 0;
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double stddev) {
    return Matrix(root.Substream(streams::kInit, index++).NormalMatrix(rows,
                                                                       cols) *
                  stddev);
  };
  BridgeParams p;
  p.d_video = d_video;
  p.blocks.resize(config.n_blocks);
  for (auto& b : p.blocks) {
    b.mlp_w1 = {gaussian(d_video, d_video, 1.0 / std::sqrt(d_video)),
                Vector::Zero(d_video)};
    b.mlp_w2 = {gaussian(d_video, d_video, 0.1 / std::sqrt(d_video)),
                Vector::Zero(d_video)};
    b.attn.q = {gaussian(d, d, 1.0 / std::sqrt(d)), Vector::Zero(d)};
    b.attn.kv = {gaussian(2 * d, d_video, 1.0 / std::sqrt(d_video)),
                 Vector::Zero(2 * d)};
    b.attn.o = {Matrix::Zero(d, d), Vector::Zero(d)};
    b.attn.n_heads = config.n_heads;
    b.norm = nn::IdentityNorm(d);
  }
  return p;
}

void LoadBridgeTensors(const TensorArchive& archive, const std::string& prefix,
                       BridgeParams& bridge) {
  VisitBridge(bridge, [&](const std::string& name, auto& t) {
    const NamedTensor& src = archive.Get(prefix + name);
    Require(static_cast<Eigen::Index>(src.values.size()) == t.size(),
            ErrorCode::kIo, "tensor '" + prefix + name + "' has wrong size");
    std::copy(src.values.begin(), src.values.end(), t.data());
  });
}

VideoTokens AdapterMlp(const VideoTokens& v, const BridgeBlock& block) {
  if (!v.present) return v;
  v.Validate();
  Require(v.tokens.cols() == block.mlp_w1.in_features() &&
              block.mlp_w2.out_features() == v.tokens.cols(),
          ErrorCode::kShape, "adapter width does not match video width");
  return {AdapterForward(v.tokens, block, nullptr, nullptr), v.positions,
          true};
}

LatentSequence VideoCrossAttention(const LatentSequence& x,
                                   const VideoTokens& adapted,
                                   const BridgeBlock& block, int n_heads,
                                   double rope_base) {
  if (!adapted.present) return x;
  adapted.Validate();
  CheckFinite(x.tokens, "latent tokens");
  return {VideoSublayer(x.tokens, adapted.tokens, x.positions,
                        adapted.positions, block, n_heads, rope_base, nullptr,
                        nullptr),
          x.positions};
}

LatentSequence BridgedForward(const LatentSequence& a_t, double t,
                              const TextTokens& text,
                              const VideoTokens& video,
                              const BackboneParams& backbone,
                              const BridgeParams& bridge,
                              SublayerTrace* trace) {
  return {RunBridged(a_t, t, text, video, backbone, bridge, trace, nullptr,
                     nullptr),
          a_t.positions};
}

double BridgedLossAndGradient(const LatentSequence& a_t, double t,
                              const TextTokens& text,
                              const VideoTokens& video, const Matrix& target,
                              const BackboneParams& backbone,
                              const BridgeParams& bridge, BridgeParams* grad,
                              double weight) {
  Require(target.rows() == a_t.tokens.rows() &&
              target.cols() == a_t.tokens.cols(),
          ErrorCode::kShape, "target shape does not match latent");
  std::vector<BlockTape> tape;
  OutputCache out_cache;
  const bool backward = grad != nullptr;
  const Matrix pred =
      RunBridged(a_t, t, text, video, backbone, bridge, nullptr,
                 backward ? &tape : nullptr, backward ? &out_cache : nullptr);
  const Matrix diff = pred - target;
  const double n = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / n;
  if (!backward) return loss;

  const auto& cfg = backbone.config;
  const double c_out = PreconditionAt(t, cfg.sigma_data).c_out;
  Matrix dh = OutputHeadBackward(out_cache, backbone,
                                 diff * (2.0 * c_out * weight / n));
  for (int i = static_cast<int>(backbone.blocks.size()) - 1; i >= 0; --i) {
    const BackboneBlock& b = backbone.blocks[i];
    const BridgeBlock& vb = bridge.blocks[i];
    BridgeBlock& gb = grad->blocks[i];
    const BlockTape& bt = tape[i];
    dh = FeedForwardSublayerBackward(bt.ffn, b, dh);
    if (bt.video) {
      nn::AttentionWeights w = vb.attn;
      w.n_heads = cfg.n_heads;
      const nn::RopePositions rope{a_t.positions, video.positions,
                                   cfg.rope_base};
      const auto g =
          nn::AttentionBackward(bt.video_attn, w, rope, dh, &gb.attn, true);
      // Adapter parameters only; the video input itself is a constant.
      const Matrix& d_adapted = g.d_kv_in;
      Matrix d_hidden = nn::LinearBackward(bt.adapter_hidden, vb.mlp_w2,
                                           d_adapted, &gb.mlp_w2);
      d_hidden.array() *= bt.adapter_pre.unaryExpr([](double v) {
        return nn::GeluDerivative(v);
      }).array();
      gb.mlp_w1.weight.noalias() += d_hidden.transpose() * video.tokens;
      gb.mlp_w1.bias += d_hidden.colwise().sum().transpose();
      dh += nn::LayerNormBackward(bt.video_norm, vb.norm, g.d_q_in, &gb.norm);
    }
    dh = TextSublayerBackward(bt.text, b, dh);
    dh = SelfAttentionSublayerBackward(bt.self, a_t.positions, b,
                                       cfg.rope_base, dh);
  }
  return loss;
}

std::set<std::string> TrainableMask(const BackboneParams& backbone,
                                    const BridgeParams& bridge) {
  const std::vector<std::string> ids = bridge.GroupIds();
  std::set<std::string> mask(ids.begin(), ids.end());
  for (const auto& t : backbone.Tensors()) {
    Require(!mask.contains(t.name), ErrorCode::kConfig,
            "trainable id collides with backbone tensor " + t.name);
  }
  return mask;
}

std::set<std::string> BackboneTensorIds(const BackboneParams& backbone) {
  std::set<std::string> ids;
  for (const auto& t : backbone.Tensors()) ids.insert(t.name);
  return ids;
}

}  // namespace foley
