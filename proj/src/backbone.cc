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

#include "foley/backbone.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "foley/rng.h"

namespace foley {
namespace {

// Calls f(name, tensor) for every tensor in a fixed order. Works for both
// const and mutable params.
template <typename Params, typename F>
void VisitLinear(const std::string& name, Params& l, F&& f) {
  f(name + ".weight", l.weight);
  f(name + ".bias", l.bias);
}

template <typename Params, typename F>
void VisitNorm(const std::string& name, Params& n, F&& f) {
  f(name + ".gamma", n.gamma);
  f(name + ".beta", n.beta);
}

template <typename Params, typename F>
void VisitAttention(const std::string& name, Params& a, F&& f) {
  VisitLinear(name + ".q", a.q, f);
  VisitLinear(name + ".kv", a.kv, f);
  VisitLinear(name + ".o", a.o, f);
}

template <typename Params, typename F>
void VisitBackbone(Params& p, F&& f) {
  VisitLinear("input_proj", p.input_proj, f);
  VisitLinear("time_proj", p.time_proj, f);
  f("null_text", p.null_text);
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string prefix = "blocks." + std::to_string(i);
    VisitLinear(prefix + ".time_shift", b.time_shift, f);
    VisitNorm(prefix + ".norm_self", b.norm_self, f);
    VisitAttention(prefix + ".self_attn", b.self_attn, f);
    VisitNorm(prefix + ".norm_text", b.norm_text, f);
    VisitAttention(prefix + ".text_attn", b.text_attn, f);
    VisitNorm(prefix + ".norm_ffn", b.norm_ffn, f);
    VisitLinear(prefix + ".ffn_in", b.ffn_in, f);
    VisitLinear(prefix + ".ffn_out", b.ffn_out, f);
  }
  VisitNorm("final_norm", p.final_norm, f);
  VisitLinear("output_proj", p.output_proj, f);
}

template <typename Derived>
void RoundToFloat(Eigen::MatrixBase<Derived>& m) {
  m = m.template cast<float>().template cast<double>();
}

// Gaussian matrix orthogonalized by QR and scaled so its spectral norm is
// `gain`.
Matrix Orthogonal(Eigen::Index rows, Eigen::Index cols, double gain,
                  RngStream rng) {
  const bool tall = rows >= cols;
  const Eigen::MatrixXd g = tall ? Eigen::MatrixXd(rng.NormalMatrix(rows, cols))
                                 : Eigen::MatrixXd(rng.NormalMatrix(cols, rows));
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() *
                      Eigen::MatrixXd::Identity(g.rows(), g.cols());
  // Fix column signs so the factorization is unique.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  Matrix out = tall ? Matrix(q) : Matrix(q.transpose());
  return out * gain;
}

class Initializer {
 public:
  explicit Initializer(uint64_t seed) : root_(seed) {}

  RngStream Next() { return root_.Substream(streams::kInit, index_++); }

  nn::Linear Linear(Eigen::Index in, Eigen::Index out, double gain) {
    nn::Linear l;
    l.weight = Orthogonal(out, in, gain, Next());
    l.bias = Vector(Next().NormalMatrix(out, 1).col(0)) * 0.02;
    return l;
  }

  nn::LayerNorm Norm(Eigen::Index width) {
    nn::LayerNorm n;
    n.gamma = Vector::Ones(width) + Vector(Next().NormalMatrix(width, 1)) * 0.05;
    n.beta = Vector(Next().NormalMatrix(width, 1)) * 0.02;
    return n;
  }

  nn::AttentionWeights Attention(Eigen::Index d_model, Eigen::Index d_kv_in,
                                 int n_heads, double out_gain) {
    nn::AttentionWeights a;
    a.q = Linear(d_model, d_model, 1.0);
    a.kv = Linear(d_kv_in, 2 * d_model, 1.0);
    a.o = Linear(d_model, d_model, out_gain);
    a.n_heads = n_heads;
    return a;
  }

 private:
  RngStream root_;
  uint64_t index_ = 0;
};

uint64_t Fnv1a(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

void BackboneConfig::Validate() const {
  auto positive = [](int v, const char* name) {
    Require(v >= 1, ErrorCode::kConfig,
            std::string(name) + " must be >= 1, got " + std::to_string(v));
  };
  positive(n_blocks, "n_blocks");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_text, "d_text");
  positive(s_a_max, "s_a_max");
  positive(ffn_mult, "ffn_mult");
  Require(d_model % n_heads == 0, ErrorCode::kConfig,
          "d_model " + std::to_string(d_model) + " not divisible by n_heads " +
              std::to_string(n_heads));
  Require(d_head() % 2 == 0, ErrorCode::kConfig,
          "head width must be even for rotary embeddings");
  Require(rope_base > 1.0, ErrorCode::kConfig, "rope_base must be > 1");
  Require(sigma_data > 0.0 && std::isfinite(sigma_data), ErrorCode::kConfig,
          "sigma_data must be finite and > 0");
}

LatentSequence LatentSequence::FromTokens(Matrix tokens, int64_t first) {
  LatentSequence s;
  s.positions.resize(tokens.rows());
  for (Eigen::Index i = 0; i < tokens.rows(); ++i) s.positions[i] = first + i;
  s.tokens = std::move(tokens);
  return s;
}

void LatentSequence::Validate(const BackboneConfig& config) const {
  Require(tokens.cols() == config.d_model, ErrorCode::kShape,
          "latent width " + std::to_string(tokens.cols()) + " != d_model " +
              std::to_string(config.d_model));
  Require(tokens.rows() >= 1 && tokens.rows() <= config.s_a_max,
          ErrorCode::kShape,
          "latent length " + std::to_string(tokens.rows()) +
              " outside [1, s_a_max]");
  Require(static_cast<Eigen::Index>(positions.size()) == tokens.rows(),
          ErrorCode::kShape, "latent positions do not match length");
  for (size_t i = 1; i < positions.size(); ++i) {
    Require(positions[i] > positions[i - 1], ErrorCode::kShape,
            "latent positions must be strictly increasing");
  }
  CheckFinite(tokens, "latent tokens");
}

void TextTokens::Validate(int d_text) const {
  if (!present) return;
  Require(tokens.rows() >= 1, ErrorCode::kShape,
          "present text needs at least one token");
  Require(tokens.cols() == d_text, ErrorCode::kShape, "text width mismatch");
  CheckFinite(tokens, "text tokens");
}

TextTokens EncodePrompt(std::string_view prompt, int d_text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(prompt)};
  for (std::string w; in >> w;) words.push_back(w);
  if (words.empty()) return TextTokens::Absent();
  TextTokens text;
  text.tokens.resize(static_cast<Eigen::Index>(words.size()), d_text);
  for (size_t i = 0; i < words.size(); ++i) {
    RngStream rng(Fnv1a(words[i]));
    for (int j = 0; j < d_text; ++j) text.tokens(i, j) = rng.Normal();
  }
  return text;
}

std::vector<NamedTensor> BackboneParams::Tensors() const {
  std::vector<NamedTensor> out;
  VisitBackbone(*this, [&](const std::string& name, const auto& t) {
    out.push_back(MakeTensor(name, t));
  });
  return out;
}

TensorArchive BackboneParams::ToArchive() const {
  TensorArchive a;
  a.dtype = DType::kF32;
  a.tensors = Tensors();
  a.meta = {{"kind", "backbone"},
            {"n_blocks", config.n_blocks},
            {"d_model", config.d_model},
            {"n_heads", config.n_heads},
            {"d_text", config.d_text},
            {"s_a_max", config.s_a_max},
            {"rope_base", config.rope_base},
            {"ffn_mult", config.ffn_mult},
            {"sigma_data", config.sigma_data}};
  return a;
}

int64_t BackboneParams::ScalarCount() const {
  int64_t n = 0;
  VisitBackbone(*this, [&](const std::string&, const auto& t) { n += t.size(); });
  return n;
}

BackboneParams InitBackbone(const BackboneConfig& config, uint64_t seed) {
  config.Validate();
  const int d = config.d_model;
  // Sublayer outputs are scaled down so a unit-norm residual input yields a
  // bounded update; the residual stream keeps most of its input.
  const double out_gain = 1.0 / std::sqrt(2.0 * config.n_blocks);
  Initializer init(seed);
  BackboneParams p;
  p.config = config;
  p.input_proj = init.Linear(d, d, 1.0);
  p.time_proj = init.Linear(d, d, 0.5);
  p.null_text = init.Next().NormalMatrix(1, config.d_text);
  p.blocks.resize(config.n_blocks);
  for (auto& b : p.blocks) {
    b.time_shift = init.Linear(d, d, 0.1);
    b.norm_self = init.Norm(d);
    b.self_attn = init.Attention(d, d, config.n_heads, out_gain);
    b.norm_text = init.Norm(d);
    b.text_attn = init.Attention(d, config.d_text, config.n_heads, out_gain);
    b.norm_ffn = init.Norm(d);
    b.ffn_in = init.Linear(d, static_cast<Eigen::Index>(d) * config.ffn_mult,
                           1.0);
    b.ffn_out = init.Linear(static_cast<Eigen::Index>(d) * config.ffn_mult, d,
                            out_gain);
  }
  p.final_norm = init.Norm(d);
  // Tied read-out: the head inverts the input embedding, so the untrained
  // stack starts near an identity map on the latent (a usable prior).
  p.output_proj = init.Linear(d, d, 1.0);
  p.output_proj.weight = p.input_proj.weight.transpose();
  VisitBackbone(p, [](const std::string&, auto& t) { RoundToFloat(t); });
  return p;
}

BackboneParams BackboneFromArchive(const TensorArchive& archive) {
  const auto& m = archive.meta;
  Require(m.value("kind", "") == "backbone", ErrorCode::kIo,
          "archive is not a backbone");
  BackboneConfig c;
  c.n_blocks = m.at("n_blocks").get<int>();
  c.d_model = m.at("d_model").get<int>();
  c.n_heads = m.at("n_heads").get<int>();
  c.d_text = m.at("d_text").get<int>();
  c.s_a_max = m.at("s_a_max").get<int>();
  c.rope_base = m.at("rope_base").get<double>();
  c.ffn_mult = m.at("ffn_mult").get<int>();
  c.sigma_data = m.value("sigma_data", BackboneConfig().sigma_data);
  // Initialize for shapes, then overwrite every tensor.
  BackboneParams p = InitBackbone(c, 0);
  VisitBackbone(p, [&](const std::string& name, auto& t) {
    const NamedTensor& src = archive.Get(name);
    Require(static_cast<Eigen::Index>(src.values.size()) == t.size(),
            ErrorCode::kIo, "tensor '" + name + "' has wrong size");
    std::copy(src.values.begin(), src.values.end(), t.data());
  });
  return p;
}

Vector TimestepEmbed(double t, int dim) {
  Require(t >= 0.0 && t <= 1.0, ErrorCode::kDomain,
          "timestep " + std::to_string(t) + " outside [0, 1]");
  Require(dim >= 2 && dim % 2 == 0, ErrorCode::kConfig,
          "timestep embedding width must be even");
  const int half = dim / 2;
  Vector e(dim);
  for (int k = 0; k < half; ++k) {
    const double freq =
        1000.0 * std::pow(10000.0, -static_cast<double>(k) / half);
    e(k) = std::sin(t * freq);
    e(half + k) = std::cos(t * freq);
  }
  return e;
}

Matrix Attention(const Matrix& q_in, const Matrix& kv_in,
                 const nn::AttentionWeights& weights,
                 const std::optional<nn::RopePositions>& rope) {
  return nn::AttentionForward(q_in, kv_in, weights, rope, nullptr);
}

std::string_view SublayerName(Sublayer s) {
  switch (s) {
    case Sublayer::kSelfAttention: return "SA";
    case Sublayer::kTextCrossAttention: return "TxCA";
    case Sublayer::kVideoCrossAttention: return "VidCA";
    case Sublayer::kFeedForward: return "FFN";
  }
  return "?";
}

Vector ConditionTimestep(double t, const BackboneParams& params) {
  const Vector features = TimestepEmbed(t, params.config.d_model);
  return params.time_proj.weight * features + params.time_proj.bias;
}

Preconditioning PreconditionAt(double t, double sigma_data) {
  const double alpha = std::cos(0.5 * std::numbers::pi * t);
  const double sigma = std::sin(0.5 * std::numbers::pi * t);
  const double s2 = sigma_data * sigma_data;
  const double var_in = alpha * alpha * s2 + sigma * sigma;
  Preconditioning p;
  p.c_in = 1.0 / std::sqrt(var_in);
  p.c_skip = alpha * sigma * (1.0 - s2) / var_in;
  const double var_v = alpha * alpha + sigma * sigma * s2;
  p.c_out = std::sqrt(std::max(var_v - p.c_skip * p.c_skip * var_in, 0.0));
  return p;
}

Matrix EmbedInput(const Matrix& a_t, const Vector& t_emb,
                  const BackboneParams& params) {
  Matrix h = nn::LinearForward(a_t, params.input_proj);
  h.rowwise() += t_emb.transpose();
  return h;
}

Matrix AddBlockTime(const Matrix& x, const Vector& t_emb,
                    const BackboneBlock& block) {
  const Vector shift = block.time_shift.weight * t_emb + block.time_shift.bias;
  Matrix out = x;
  out.rowwise() += shift.transpose();
  return out;
}

Matrix SelfAttentionSublayer(const Matrix& x,
                             std::span<const int64_t> positions,
                             const BackboneBlock& block, double rope_base,
                             AttentionSublayerCache* cache) {
  const Matrix n = nn::LayerNormForward(x, block.norm_self,
                                        cache ? &cache->norm : nullptr);
  const nn::RopePositions rope{positions, positions, rope_base};
  return x + nn::AttentionForward(n, n, block.self_attn, rope,
                                  cache ? &cache->attn : nullptr);
}

const Matrix& TextMemory(const TextTokens& text, const BackboneParams& params) {
  return text.present ? text.tokens : params.null_text;
}

Matrix TextSublayer(const Matrix& x, const Matrix& text_memory,
                    const BackboneBlock& block, AttentionSublayerCache* cache) {
  const Matrix n = nn::LayerNormForward(x, block.norm_text,
                                        cache ? &cache->norm : nullptr);
  return x + nn::AttentionForward(n, text_memory, block.text_attn,
                                  std::nullopt,
                                  cache ? &cache->attn : nullptr);
}

Matrix FeedForwardSublayer(const Matrix& x, const BackboneBlock& block,
                           FeedForwardCache* cache) {
  Matrix n = nn::LayerNormForward(x, block.norm_ffn,
                                  cache ? &cache->norm : nullptr);
  Matrix pre = nn::LinearForward(n, block.ffn_in);
  Matrix hidden = nn::Gelu(pre);
  Matrix out = x + nn::LinearForward(hidden, block.ffn_out);
  if (cache != nullptr) {
    cache->normed = std::move(n);
    cache->pre_activation = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

Matrix OutputHead(const Matrix& x, const BackboneParams& params,
                  OutputCache* cache) {
  Matrix n = nn::LayerNormForward(x, params.final_norm,
                                  cache ? &cache->norm : nullptr);
  Matrix out = nn::LinearForward(n, params.output_proj);
  if (cache != nullptr) cache->normed = std::move(n);
  return out;
}

Matrix SelfAttentionSublayerBackward(const AttentionSublayerCache& cache,
                                     std::span<const int64_t> positions,
                                     const BackboneBlock& block,
                                     double rope_base, const Matrix& dy) {
  const nn::RopePositions rope{positions, positions, rope_base};
  const auto g =
      nn::AttentionBackward(cache.attn, block.self_attn, rope, dy, nullptr,
                            /*need_kv_grad=*/true);
  // Queries, keys and values all read the same normalized input.
  const Matrix d_norm = g.d_q_in + g.d_kv_in;
  return dy + nn::LayerNormBackward(cache.norm, block.norm_self, d_norm,
                                    nullptr);
}

Matrix TextSublayerBackward(const AttentionSublayerCache& cache,
                            const BackboneBlock& block, const Matrix& dy) {
  const auto g = nn::AttentionBackward(cache.attn, block.text_attn,
                                       std::nullopt, dy, nullptr,
                                       /*need_kv_grad=*/false);
  return dy + nn::LayerNormBackward(cache.norm, block.norm_text, g.d_q_in,
                                    nullptr);
}

Matrix FeedForwardSublayerBackward(const FeedForwardCache& cache,
                                   const BackboneBlock& block,
                                   const Matrix& dy) {
  Matrix d_hidden = nn::LinearBackward(cache.hidden, block.ffn_out, dy,
                                       nullptr);
  d_hidden.array() *= cache.pre_activation.unaryExpr([](double v) {
    return nn::GeluDerivative(v);
  }).array();
  const Matrix d_norm =
      nn::LinearBackward(cache.normed, block.ffn_in, d_hidden, nullptr);
  return dy + nn::LayerNormBackward(cache.norm, block.norm_ffn, d_norm,
                                    nullptr);
}

Matrix OutputHeadBackward(const OutputCache& cache,
                          const BackboneParams& params, const Matrix& dy) {
  const Matrix d_norm =
      nn::LinearBackward(cache.normed, params.output_proj, dy, nullptr);
  return nn::LayerNormBackward(cache.norm, params.final_norm, d_norm,
                               nullptr);
}

LatentSequence BackboneBlockForward(const LatentSequence& x,
                                    const TextTokens& text,
                                    const BackboneParams& params, int block,
                                    const Vector& t_emb,
                                    SublayerTrace* trace) {
  Require(block >= 0 && block < static_cast<int>(params.blocks.size()),
          ErrorCode::kConfig, "block index out of range");
  x.Validate(params.config);
  text.Validate(params.config.d_text);
  const BackboneBlock& b = params.blocks[block];
  Matrix h = AddBlockTime(x.tokens, t_emb, b);
  h = SelfAttentionSublayer(h, x.positions, b, params.config.rope_base,
                            nullptr);
  if (trace) trace->push_back({block, Sublayer::kSelfAttention});
  h = TextSublayer(h, TextMemory(text, params), b, nullptr);
  if (trace) trace->push_back({block, Sublayer::kTextCrossAttention});
  h = FeedForwardSublayer(h, b, nullptr);
  if (trace) trace->push_back({block, Sublayer::kFeedForward});
  return {std::move(h), x.positions};
}

LatentSequence BackboneForward(const LatentSequence& a_t, double t,
                               const TextTokens& text,
                               const BackboneParams& params,
                               SublayerTrace* trace) {
  a_t.Validate(params.config);
  const Vector t_emb = ConditionTimestep(t, params);
  const Preconditioning pc = PreconditionAt(t, params.config.sigma_data);
  LatentSequence h{EmbedInput(pc.c_in * a_t.tokens, t_emb, params),
                   a_t.positions};
  for (int i = 0; i < static_cast<int>(params.blocks.size()); ++i) {
    h = BackboneBlockForward(h, text, params, i, t_emb, trace);
  }
  return {pc.c_skip * a_t.tokens +
              pc.c_out * OutputHead(h.tokens, params, nullptr),
          a_t.positions};
}

}  // namespace foley
