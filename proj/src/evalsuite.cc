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


#include "foley/evalsuite.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <tuple>

#include "foley/diffusion.h"
#include "foley/rng.h"

namespace foley {
namespace {

std::string FormatDouble(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Matrix Covariance(const Matrix& x, const Vector& mean) {
  const Matrix centered = x.rowwise() - mean.transpose();
  return (centered.transpose() * centered) /
         static_cast<double>(x.rows() - 1);
}

// Eigen-decomposition of a symmetric matrix with tolerance-checked clamping
// of negative eigenvalues to zero.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> SymmetricEigen(
    const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Require(es.info() == Eigen::Success, ErrorCode::kNumeric,
          std::string("eigendecomposition failed for ") + what);
  const double min_eig = es.eigenvalues().minCoeff();
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  Require(min_eig >= -kFdEigenTolerance * scale, ErrorCode::kNumeric,
          std::string("matrix square root of ") + what +
              " failed: min eigenvalue " + FormatDouble(min_eig));
  return es;
}

Eigen::MatrixXd SqrtPsd(const Eigen::MatrixXd& m, const char* what) {
  const auto es = SymmetricEigen(m, what);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() *
         es.eigenvectors().transpose();
}

// Summary statistics a toy embedder projects: per-channel mean, RMS and
// mean absolute frame-to-frame change.
Vector LatentFeatures(const Matrix& latent) {
  const Eigen::Index d = latent.cols();
  Vector f(3 * d);
  f.segment(0, d) = latent.colwise().mean().transpose();
  f.segment(d, d) =
      (latent.array().square().colwise().mean().sqrt()).matrix().transpose();
  if (latent.rows() > 1) {
    const Matrix diff = latent.bottomRows(latent.rows() - 1) -
                        latent.topRows(latent.rows() - 1);
    f.segment(2 * d, d) = diff.cwiseAbs().colwise().mean().transpose();
  } else {
    f.segment(2 * d, d).setZero();
  }
  return f;
}

uint64_t SlotSeed(const std::string& id) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

EmbeddingProvider RandomProjectionEmbedder(const std::string& id,
                                           int latent_dim, int out_dim) {
  RngStream rng(SlotSeed("embed:" + id));
  const Matrix proj = rng.NormalMatrix(out_dim, 3 * latent_dim) /
                      std::sqrt(3.0 * latent_dim);
  return {"toy-" + id + "-randproj", [proj](const Matrix& latent) -> Vector {
            const Vector f = LatentFeatures(latent);
            Require(f.size() == proj.cols(), ErrorCode::kShape,
                    "embedder latent width mismatch");
            return proj * f;
          }};
}

// Per-band energy over channel bands, normalized to a distribution.
Vector BandEnergies(const Matrix& latent, int bands) {
  const Eigen::Index d = latent.cols();
  Require(d >= bands, ErrorCode::kShape, "fewer channels than bands");
  Vector e(bands);
  for (int b = 0; b < bands; ++b) {
    const Eigen::Index lo = b * d / bands;
    const Eigen::Index hi = (b + 1) * d / bands;
    e(b) = latent.middleCols(lo, hi - lo).array().square().sum() /
           static_cast<double>(latent.rows());
  }
  return e;
}

ClassifierProvider EnergyHistogramClassifier(const std::string& id,
                                             int bands) {
  return {"toy-" + id + "-energyhist" + std::to_string(bands),
          [bands](const Matrix& latent) -> Vector {
            const Vector e = BandEnergies(latent, bands).array() + 1e-3;
            return e / e.sum();
          }};
}

}  // namespace

void PosteriorSet::Validate() const {
  for (Eigen::Index i = 0; i < posteriors.rows(); ++i) {
    Require((posteriors.row(i).array() >= 0.0).all(), ErrorCode::kNumeric,
            "posterior row " + std::to_string(i) + " has negative entries");
    Require(std::abs(posteriors.row(i).sum() - 1.0) <= 1e-6,
            ErrorCode::kNumeric,
            "posterior row " + std::to_string(i) + " does not sum to 1");
  }
}

double FrechetDistance(const EmbeddingSet& a, const EmbeddingSet& b) {
  const Matrix& x = a.embeddings;
  const Matrix& y = b.embeddings;
  Require(x.cols() == y.cols(), ErrorCode::kShape,
          "embedding widths differ: " + std::to_string(x.cols()) + " vs " +
              std::to_string(y.cols()));
  Require(x.rows() >= 2 && y.rows() >= 2, ErrorCode::kInput,
          "Frechet distance needs at least 2 embeddings per set");
  CheckFinite(x, "embeddings");
  CheckFinite(y, "embeddings");
  const Vector mu_a = x.colwise().mean().transpose();
  const Vector mu_b = y.colwise().mean().transpose();
  const Eigen::MatrixXd cov_a = Covariance(x, mu_a);
  const Eigen::MatrixXd cov_b = Covariance(y, mu_b);
  // Tr((S_a S_b)^1/2) = Tr((S_a^1/2 S_b S_a^1/2)^1/2), which is symmetric.
  const Eigen::MatrixXd root_a = SqrtPsd(cov_a, "covariance");
  const auto es = SymmetricEigen(root_a * cov_b * root_a, "covariance product");
  const double trace_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() -
         2.0 * trace_sqrt;
}

double MeanKl(const PosteriorSet& ref, const PosteriorSet& gen) {
  Require(ref.posteriors.rows() == gen.posteriors.rows() &&
              ref.posteriors.cols() == gen.posteriors.cols(),
          ErrorCode::kPairing,
          "posterior sets are not paired (" +
              std::to_string(ref.posteriors.rows()) + " vs " +
              std::to_string(gen.posteriors.rows()) + " rows)");
  Require(ref.posteriors.rows() >= 1, ErrorCode::kPairing,
          "no posterior pairs");
  ref.Validate();
  gen.Validate();
  double total = 0.0;
  for (Eigen::Index i = 0; i < ref.posteriors.rows(); ++i) {
    for (Eigen::Index j = 0; j < ref.posteriors.cols(); ++j) {
      const double p = ref.posteriors(i, j);
      if (p <= 0.0) continue;
      total += p * std::log(p / std::max(gen.posteriors(i, j), kKlClamp));
    }
  }
  return total / static_cast<double>(ref.posteriors.rows());
}

double IbScore(std::span<const IbPair> pairs) {
  Require(!pairs.empty(), ErrorCode::kPairing, "no audio/frame pairs");
  double total = 0.0;
  for (const auto& p : pairs) {
    Require(p.frames.rows() >= 1, ErrorCode::kPairing,
            "clip " + p.clip_id + " has no frame embeddings");
    Require(p.frames.cols() == p.audio.size(), ErrorCode::kShape,
            "clip " + p.clip_id + " audio/frame embedding widths differ");
    const Vector frame = p.frames.colwise().mean().transpose();
    const double na = p.audio.norm();
    const double nf = frame.norm();
    Require(na > 0.0 && nf > 0.0 && std::isfinite(na) && std::isfinite(nf),
            ErrorCode::kNumeric,
            "zero-norm or non-finite embedding for clip " + p.clip_id);
    total += p.audio.dot(frame) / (na * nf);
  }
  return total / static_cast<double>(pairs.size());
}

std::vector<double> OnsetDetect(const Matrix& latent, double threshold,
                                double fps) {
  Require(threshold > 0.0 && fps > 0.0, ErrorCode::kDomain,
          "onset threshold and fps must be positive");
  const Eigen::Index n = latent.rows();
  std::vector<double> out;
  if (n < 2) return out;
  const Vector norms = latent.rowwise().norm();
  std::vector<double> novelty(n, 0.0);
  for (Eigen::Index k = 1; k < n; ++k) {
    novelty[k] = std::max(0.0, norms(k) - norms(k - 1));
  }
  double prev = 0.0;
  Eigen::Index last = -1000;
  for (Eigen::Index k = 0; k < n; ++k) {
    double sum = 0.0;
    for (Eigen::Index j = std::max<Eigen::Index>(0, k - 2); j <= k; ++j) {
      sum += novelty[j];
    }
    const double smoothed = sum / 3.0;
    if (smoothed >= threshold && prev < threshold && k - last > 2) {
      out.push_back(static_cast<double>(k) / fps);
      last = k;
    }
    prev = smoothed;
  }
  return out;
}

double Desync(std::span<const double> pred, std::span<const double> truth) {
  if (pred.empty() && truth.empty()) return 0.0;
  // Greedy matching: closest admissible pair first.
  std::vector<std::tuple<double, size_t, size_t>> candidates;
  for (size_t i = 0; i < pred.size(); ++i) {
    for (size_t j = 0; j < truth.size(); ++j) {
      const double gap = std::abs(pred[i] - truth[j]);
      if (gap <= kDesyncWindowS) candidates.emplace_back(gap, i, j);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  std::vector<bool> used_pred(pred.size(), false);
  std::vector<bool> used_truth(truth.size(), false);
  double total = 0.0;
  size_t matches = 0;
  for (const auto& [gap, i, j] : candidates) {
    if (used_pred[i] || used_truth[j]) continue;
    used_pred[i] = used_truth[j] = true;
    total += gap;
    ++matches;
  }
  const size_t unmatched = (pred.size() - matches) + (truth.size() - matches);
  total += kDesyncPenaltyS * static_cast<double>(unmatched);
  return total / static_cast<double>(matches + unmatched);
}

Providers ToyProviders(const SynthSpec& spec) {
  spec.Validate();
  Providers p;
  p.embedders["vgg"] = RandomProjectionEmbedder("vgg", spec.latent_dim, 16);
  p.embedders["panns"] = RandomProjectionEmbedder("panns", spec.latent_dim, 16);
  p.embedders["passt"] = RandomProjectionEmbedder("passt", spec.latent_dim, 16);
  p.classifiers["panns"] = EnergyHistogramClassifier("panns", 8);
  p.classifiers["passt"] = EnergyHistogramClassifier("passt", 16);
  Matrix patterns(spec.n_classes, spec.d_video);
  for (int c = 0; c < spec.n_classes; ++c) {
    patterns.row(c) = ClassVideoPattern(c, spec).transpose();
  }
  const int classes = spec.n_classes;
  IbProvider ib;
  ib.id = "toy-imagebind-classbands";
  ib.audio = [classes](const Matrix& latent) -> Vector {
    const Vector e = BandEnergies(latent, classes).array() + 1e-3;
    return e / e.sum();
  };
  ib.image = [patterns](const Vector& token) -> Vector {
    Require(token.size() == patterns.cols(), ErrorCode::kShape,
            "image provider width mismatch");
    const Vector logits = 4.0 * patterns * token;
    const Vector w = (logits.array() - logits.maxCoeff()).exp();
    return w / w.sum();
  };
  ib.frame_stride = 8;
  p.ib = std::move(ib);
  return p;
}

std::string EvalConfig::Canonical() const {
  std::vector<std::string> lines = {
      "eval.cfg_scale=" + FormatDouble(cfg_scale),
      "eval.n_steps=" + std::to_string(n_steps),
      "eval.seed=" + std::to_string(seed),
      "eval.no_text=" + std::string(no_text ? "true" : "false"),
      "eval.use_video=" + std::string(use_video ? "true" : "false"),
      "eval.pooling=" + std::string(PoolingModeName(pooling.mode)),
      "eval.max_duration_s=" + FormatDouble(pooling.max_duration_s),
      "eval.segment_s=" + FormatDouble(pooling.segment_s),
      "eval.onset_threshold=" + FormatDouble(onset_threshold),
      "eval.latent_fps=" + FormatDouble(latent_fps),
      "eval.ground_truth=" + std::string(ground_truth ? "true" : "false"),
      "run.config_hash=" + run_config_hash,
  };
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string EvalConfig::Hash() const { return Sha256Hex(Canonical()); }

std::string EvalReport::ToKeyValue() const {
  std::vector<std::string> lines;
  for (const auto& [k, v] : metrics) {
    lines.push_back("metric." + k + "=" + FormatDouble(v));
  }
  for (const auto& [k, v] : meta.items()) {
    lines.push_back("meta." + k + "=" +
                    (v.is_string() ? v.get<std::string>() : v.dump()));
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string EvalReport::ToTableRow() const {
  std::string header = "|";
  std::string row = "|";
  for (const char* col : kReportColumns) {
    header += " " + std::string(col) + " |";
    const auto it = metrics.find(col);
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %.4f |",
                  it == metrics.end() ? NAN : it->second);
    row += buf;
  }
  return header + "\n" + row + "\n";
}

EvalReport Evaluate(std::span<const EvalItem> items,
                    const BackboneParams& backbone, const BridgeParams& bridge,
                    const Providers& providers, const EvalConfig& cfg) {
  Require(items.size() >= 2, ErrorCode::kInput,
          "evaluation needs at least 2 clips");
  for (const char* slot : {"vgg", "panns", "passt"}) {
    Require(providers.embedders.contains(slot), ErrorCode::kConfig,
            std::string("missing embedding provider '") + slot + "'");
  }
  for (const char* slot : {"panns", "passt"}) {
    Require(providers.classifiers.contains(slot), ErrorCode::kConfig,
            std::string("missing classifier provider '") + slot + "'");
  }
  Require(providers.ib.has_value(), ErrorCode::kConfig,
          "missing image-binding provider");
  Require(cfg.n_steps >= 1, ErrorCode::kConfig, "n_steps must be >= 1");
  cfg.pooling.Validate();

  const int n = static_cast<int>(items.size());
  const RngStream root(cfg.seed);
  EvalReport report;
  report.generated.resize(n);
  std::vector<double> desync(n);
  ParallelFor(n, [&](int i) {
    const SynthClip& clip = items[i].clip;
    if (cfg.ground_truth) {
      report.generated[i] = clip.a0.tokens;
    } else {
      const TextTokens text =
          cfg.no_text ? TextTokens::Absent()
                      : EncodePrompt(clip.prompt, backbone.config.d_text);
      const VideoTokens video = cfg.use_video
                                    ? PoolVideo(clip.video, cfg.pooling)
                                    : VideoTokens::Absent();
      report.generated[i] =
          Sample(backbone, bridge, text, video,
                 static_cast<int>(clip.a0.length()), cfg.n_steps,
                 cfg.cfg_scale, root.Substream(streams::kEval, i))
              .tokens;
    }
    desync[i] = Desync(OnsetDetect(report.generated[i], cfg.onset_threshold,
                                   cfg.latent_fps),
                       clip.onsets_s);
  });

  auto embed = [&](const EmbeddingProvider& p, bool generated) {
    EmbeddingSet set{Matrix(), p.id};
    for (int i = 0; i < n; ++i) {
      const Vector e = p.embed(generated ? report.generated[i]
                                         : items[i].clip.a0.tokens);
      if (i == 0) set.embeddings.resize(n, e.size());
      set.embeddings.row(i) = e.transpose();
    }
    return set;
  };
  auto classify = [&](const ClassifierProvider& p, bool generated) {
    PosteriorSet set;
    for (int i = 0; i < n; ++i) {
      const Vector e = p.posterior(generated ? report.generated[i]
                                             : items[i].clip.a0.tokens);
      if (i == 0) set.posteriors.resize(n, e.size());
      set.posteriors.row(i) = e.transpose();
    }
    return set;
  };

  const std::map<std::string, std::string> fd_columns = {
      {"vgg", "FD-VGG"}, {"panns", "FD-PANNs"}, {"passt", "FD-PaSST"}};
  for (const auto& [slot, column] : fd_columns) {
    const EmbeddingProvider& p = providers.embedders.at(slot);
    report.metrics[column] = FrechetDistance(embed(p, false), embed(p, true));
    report.meta["provider." + column] = p.id;
  }
  const std::map<std::string, std::string> kl_columns = {
      {"panns", "KL-PANNs"}, {"passt", "KL-PaSST"}};
  for (const auto& [slot, column] : kl_columns) {
    const ClassifierProvider& p = providers.classifiers.at(slot);
    report.metrics[column] = MeanKl(classify(p, false), classify(p, true));
    report.meta["provider." + column] = p.id;
  }

  const IbProvider& ib = *providers.ib;
  std::vector<IbPair> pairs;
  for (int i = 0; i < n; ++i) {
    const SynthClip& clip = items[i].clip;
    const VideoTokens frames = PoolVideo(clip.video, PoolingSpec{});
    std::vector<Vector> sampled;
    for (Eigen::Index f = 0; f < frames.length(); f += ib.frame_stride) {
      sampled.push_back(ib.image(frames.tokens.row(f).transpose()));
    }
    IbPair pair{items[i].id, ib.audio(report.generated[i]),
                Matrix(static_cast<Eigen::Index>(sampled.size()),
                       sampled.empty() ? 0 : sampled[0].size())};
    for (size_t s = 0; s < sampled.size(); ++s) {
      pair.frames.row(static_cast<Eigen::Index>(s)) = sampled[s].transpose();
    }
    pairs.push_back(std::move(pair));
  }
  report.metrics["IB"] = IbScore(pairs);
  report.meta["provider.IB"] = ib.id;

  double total = 0.0;
  for (double d : desync) total += d;
  report.metrics["DeSync"] = total / n;
  report.meta["provider.DeSync"] =
      "onset-detector-vs-ground-truth (stand-in for a learned sync scorer)";

  for (const auto& [k, v] : report.metrics) {
    Require(std::isfinite(v), ErrorCode::kNumeric,
            "metric " + k + " is not finite");
  }
  report.meta["clip_count"] = n;
  report.meta["config_hash"] = cfg.Hash();
  report.meta["seed"] = cfg.seed;
  report.meta["no_text"] = cfg.no_text;
  report.meta["use_video"] = cfg.use_video;
  report.meta["cfg_scale"] = cfg.cfg_scale;
  report.meta["n_steps"] = cfg.n_steps;
  report.meta["pooling"] = std::string(PoolingModeName(cfg.pooling.mode));
  report.meta["ground_truth"] = cfg.ground_truth;
  report.meta["kl_direction"] = "KL(ref||gen), paired per clip";
  return report;
}

}  // namespace foley
