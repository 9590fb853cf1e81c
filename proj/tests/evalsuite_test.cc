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

#include <cmath>
#include <numbers>
#include <vector>

#include "gtest/gtest.h"

#include "foley/rng.h"
#include "test_util.h"

namespace foley {
namespace {

using ::foley::testing::ThrowsCode;

EmbeddingSet Gaussian(RngStream rng, int n, int d, double mean, double sd) {
  return {(rng.NormalMatrix(n, d) * sd).array() + mean, "test"};
}

TEST(FrechetTest, IdenticalSetsGiveZero) {
  const EmbeddingSet a = Gaussian(RngStream(1), 500, 3, 0.0, 1.0);
  EXPECT_NEAR(FrechetDistance(a, a), 0.0, 1e-8);
}

TEST(FrechetTest, OneDimensionalUnitShift) {
  const int n = 100000;
  const EmbeddingSet a = Gaussian(RngStream(2), n, 1, 0.0, 1.0);
  const EmbeddingSet b = Gaussian(RngStream(3), n, 1, 1.0, 1.0);
  EXPECT_NEAR(FrechetDistance(a, b), 1.0, 0.05);
}

TEST(FrechetTest, TwoDimensionalScaleChange) {
  const int n = 100000;
  const EmbeddingSet a = Gaussian(RngStream(4), n, 2, 0.0, 1.0);
  const EmbeddingSet b = Gaussian(RngStream(5), n, 2, 0.0, 2.0);
  EXPECT_NEAR(FrechetDistance(a, b), 2.0, 0.1);
}

// In one dimension FD reduces to (mu_a - mu_b)^2 + (s_a - s_b)^2.
TEST(FrechetTest, OneDimensionalClosedFormOnSampleMoments) {
  for (uint64_t seed = 10; seed < 15; ++seed) {
    RngStream rng(seed);
    const EmbeddingSet a = Gaussian(rng.Substream(0, 0), 300, 1, 0.3, 1.5);
    const EmbeddingSet b = Gaussian(rng.Substream(0, 1), 200, 1, -0.4, 0.7);
    auto moments = [](const Matrix& x, double* mu, double* sd) {
      *mu = x.mean();
      *sd = std::sqrt((x.array() - *mu).square().sum() / (x.rows() - 1));
    };
    double ma, sa, mb, sb;
    moments(a.embeddings, &ma, &sa);
    moments(b.embeddings, &mb, &sb);
    const double expected = (ma - mb) * (ma - mb) + (sa - sb) * (sa - sb);
    EXPECT_NEAR(FrechetDistance(a, b), expected, 1e-9 * (1 + expected));
  }
}

TEST(FrechetTest, SymmetricAndNonNegative) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(seed);
    const EmbeddingSet a{rng.NormalMatrix(50, 4), "a"};
    Matrix mix = rng.NormalMatrix(4, 4);
    const EmbeddingSet b{rng.NormalMatrix(60, 4) * mix, "b"};
    const double ab = FrechetDistance(a, b);
    EXPECT_NEAR(ab, FrechetDistance(b, a), 1e-6);
    EXPECT_GE(ab, -1e-8);
  }
}

TEST(FrechetTest, ShapeAndSizeErrors) {
  const EmbeddingSet a{Matrix::Ones(5, 3), "a"};
  const EmbeddingSet b{Matrix::Ones(5, 2), "b"};
  const EmbeddingSet one{Matrix::Ones(1, 3), "c"};
  EXPECT_TRUE(ThrowsCode([&] { FrechetDistance(a, b); }, ErrorCode::kShape));
  EXPECT_TRUE(ThrowsCode([&] { FrechetDistance(a, one); }, ErrorCode::kInput));
}

TEST(MeanKlTest, DirectSummationExample) {
  PosteriorSet ref{Matrix(1, 2)}, gen{Matrix(1, 2)};
  ref.posteriors << 0.5, 0.5;
  gen.posteriors << 0.25, 0.75;
  const double oracle = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  EXPECT_NEAR(MeanKl(ref, gen), oracle, 1e-12);
  EXPECT_NEAR(MeanKl(ref, gen), 0.1438, 5e-5);
  EXPECT_EQ(MeanKl(ref, ref), 0.0);
}

TEST(MeanKlTest, ZeroGenerationMassUsesClamp) {
  PosteriorSet ref{Matrix(1, 2)}, gen{Matrix(1, 2)};
  ref.posteriors << 0.5, 0.5;
  gen.posteriors << 1.0, 0.0;
  const double kl = MeanKl(ref, gen);
  EXPECT_TRUE(std::isfinite(kl));
  EXPECT_NEAR(kl, 0.5 * std::log(0.5) + 0.5 * std::log(0.5 / kKlClamp), 1e-9);
}

TEST(MeanKlTest, AveragesRowsAndIsNonNegative) {
  RngStream rng(7);
  auto random_simplex = [&](int n, int c) {
    Matrix m = rng.NormalMatrix(n, c).array().exp();
    for (int i = 0; i < n; ++i) m.row(i) /= m.row(i).sum();
    return PosteriorSet{m};
  };
  const PosteriorSet ref = random_simplex(20, 5);
  const PosteriorSet gen = random_simplex(20, 5);
  double oracle = 0.0;
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 5; ++j) {
      const double p = ref.posteriors(i, j);
      oracle += p * std::log(p / gen.posteriors(i, j));
    }
  }
  EXPECT_NEAR(MeanKl(ref, gen), oracle / 20, 1e-12);
  EXPECT_GT(MeanKl(ref, gen), 0.0);
}

TEST(MeanKlTest, PairingAndSimplexErrors) {
  const PosteriorSet a{Matrix::Constant(2, 2, 0.5)};
  const PosteriorSet b{Matrix::Constant(3, 2, 0.5)};
  EXPECT_TRUE(ThrowsCode([&] { MeanKl(a, b); }, ErrorCode::kPairing));
  const PosteriorSet bad{Matrix::Constant(2, 2, 0.6)};
  EXPECT_TRUE(ThrowsCode([&] { MeanKl(a, bad); }, ErrorCode::kNumeric));
}

TEST(IbScoreTest, Examples) {
  Vector e0 = Vector::Zero(3), e1 = Vector::Zero(3);
  e0(0) = 1.0;
  e1(1) = 2.0;
  const std::vector<IbPair> same = {{"a", e0, e0.transpose()},
                                    {"b", e1, e1.transpose()}};
  EXPECT_NEAR(IbScore(same), 1.0, 1e-12);
  const std::vector<IbPair> orth = {{"a", e0, e1.transpose()}};
  EXPECT_NEAR(IbScore(orth), 0.0, 1e-12);
  const std::vector<IbPair> mixed = {{"a", e0, e0.transpose()},
                                     {"b", e0, e1.transpose()}};
  EXPECT_NEAR(IbScore(mixed), 0.5, 1e-12);
}

TEST(IbScoreTest, AveragesFramesBeforeCosine) {
  Vector audio(2);
  audio << 1.0, 1.0;
  Matrix frames(2, 2);
  frames << 1.0, 0.0, 0.0, 1.0;
  EXPECT_NEAR(IbScore(std::vector<IbPair>{{"a", audio, frames}}), 1.0, 1e-12);
}

TEST(IbScoreTest, ZeroNormNamesClip) {
  const std::vector<IbPair> pairs = {
      {"quiet_clip", Vector::Zero(2), Matrix::Ones(1, 2)}};
  try {
    IbScore(pairs);
    FAIL() << "expected a numeric error";
  } catch (const FoleyError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
    EXPECT_NE(std::string(e.what()).find("quiet_clip"), std::string::npos);
  }
}

// Latent with decaying bumps along channel 0 starting at the given frames.
Matrix Bumps(int frames, const std::vector<int>& starts) {
  Matrix m = Matrix::Zero(frames, 4);
  for (int s : starts) {
    for (int k = s; k < frames; ++k) m(k, 0) += 2.0 * std::exp(-(k - s) / 2.5);
  }
  return m;
}

TEST(OnsetDetectTest, ConstantLatentHasNoOnsets) {
  EXPECT_TRUE(OnsetDetect(Matrix::Constant(64, 4, 0.7), 0.25, 16.0).empty());
}

TEST(OnsetDetectTest, SingleBumpAtFrameTwenty) {
  const std::vector<double> on = OnsetDetect(Bumps(64, {20}), 0.25, 16.0);
  ASSERT_EQ(on.size(), 1u);
  EXPECT_NEAR(on[0], 1.25, 1.0 / 16.0);
}

TEST(OnsetDetectTest, TwoBumpsTenFramesApart) {
  const std::vector<double> on = OnsetDetect(Bumps(64, {20, 30}), 0.25, 16.0);
  ASSERT_EQ(on.size(), 2u);
  EXPECT_NEAR(on[0], 20 / 16.0, 1.0 / 16.0);
  EXPECT_NEAR(on[1], 30 / 16.0, 1.0 / 16.0);
}

TEST(OnsetDetectTest, NonPositiveThresholdIsDomainError) {
  EXPECT_TRUE(ThrowsCode([] { OnsetDetect(Matrix::Zero(4, 2), 0.0, 8.0); },
                         ErrorCode::kDomain));
}

TEST(DesyncTest, Examples) {
  const std::vector<double> truth = {0.5, 1.7, 3.0};
  EXPECT_EQ(Desync(truth, truth), 0.0);
  EXPECT_EQ(Desync(std::vector<double>{}, std::vector<double>{}), 0.0);
  const std::vector<double> shifted = {0.6, 1.8, 3.1};
  EXPECT_NEAR(Desync(shifted, truth), 0.1, 1e-12);
  EXPECT_EQ(Desync(std::vector<double>{}, std::vector<double>{1.0, 2.0}), 1.0);
}

TEST(DesyncTest, UnmatchedOnsetsOnEitherSide) {
  // One match at 0.2 s, one spurious prediction outside the window.
  EXPECT_NEAR(Desync(std::vector<double>{0.2, 5.0}, std::vector<double>{0.0}),
              (0.2 + 1.0) / 2.0, 1e-12);
  // Greedy takes the closest pair first.
  EXPECT_NEAR(Desync(std::vector<double>{1.0}, std::vector<double>{0.2, 0.9}),
              (0.1 + 1.0) / 2.0, 1e-12);
}

TEST(DesyncTest, ShiftCovariant) {
  RngStream rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> truth;
    double t = rng.Uniform();
    for (int i = 0; i < 5; ++i) {
      truth.push_back(t);
      t += 2.5 + rng.Uniform();
    }
    const double delta = 0.9 * rng.Uniform();
    std::vector<double> pred = truth;
    for (double& p : pred) p += delta;
    EXPECT_NEAR(Desync(pred, truth), delta, 1e-12);
  }
}

class EvaluateTest : public ::testing::Test {
 protected:
  void SetUp() override {
    spec_.latent_dim = 16;
    spec_.d_video = 8;
    spec_.n_patches = 4;
    BackboneConfig c;
    c.n_blocks = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_text = 4;
    backbone_ = InitBackbone(c, 3);
    bridge_ = InitBridge(c, spec_.d_video, 4);
    for (int i = 0; i < 4; ++i) {
      items_.push_back({ClipId(i), GenCorpusClip(2, i, spec_)});
    }
    providers_ = ToyProviders(spec_);
    cfg_.n_steps = 3;
    cfg_.seed = 11;
  }

  SynthSpec spec_;
  BackboneParams backbone_;
  BridgeParams bridge_;
  std::vector<EvalItem> items_;
  Providers providers_;
  EvalConfig cfg_;
};

TEST_F(EvaluateTest, GroundTruthAgainstItselfIsZero) {
  cfg_.ground_truth = true;
  const EvalReport r = Evaluate(items_, backbone_, bridge_, providers_, cfg_);
  // Four clips in 16 dimensions give singular covariances, so the
  // square-root round-off is larger than in the full-rank case.
  for (const char* fd : {"FD-VGG", "FD-PANNs", "FD-PaSST"}) {
    EXPECT_NEAR(r.metrics.at(fd), 0.0, 1e-6) << fd;
  }
  EXPECT_NEAR(r.metrics.at("KL-PANNs"), 0.0, 1e-12);
  EXPECT_NEAR(r.metrics.at("KL-PaSST"), 0.0, 1e-12);
  EXPECT_EQ(r.metrics.at("DeSync"), 0.0);
}

TEST_F(EvaluateTest, ReportHasEveryColumnAndMetadata) {
  const EvalReport r = Evaluate(items_, backbone_, bridge_, providers_, cfg_);
  for (const char* col : kReportColumns) {
    ASSERT_TRUE(r.metrics.contains(col)) << col;
    EXPECT_TRUE(std::isfinite(r.metrics.at(col))) << col;
  }
  EXPECT_EQ(r.meta["clip_count"], 4);
  EXPECT_EQ(r.meta["seed"], 11);
  EXPECT_EQ(r.meta["config_hash"], cfg_.Hash());
  EXPECT_EQ(r.generated.size(), 4u);
  const std::string kv = r.ToKeyValue();
  EXPECT_NE(kv.find("meta.config_hash=" + cfg_.Hash()), std::string::npos);
  EXPECT_NE(kv.find("meta.seed=11"), std::string::npos);
  const std::string row = r.ToTableRow();
  EXPECT_EQ(row.substr(0, row.find('\n')),
            "| KL-PANNs | KL-PaSST | IB | FD-VGG | FD-PANNs | FD-PaSST | "
            "DeSync |");
}

TEST_F(EvaluateTest, DeterministicGivenSeed) {
  const EvalReport a = Evaluate(items_, backbone_, bridge_, providers_, cfg_);
  const EvalReport b = Evaluate(items_, backbone_, bridge_, providers_, cfg_);
  EXPECT_EQ(a.ToKeyValue(), b.ToKeyValue());
  cfg_.seed = 12;
  const EvalReport c = Evaluate(items_, backbone_, bridge_, providers_, cfg_);
  EXPECT_NE(a.generated[0], c.generated[0]);
}

TEST_F(EvaluateTest, NoTextModeIsRecordedAndChangesSamples) {
  const EvalReport with_text =
      Evaluate(items_, backbone_, bridge_, providers_, cfg_);
  cfg_.no_text = true;
  const EvalReport no_text =
      Evaluate(items_, backbone_, bridge_, providers_, cfg_);
  EXPECT_EQ(no_text.meta["no_text"], true);
  EXPECT_EQ(with_text.meta["no_text"], false);
  EXPECT_NE(with_text.generated[0], no_text.generated[0]);
}

TEST_F(EvaluateTest, HashTracksCfgScale) {
  const std::string h = cfg_.Hash();
  EXPECT_EQ(h.size(), 64u);
  EvalConfig other = cfg_;
  other.cfg_scale = 3.0;
  EXPECT_NE(other.Hash(), h);
  EXPECT_EQ(EvalConfig(cfg_).Hash(), h);
}

TEST_F(EvaluateTest, InputAndProviderErrors) {
  EXPECT_TRUE(ThrowsCode(
      [&] {
        Evaluate(std::span(items_).first(1), backbone_, bridge_, providers_,
                 cfg_);
      },
      ErrorCode::kInput));
  providers_.classifiers.erase("passt");
  EXPECT_TRUE(ThrowsCode(
      [&] { Evaluate(items_, backbone_, bridge_, providers_, cfg_); },
      ErrorCode::kConfig));
}

}  // namespace
}  // namespace foley
