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

#ifndef FOLEY_RNG_H_
#define FOLEY_RNG_H_

#include <cstdint>

#include "foley/common.h"

namespace foley {

// Counter-based random stream. Draw k of a stream is a pure function of
// (key, k), so equal (seed, counter) pairs always reproduce the same values
// and substreams can be handed to workers without changing results.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t counter = 0);

  // Independent child stream keyed by (this key, stream_id, index).
  RngStream Substream(uint64_t stream_id, uint64_t index = 0) const;

  uint64_t NextU64();
  // Uniform in [0, 1).
  double Uniform();
  double Normal();
  bool Bernoulli(double p);
  // Uniform integer in [0, n).
  uint64_t Below(uint64_t n);
  Matrix NormalMatrix(Eigen::Index rows, Eigen::Index cols);

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

 private:
  RngStream(uint64_t seed, uint64_t key, uint64_t counter);

  uint64_t seed_;
  uint64_t key_;
  uint64_t counter_;
};

// Stream ids used across the project, so substreams never collide.
namespace streams {
inline constexpr uint64_t kTimestep = 1;
inline constexpr uint64_t kNoise = 2;
inline constexpr uint64_t kTokenDrop = 3;
inline constexpr uint64_t kBatch = 4;
inline constexpr uint64_t kSample = 5;
inline constexpr uint64_t kClip = 6;
inline constexpr uint64_t kSplit = 7;
inline constexpr uint64_t kInit = 8;
inline constexpr uint64_t kEval = 9;
inline constexpr uint64_t kExample = 10;
}  // namespace streams

uint64_t SplitMix64(uint64_t x);

}  // namespace foley

#endif  // FOLEY_RNG_H_
