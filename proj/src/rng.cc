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

#include "foley/rng.h"

#include <cmath>
#include <numbers>

namespace foley {

uint64_t SplitMix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

RngStream::RngStream(uint64_t seed, uint64_t counter)
    : RngStream(seed, SplitMix64(seed), counter) {}

RngStream::RngStream(uint64_t seed, uint64_t key, uint64_t counter)
    : seed_(seed), key_(key), counter_(counter) {}

RngStream RngStream::Substream(uint64_t stream_id, uint64_t index) const {
  const uint64_t key =
      SplitMix64(key_ ^ SplitMix64(stream_id * 0xD1B54A32D192ED03ull) ^
                 SplitMix64(~index));
  return RngStream(seed_, key, 0);
}

uint64_t RngStream::NextU64() {
  return SplitMix64(key_ + SplitMix64(counter_++));
}

double RngStream::Uniform() {
  return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
}

double RngStream::Normal() {
  // Box-Muller; u1 is shifted into (0, 1] so log stays finite.
  const double u1 = 1.0 - Uniform();
  const double u2 = Uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

bool RngStream::Bernoulli(double p) { return Uniform() < p; }

uint64_t RngStream::Below(uint64_t n) {
  Require(n > 0, ErrorCode::kDomain, "Below(0)");
  // Rejection keeps the draw unbiased.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = NextU64();
  while (x >= limit) x = NextU64();
  return x % n;
}

Matrix RngStream::NormalMatrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Normal();
  return m;
}

}  // namespace foley
