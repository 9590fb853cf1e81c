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

#ifndef FOLEY_COMMON_H_
#define FOLEY_COMMON_H_

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace foley {

// Token sequences are stored one token per row.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  kConfig,
  kDomain,
  kShape,
  kNumeric,
  kPooling,
  kGeneration,
  kPairing,
  kInput,
  kManifest,
  kIo,
  kIncompatible,
};

std::string_view ErrorCodeName(ErrorCode code);

class FoleyError : public std::runtime_error {
 public:
  FoleyError(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void Fail(ErrorCode code, const std::string& message);

inline void Require(bool condition, ErrorCode code,
                    const std::string& message) {
  if (!condition) Fail(code, message);
}

// Throws kNumeric naming `what` if any entry is NaN or infinite.
void CheckFinite(const Matrix& m, std::string_view what);
void CheckFinite(const Vector& v, std::string_view what);

// Lowercase hex SHA-256 digest.
std::string Sha256Hex(std::string_view data);

// Worker count from FOLEY_BRIDGE_THREADS (default 1, minimum 1).
int WorkerCount();

// Runs fn(i) for i in [0, n) on up to WorkerCount() threads. fn must only
// write to per-index state; ordering of side effects is unspecified.
void ParallelFor(int n, const std::function<void(int)>& fn);

}  // namespace foley

#endif  // FOLEY_COMMON_H_
