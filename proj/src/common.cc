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

#include "foley/common.h"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include <openssl/evp.h>

namespace foley {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return "configuration error";
    case ErrorCode::kDomain: return "domain error";
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kNumeric: return "numeric error";
    case ErrorCode::kPooling: return "pooling error";
    case ErrorCode::kGeneration: return "generation error";
    case ErrorCode::kPairing: return "pairing error";
    case ErrorCode::kInput: return "input error";
    case ErrorCode::kManifest: return "manifest error";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kIncompatible: return "incompatibility";
  }
  return "error";
}

FoleyError::FoleyError(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
      code_(code) {}

void Fail(ErrorCode code, const std::string& message) {
  throw FoleyError(code, message);
}

void CheckFinite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    Fail(ErrorCode::kNumeric, std::string(what) + " has non-finite entries");
  }
}

void CheckFinite(const Vector& v, std::string_view what) {
  if (!v.allFinite()) {
    Fail(ErrorCode::kNumeric, std::string(what) + " has non-finite entries");
  }
}

std::string Sha256Hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    Fail(ErrorCode::kIo, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

int WorkerCount() {
  const char* env = std::getenv("FOLEY_BRIDGE_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return std::max(1, n);
}

void ParallelFor(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(WorkerCount(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace foley
