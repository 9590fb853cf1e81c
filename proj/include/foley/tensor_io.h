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

#ifndef FOLEY_TENSOR_IO_H_
#define FOLEY_TENSOR_IO_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "foley/common.h"

namespace foley {

enum class DType { kF32, kF64 };

struct NamedTensor {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<double> values;
};

NamedTensor MakeTensor(std::string name, const Matrix& m);
NamedTensor MakeTensor(std::string name, const Vector& v);
Matrix TensorToMatrix(const NamedTensor& t);
Vector TensorToVector(const NamedTensor& t);

// A set of tensors plus free-form metadata. On disk this is a flat
// little-endian blob at `path` and a JSON sidecar header at `path`.json
// listing names, shapes, dtype and byte offsets.
struct TensorArchive {
  DType dtype = DType::kF32;
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const NamedTensor& Get(const std::string& name) const;
  bool Has(const std::string& name) const;
};

std::filesystem::path SidecarPath(const std::filesystem::path& blob);

// Raw blob bytes in archive order.
std::string EncodeBlob(const TensorArchive& archive);
nlohmann::json BuildHeader(const TensorArchive& archive);

void WriteArchive(const std::filesystem::path& path,
                  const TensorArchive& archive);
TensorArchive ReadArchive(const std::filesystem::path& path);

// Whole-file helpers shared by the CLI.
std::string ReadFileBytes(const std::filesystem::path& path);
void WriteFileBytes(const std::filesystem::path& path,
                    const std::string& bytes);

}  // namespace foley

#endif  // FOLEY_TENSOR_IO_H_
