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

#include "foley/tensor_io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace foley {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are written in host order; big-endian hosts "
              "need byte swapping here");

size_t ElementSize(DType dtype) { return dtype == DType::kF32 ? 4 : 8; }

std::string DTypeName(DType dtype) {
  return dtype == DType::kF32 ? "f32" : "f64";
}

DType ParseDType(const std::string& s) {
  if (s == "f32") return DType::kF32;
  if (s == "f64") return DType::kF64;
  Fail(ErrorCode::kIo, "unknown dtype '" + s + "'");
}

int64_t Count(const std::vector<int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), int64_t{1},
                         std::multiplies<>());
}

}  // namespace

NamedTensor MakeTensor(std::string name, const Matrix& m) {
  NamedTensor t{std::move(name), {m.rows(), m.cols()}, {}};
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

NamedTensor MakeTensor(std::string name, const Vector& v) {
  NamedTensor t{std::move(name), {v.size()}, {}};
  t.values.assign(v.data(), v.data() + v.size());
  return t;
}

Matrix TensorToMatrix(const NamedTensor& t) {
  Require(t.shape.size() == 2, ErrorCode::kShape,
          "tensor '" + t.name + "' is not rank 2");
  Matrix m(t.shape[0], t.shape[1]);
  std::copy(t.values.begin(), t.values.end(), m.data());
  return m;
}

Vector TensorToVector(const NamedTensor& t) {
  Require(t.shape.size() == 1, ErrorCode::kShape,
          "tensor '" + t.name + "' is not rank 1");
  Vector v(t.shape[0]);
  std::copy(t.values.begin(), t.values.end(), v.data());
  return v;
}

const NamedTensor& TensorArchive::Get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  Fail(ErrorCode::kIo, "archive has no tensor '" + name + "'");
}

bool TensorArchive::Has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::filesystem::path SidecarPath(const std::filesystem::path& blob) {
  std::filesystem::path p = blob;
  p += ".json";
  return p;
}

std::string EncodeBlob(const TensorArchive& archive) {
  const size_t es = ElementSize(archive.dtype);
  size_t total = 0;
  for (const auto& t : archive.tensors) total += t.values.size() * es;
  std::string out(total, '\0');
  char* dst = out.data();
  for (const auto& t : archive.tensors) {
    Require(Count(t.shape) == static_cast<int64_t>(t.values.size()),
            ErrorCode::kShape, "tensor '" + t.name + "' shape/size mismatch");
    for (double v : t.values) {
      if (archive.dtype == DType::kF32) {
        const float f = static_cast<float>(v);
        std::memcpy(dst, &f, 4);
      } else {
        std::memcpy(dst, &v, 8);
      }
      dst += es;
    }
  }
  return out;
}

nlohmann::json BuildHeader(const TensorArchive& archive) {
  nlohmann::json header;
  header["format"] = "foley-tensor-blob/1";
  header["dtype"] = DTypeName(archive.dtype);
  header["byte_order"] = "little";
  header["meta"] = archive.meta;
  nlohmann::json list = nlohmann::json::array();
  size_t offset = 0;
  for (const auto& t : archive.tensors) {
    list.push_back({{"name", t.name},
                    {"shape", t.shape},
                    {"offset", offset},
                    {"count", t.values.size()}});
    offset += t.values.size() * ElementSize(archive.dtype);
  }
  header["tensors"] = std::move(list);
  header["total_bytes"] = offset;
  return header;
}

void WriteArchive(const std::filesystem::path& path,
                  const TensorArchive& archive) {
  WriteFileBytes(path, EncodeBlob(archive));
  WriteFileBytes(SidecarPath(path), BuildHeader(archive).dump(1) + "\n");
}

TensorArchive ReadArchive(const std::filesystem::path& path) {
  const std::string header_text = ReadFileBytes(SidecarPath(path));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kIo, "bad header " + SidecarPath(path).string() + ": " +
                             e.what());
  }
  Require(header.value("format", "") == "foley-tensor-blob/1", ErrorCode::kIo,
          "unrecognized blob format in " + SidecarPath(path).string());
  const std::string blob = ReadFileBytes(path);

  TensorArchive archive;
  archive.dtype = ParseDType(header.at("dtype").get<std::string>());
  archive.meta = header.value("meta", nlohmann::json::object());
  const size_t es = ElementSize(archive.dtype);
  for (const auto& entry : header.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<int64_t>>();
    const size_t offset = entry.at("offset").get<size_t>();
    const size_t count = entry.at("count").get<size_t>();
    Require(static_cast<int64_t>(count) == Count(t.shape), ErrorCode::kIo,
            "tensor '" + t.name + "' count does not match shape");
    Require(offset + count * es <= blob.size(), ErrorCode::kIo,
            "tensor '" + t.name + "' runs past end of blob");
    t.values.resize(count);
    const char* src = blob.data() + offset;
    for (size_t i = 0; i < count; ++i, src += es) {
      if (archive.dtype == DType::kF32) {
        float f;
        std::memcpy(&f, src, 4);
        t.values[i] = f;
      } else {
        std::memcpy(&t.values[i], src, 8);
      }
    }
    archive.tensors.push_back(std::move(t));
  }
  return archive;
}

std::string ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFileBytes(const std::filesystem::path& path,
                    const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) Fail(ErrorCode::kIo, "short write to " + path.string());
}

}  // namespace foley
