// Copyright 2026 The STRM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef STRM_CHECKPOINT_HPP_
#define STRM_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "strm/autodiff.hpp"
#include "strm/tensor.hpp"

namespace strm {

// On-disk layout (all integers little-endian):
//   "STRM" | u32 version | u32 record count |
//   per record: u32 name bytes | UTF-8 name | u8 dtype | u32 rank |
//               u64 dims[rank] | raw values
enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Record {
  std::string name;
  std::variant<Tensor<float>, Tensor<double>> tensor;

  DType dtype() const {
    return std::holds_alternative<Tensor<float>>(tensor) ? DType::kFloat32 : DType::kFloat64;
  }
  const Shape& shape() const {
    return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, tensor);
  }
  // Values converted to T regardless of the stored dtype.
  template <typename T>
  Tensor<T> as() const {
    return std::visit([](const auto& t) { return t.template cast<T>(); }, tensor);
  }
};

class Checkpoint {
 public:
  void add(std::string name, Tensor<float> t) { records_.push_back({std::move(name), std::move(t)}); }
  void add(std::string name, Tensor<double> t) { records_.push_back({std::move(name), std::move(t)}); }

  const std::vector<Record>& records() const noexcept { return records_; }
  std::vector<Record>& records() noexcept { return records_; }
  const Record* find(const std::string& name) const;
  const Record& at(const std::string& name) const;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b);

 private:
  std::vector<Record> records_;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint capture_parameters(const ParameterSet<T>& params) {
  Checkpoint ckpt;
  for (const auto& e : params.entries()) ckpt.add(e.name, e.param->value);
  return ckpt;
}

// Names and shapes must match exactly; otherwise ManifestError listing every
// differing parameter.
template <typename T>
void restore_parameters(ParameterSet<T>& params, const Checkpoint& ckpt);

// Copies every record of `ckpt` into the parameter of the same name. Records
// without a matching name and shape raise ManifestError; parameters the
// checkpoint lacks keep their values.
template <typename T>
void warm_start_parameters(ParameterSet<T>& params, const Checkpoint& ckpt);

// Throws ManifestError if the two checkpoints differ in names, order or shapes.
void require_same_manifest(const Checkpoint& a, const Checkpoint& b);

}  // namespace strm

#endif  // STRM_CHECKPOINT_HPP_
