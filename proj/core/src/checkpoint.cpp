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

#include "strm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace strm {
namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  std::uint8_t bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.insert(out.end(), bytes, bytes + sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
Tensor<T> read_values(Reader& r, const Shape& shape) {
  std::vector<T> data(shape_size(shape));
  for (auto& v : data) v = r.get<T>();
  return Tensor<T>(shape, std::move(data));
}

}  // namespace

const Record* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records_)
    if (r.name == name) return &r;
  return nullptr;
}

const Record& Checkpoint::at(const std::string& name) const {
  if (const Record* r = find(name)) return *r;
  throw ManifestError("checkpoint has no record named '" + name + "'");
}

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  if (a.records_.size() != b.records_.size()) return false;
  for (std::size_t i = 0; i < a.records_.size(); ++i) {
    if (a.records_[i].name != b.records_[i].name) return false;
    if (a.records_[i].tensor != b.records_[i].tensor) return false;
  }
  return true;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out{'S', 'T', 'R', 'M'};
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.records().size()));
  for (const auto& rec : ckpt.records()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.name.size()));
    out.insert(out.end(), rec.name.begin(), rec.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(rec.dtype()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.shape().size()));
    for (std::size_t d : rec.shape()) put<std::uint64_t>(out, d);
    std::visit([&out](const auto& t) {
      for (auto v : t.data()) put(out, v);
    }, rec.tensor);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != "STRM") throw IoError("not a checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.get<std::uint32_t>());
    const auto tag = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (tag == static_cast<std::uint8_t>(DType::kFloat32)) {
      ckpt.add(std::move(name), read_values<float>(r, shape));
    } else if (tag == static_cast<std::uint8_t>(DType::kFloat64)) {
      ckpt.add(std::move(name), read_values<double>(r, shape));
    } else {
      throw IoError("record '" + name + "' has unknown dtype tag " + std::to_string(tag));
    }
  }
  if (!r.done()) throw IoError("trailing bytes after last checkpoint record");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void require_same_manifest(const Checkpoint& a, const Checkpoint& b) {
  std::string diffs;
  const auto& ra = a.records();
  const auto& rb = b.records();
  for (const auto& rec : ra) {
    const Record* other = b.find(rec.name);
    if (!other) {
      diffs += " " + rec.name + "(missing)";
    } else if (other->shape() != rec.shape()) {
      diffs += " " + rec.name + shape_string(rec.shape()) + "!=" + shape_string(other->shape());
    }
  }
  for (const auto& rec : rb)
    if (!a.find(rec.name)) diffs += " " + rec.name + "(extra)";
  if (diffs.empty() && ra.size() == rb.size()) {
    for (std::size_t i = 0; i < ra.size(); ++i)
      if (ra[i].name != rb[i].name) diffs += " " + ra[i].name + "(order)";
  }
  if (!diffs.empty()) throw ManifestError("parameter manifests differ:" + diffs);
}

template <typename T>
void restore_parameters(ParameterSet<T>& params, const Checkpoint& ckpt) {
  require_same_manifest(capture_parameters(params), ckpt);
  for (const auto& e : params.entries()) e.param->value = ckpt.at(e.name).template as<T>();
}

template <typename T>
void warm_start_parameters(ParameterSet<T>& params, const Checkpoint& ckpt) {
  std::string bad;
  for (const auto& r : ckpt.records()) {
    const auto& entries = params.entries();
    auto it = std::find_if(entries.begin(), entries.end(), [&r](const auto& e) { return e.name == r.name; });
    if (it == entries.end() || it->param->value.shape() != r.shape()) bad += (bad.empty() ? "" : ", ") + r.name;
  }
  if (!bad.empty()) throw ManifestError("warm start: no parameter matches " + bad);
  for (const auto& e : params.entries())
    if (const Record* r = ckpt.find(e.name)) e.param->value = r->template as<T>();
}

template void restore_parameters(ParameterSet<float>&, const Checkpoint&);
template void restore_parameters(ParameterSet<double>&, const Checkpoint&);
template void warm_start_parameters(ParameterSet<float>&, const Checkpoint&);
template void warm_start_parameters(ParameterSet<double>&, const Checkpoint&);

}  // namespace strm
