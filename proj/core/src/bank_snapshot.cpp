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

#include "strm/bank_snapshot.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "strm/errors.hpp"

namespace strm {
namespace {

std::filesystem::path sidecar(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".json";
  return p;
}

}  // namespace

template <typename T>
BankSnapshot snapshot_bank(const MemoryBank<T>& bank) {
  BankSnapshot s;
  s.capacity = bank.capacity();
  s.policy = bank.policy();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto& slot = bank.slot(i);
    s.frames.push_back(slot.frame_index);
    s.pinned.push_back(slot.pinned);
    s.templates.add("slot" + std::to_string(i), slot.tmpl.value());
  }
  return s;
}

void save_bank_snapshot(const std::filesystem::path& path, const BankSnapshot& snap) {
  if (snap.frames.size() != snap.templates.records().size() || snap.pinned.size() != snap.frames.size())
    throw ContractError("bank snapshot has inconsistent slot counts");
  save_checkpoint(path, snap.templates);
  nlohmann::json j;
  j["schema_version"] = 1;
  j["capacity"] = snap.capacity;
  j["policy"] = std::string(policy_name(snap.policy));
  j["frames"] = snap.frames;
  j["pinned"] = snap.pinned;
  std::ofstream out(sidecar(path));
  if (!out) throw IoError("cannot write " + sidecar(path).string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + sidecar(path).string());
}

BankSnapshot load_bank_snapshot(const std::filesystem::path& path) {
  BankSnapshot s;
  s.templates = load_checkpoint(path);
  std::ifstream in(sidecar(path));
  if (!in) throw IoError("missing bank sidecar " + sidecar(path).string());
  std::stringstream text;
  text << in.rdbuf();
  try {
    const auto j = nlohmann::json::parse(text.str());
    s.capacity = j.at("capacity").get<std::size_t>();
    s.policy = parse_policy(j.at("policy").get<std::string>());
    s.frames = j.at("frames").get<std::vector<std::size_t>>();
    s.pinned = j.at("pinned").get<std::vector<bool>>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("malformed bank sidecar " + sidecar(path).string() + ": " + e.what());
  }
  if (s.frames.size() != s.templates.records().size() || s.pinned.size() != s.frames.size())
    throw IngestionError("bank snapshot " + path.string() + " lists " + std::to_string(s.frames.size()) +
                         " slots but stores " + std::to_string(s.templates.records().size()) + " templates");
  return s;
}

template BankSnapshot snapshot_bank(const MemoryBank<float>&);
template BankSnapshot snapshot_bank(const MemoryBank<double>&);

}  // namespace strm
