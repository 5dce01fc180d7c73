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

#ifndef STRM_BANK_SNAPSHOT_HPP_
#define STRM_BANK_SNAPSHOT_HPP_

#include <cstddef>
#include <filesystem>
#include <vector>

#include "strm/checkpoint.hpp"
#include "strm/memory.hpp"

namespace strm {

// Bank contents at one instant: slot templates as checkpoint records named
// slot0..slotN-1, plus frame indices, pinned flags and the policy, which go
// to a JSON sidecar next to the container.
struct BankSnapshot {
  std::size_t capacity = 0;
  Policy policy = Policy::kLearned;
  std::vector<std::size_t> frames;
  std::vector<bool> pinned;
  Checkpoint templates;
};

template <typename T>
BankSnapshot snapshot_bank(const MemoryBank<T>& bank);

// Writes `path` and `path` + ".json".
void save_bank_snapshot(const std::filesystem::path& path, const BankSnapshot& snap);
BankSnapshot load_bank_snapshot(const std::filesystem::path& path);

}  // namespace strm

#endif  // STRM_BANK_SNAPSHOT_HPP_
