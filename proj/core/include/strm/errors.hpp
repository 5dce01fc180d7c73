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

#ifndef STRM_ERRORS_HPP_
#define STRM_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace strm {

// Every failure raised by the library derives from Error. The category string
// is what the CLI prints in its one-line error report.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define STRM_DEFINE_ERROR(Name, tag)                                \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(tag, what) {}    \
  };

STRM_DEFINE_ERROR(DimensionError, "dimension")
STRM_DEFINE_ERROR(ConfigError, "config")
STRM_DEFINE_ERROR(ContractError, "contract")
STRM_DEFINE_ERROR(StateError, "state")
STRM_DEFINE_ERROR(IngestionError, "ingestion")
STRM_DEFINE_ERROR(UnsupportedError, "unsupported")
STRM_DEFINE_ERROR(ManifestError, "manifest")
STRM_DEFINE_ERROR(IoError, "io")
STRM_DEFINE_ERROR(TrainingError, "training")

#undef STRM_DEFINE_ERROR

}  // namespace strm

#endif  // STRM_ERRORS_HPP_
