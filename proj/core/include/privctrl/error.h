// Copyright 2026 The privctrl Authors
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

#ifndef PRIVCTRL_ERROR_H_
#define PRIVCTRL_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace privctrl {

enum class ErrorCode {
  kInvalidInput,
  kInvalidConfiguration,
  kImpossibleObservation,
  kUndefinedRatio,
  kDivergence,
  kInstanceTooLarge,
  kInternalInconsistency,
  kIo,
};

std::string_view error_code_name(ErrorCode code);

// All library failures are reported through this exception type; the code
// lets callers (the CLI in particular) map failures to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace privctrl

#endif  // PRIVCTRL_ERROR_H_
