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

#ifndef PRIVCTRL_IO_H_
#define PRIVCTRL_IO_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace privctrl {

std::string_view version();

// Base64 over the little-endian bytes of each double; round trips bit-exactly.
std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(std::string_view text);

// Shortest round-trippable rendering at 17 significant digits.
std::string format_double(double value);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);
// Hash of the canonical (sorted-key, compact) JSON dump.
std::uint64_t config_hash(const nlohmann::json& config);

// First line of every output file: "# privctrl <version> config=<hash> seed=<seed>".
std::string metadata_comment(std::uint64_t config_hash, std::uint64_t seed);
nlohmann::json metadata_record(std::uint64_t config_hash, std::uint64_t seed);

nlohmann::json read_json_file(const std::string& path);
std::string read_text_file(const std::string& path);
// Writes to "<path>.tmp" then renames over path.
void write_file_atomic(const std::string& path, std::string_view contents);

// Non-fatal diagnostics. The default sink writes to stderr.
using WarningSink = std::function<void(std::string_view)>;
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace privctrl

#endif  // PRIVCTRL_IO_H_
