// Copyright 2026 The FCW Authors
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

#ifndef FCW__SRC__TEXT_IO_HPP_
#define FCW__SRC__TEXT_IO_HPP_

#include <string>
#include <string_view>
#include <vector>

namespace fcw::text
{

/// Shortest round-trip form; NaN as "nan".
void put(std::string & out, double v);
std::vector<std::string_view> split_csv(std::string_view line);
/// Throws DataError naming `where` on malformed input.
double parse_double(std::string_view s, const std::string & where);
long long parse_int(std::string_view s, const std::string & where);
/// Throws IoError with the path.
void write_text(const std::string & path, const std::string & text);
/// Non-empty lines with any trailing CR removed.
std::vector<std::string> read_lines(const std::string & path);

}  // namespace fcw::text

#endif  // FCW__SRC__TEXT_IO_HPP_
