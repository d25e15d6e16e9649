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

#include "text_io.hpp"

#include "fcw/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace fcw::text
{

void put(std::string & out, double v)
{
  if (std::isnan(v)) {
    out += "nan";
    return;
  }
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

std::vector<std::string_view> split_csv(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t c = line.find(',', pos);
    out.push_back(line.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos));
    if (c == std::string_view::npos) {
      break;
    }
    pos = c + 1;
  }
  return out;
}

double parse_double(std::string_view s, const std::string & where)
{
  if (s == "nan") {
    return std::nan("");
  }
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw DataError(where + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

long long parse_int(std::string_view s, const std::string & where)
{
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw DataError(where + ": bad integer '" + std::string(s) + "'");
  }
  return v;
}

void write_text(const std::string & path, const std::string & text)
{
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw IoError("cannot open '" + path + "' for writing");
  }
  f << text;
  if (!f) {
    throw IoError("write failed for '" + path + "'");
  }
}

std::vector<std::string> read_lines(const std::string & path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw IoError("cannot open '" + path + "'");
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (!line.empty()) {
      lines.push_back(std::move(line));
    }
  }
  return lines;
}

}  // namespace fcw::text
