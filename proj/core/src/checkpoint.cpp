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

#include "fcw/checkpoint.hpp"

#include "fcw/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fcw
{

namespace
{

constexpr char kMagic[8] = {'F', 'C', 'W', 'C', 'K', 'P', 'T', '1'};

class Writer
{
public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v)
  {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v)
  {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string & s)
  {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void str64(const std::string & s)
  {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void tensor_values(const Tensor2D & t)
  {
    for (double v : t.data()) f64(v);
  }
  std::vector<unsigned char> take() { return std::move(bytes_); }

private:
  std::vector<unsigned char> bytes_;
};

class Reader
{
public:
  explicit Reader(const std::vector<unsigned char> & bytes) : bytes_(bytes) {}

  void need(std::size_t n) const
  {
    if (pos_ + n > bytes_.size()) {
      throw DataError("checkpoint: truncated data at byte " + std::to_string(pos_));
    }
  }
  std::uint8_t u8()
  {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32()
  {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64()
  {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::uint64_t n)
  {
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  Tensor2D tensor(std::uint64_t rows, std::uint64_t cols)
  {
    need(rows * cols * 8);
    Tensor2D t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = f64();
    return t;
  }
  bool done() const { return pos_ == bytes_.size(); }

private:
  const std::vector<unsigned char> & bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint & checkpoint)
{
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.str64(checkpoint.config_json);
  w.str64(checkpoint.metadata_json);
  w.u64(checkpoint.params.size());
  for (const auto & [path, p] : checkpoint.params) {
    w.str32(path);
    w.u64(p.value.rows());
    w.u64(p.value.cols());
    w.tensor_values(p.value);
  }
  w.u8(checkpoint.optimizer ? 1 : 0);
  if (checkpoint.optimizer) {
    const OptimizerState & s = *checkpoint.optimizer;
    w.f64(s.beta1);
    w.f64(s.beta2);
    w.f64(s.epsilon);
    w.u64(s.step);
    w.u64(s.moments.size());
    for (const auto & [path, m] : s.moments) {
      w.str32(path);
      w.u64(m.first.rows());
      w.u64(m.first.cols());
      w.tensor_values(m.first);
      w.tensor_values(m.second);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<unsigned char> & bytes)
{
  Reader r(bytes);
  for (char c : kMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) {
      throw DataError("checkpoint: bad magic, not an FCW checkpoint");
    }
  }
  Checkpoint ck;
  ck.config_json = r.str(r.u64());
  ck.metadata_json = r.str(r.u64());
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string path = r.str(r.u32());
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    ck.params.add(path, r.tensor(rows, cols));
  }
  if (r.u8() != 0) {
    OptimizerState s;
    s.beta1 = r.f64();
    s.beta2 = r.f64();
    s.epsilon = r.f64();
    s.step = r.u64();
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string path = r.str(r.u32());
      const std::uint64_t rows = r.u64();
      const std::uint64_t cols = r.u64();
      AdamMoments m;
      m.first = r.tensor(rows, cols);
      m.second = r.tensor(rows, cols);
      s.moments.emplace(std::move(path), std::move(m));
    }
    ck.optimizer = std::move(s);
  }
  if (!r.done()) {
    throw DataError("checkpoint: trailing bytes after optimizer section");
  }
  return ck;
}

void write_checkpoint(const std::string & path, const Checkpoint & checkpoint)
{
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open checkpoint for writing: " + path);
  }
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("failed writing checkpoint: " + path);
  }
}

Checkpoint read_checkpoint(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint: " + path);
  }
  std::vector<unsigned char> bytes(
    (std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fcw
