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

#ifndef FCW__CHECKPOINT_HPP_
#define FCW__CHECKPOINT_HPP_

#include "fcw/autodiff.hpp"
#include "fcw/optim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fcw
{

/// Parameter checkpoint container.
///
/// Layout (all integers unsigned little-endian, reals IEEE-754 binary64 LE):
///
///     magic     8 bytes  "FCWCKPT1"
///     config    u64 length + UTF-8 JSON
///     metadata  u64 length + UTF-8 JSON
///     params    u64 count, then per entry:
///                 u32 path length + path, u64 rows, u64 cols, rows*cols f64
///     optimizer u8 present; if 1: f64 beta1, f64 beta2, f64 epsilon, u64 step,
///                 u64 count, then per entry: path, rows, cols, first, second
struct Checkpoint
{
  std::string config_json;
  std::string metadata_json = "{}";
  ad::ParameterStore params;
  std::optional<OptimizerState> optimizer;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint & checkpoint);
Checkpoint decode_checkpoint(const std::vector<unsigned char> & bytes);

void write_checkpoint(const std::string & path, const Checkpoint & checkpoint);
Checkpoint read_checkpoint(const std::string & path);

}  // namespace fcw

#endif  // FCW__CHECKPOINT_HPP_
