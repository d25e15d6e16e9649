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

#ifndef FCW__TEMPORAL_HPP_
#define FCW__TEMPORAL_HPP_

#include "fcw/autodiff.hpp"
#include "fcw/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace fcw
{

/// Per-vehicle T x D sequence of hidden states, oldest row first.
using HiddenSequence = Tensor2D;

/// Weights of one GRU layer in row-vector convention:
/// z = sigmoid(x W_z + h U_z + b_z), and likewise for r and the candidate.
struct GruLayerParams
{
  Tensor2D w_z, w_r, w_h;  // input x hidden
  Tensor2D u_z, u_r, u_h;  // hidden x hidden
  Tensor2D b_z, b_r, b_h;  // 1 x hidden

  std::size_t input_size() const { return w_z.rows(); }
  std::size_t hidden_size() const { return w_z.cols(); }
  void validate() const;
};

struct GruParams
{
  std::vector<GruLayerParams> layers;

  std::size_t hidden_size() const { return layers.empty() ? 0 : layers.back().hidden_size(); }
  void validate(std::size_t input_size) const;
};

struct GruLayerVars
{
  ad::Var w_z, w_r, w_h;
  ad::Var u_z, u_r, u_h;
  ad::Var b_z, b_r, b_h;
};

/// One GRU update. Rows of x and h_prev are independent sequences.
ad::Var gru_cell(ad::Var x, ad::Var h_prev, const GruLayerVars & p);
Tensor2D gru_cell(const Tensor2D & x, const Tensor2D & h_prev, const GruLayerParams & p);

/// Runs the stack over `inputs` (one matrix per step, rows = sequences) from
/// a zero state; returns the top layer's state at every step.
std::vector<ad::Var> gru_encode(std::span<const ad::Var> inputs, std::span<const GruLayerVars> layers);
/// Single-sequence form: rows of `sequence` are time steps.
HiddenSequence gru_encode(const Tensor2D & sequence, const GruParams & params);

struct MhaParams
{
  Tensor2D w_q, w_k, w_v;  // D x D; head m uses columns [m*d_k, (m+1)*d_k)
  Tensor2D w_o;            // D x D
  std::size_t heads = 1;

  std::size_t model_dim() const { return w_q.rows(); }
  std::size_t key_dim() const { return heads == 0 ? 0 : w_q.cols() / heads; }
  void validate() const;
};

struct MhaVars
{
  ad::Var w_q, w_k, w_v, w_o;
  std::size_t heads = 1;
};

/// Scaled dot-product attention over time for a batch of sequences stored
/// step-major: row (t, s) = t * sequences + s. Heads split the columns.
/// No causal mask.
ad::Var sequence_attention(
  ad::Var q, ad::Var k, ad::Var v, std::size_t sequences, std::size_t steps, std::size_t heads);

/// Q/K/V projection, per-head attention, concat and output projection.
ad::Var multi_head_self_attention(
  ad::Var sequence, std::size_t sequences, std::size_t steps, const MhaVars & p);
HiddenSequence multi_head_self_attention(const HiddenSequence & sequence, const MhaParams & p);

/// Per-head T x T attention weights for a single sequence.
std::vector<Tensor2D> self_attention_weights(const HiddenSequence & sequence, const MhaParams & p);

/// Context vector: the final time position.
Tensor2D collapse_to_context(const HiddenSequence & sequence);
ad::Var collapse_to_context(ad::Var sequence, std::size_t sequences, std::size_t steps);

}  // namespace fcw

#endif  // FCW__TEMPORAL_HPP_
