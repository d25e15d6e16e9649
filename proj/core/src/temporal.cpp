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

#include "fcw/temporal.hpp"

#include "fcw/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fcw
{

namespace
{

void require_dims(const Tensor2D & t, std::size_t rows, std::size_t cols, const char * what)
{
  if (t.rows() != rows || t.cols() != cols) {
    throw DimensionError(
      std::string(what) + ": got " + t.shape_string() + ", expected " + shape_of(rows, cols));
  }
}

GruLayerVars bind_constants(ad::Tape & tape, const GruLayerParams & p)
{
  return {tape.constant(p.w_z), tape.constant(p.w_r), tape.constant(p.w_h),
          tape.constant(p.u_z), tape.constant(p.u_r), tape.constant(p.u_h),
          tape.constant(p.b_z), tape.constant(p.b_r), tape.constant(p.b_h)};
}

MhaVars bind_constants(ad::Tape & tape, const MhaParams & p)
{
  return {tape.constant(p.w_q), tape.constant(p.w_k), tape.constant(p.w_v), tape.constant(p.w_o),
          p.heads};
}

}  // namespace

void GruLayerParams::validate() const
{
  const std::size_t in = input_size();
  const std::size_t h = hidden_size();
  require_dims(w_z, in, h, "GRU W_z");
  require_dims(w_r, in, h, "GRU W_r");
  require_dims(w_h, in, h, "GRU W_h");
  require_dims(u_z, h, h, "GRU U_z");
  require_dims(u_r, h, h, "GRU U_r");
  require_dims(u_h, h, h, "GRU U_h");
  require_dims(b_z, 1, h, "GRU b_z");
  require_dims(b_r, 1, h, "GRU b_r");
  require_dims(b_h, 1, h, "GRU b_h");
}

void GruParams::validate(std::size_t input_size) const
{
  if (layers.empty()) {
    throw DimensionError("GruParams: no layers");
  }
  std::size_t in = input_size;
  for (const auto & layer : layers) {
    if (layer.input_size() != in) {
      throw DimensionError(
        "GruParams: layer input " + std::to_string(layer.input_size()) + " expected " +
        std::to_string(in));
    }
    layer.validate();
    in = layer.hidden_size();
  }
}

ad::Var gru_cell(ad::Var x, ad::Var h_prev, const GruLayerVars & p)
{
  using ad::Activation;
  const ad::Var z = ad::activation(
    ad::add(ad::linear_forward(x, p.w_z, p.b_z), ad::matmul(h_prev, p.u_z)), Activation::sigmoid());
  const ad::Var r = ad::activation(
    ad::add(ad::linear_forward(x, p.w_r, p.b_r), ad::matmul(h_prev, p.u_r)), Activation::sigmoid());
  const ad::Var candidate = ad::activation(
    ad::add(ad::linear_forward(x, p.w_h, p.b_h), ad::matmul(ad::mul(r, h_prev), p.u_h)),
    Activation::tanh());
  // (1 - z) * h + z * candidate
  return ad::add(h_prev, ad::mul(z, ad::sub(candidate, h_prev)));
}

Tensor2D gru_cell(const Tensor2D & x, const Tensor2D & h_prev, const GruLayerParams & p)
{
  p.validate();
  ad::Tape tape(false);
  return gru_cell(tape.constant(x), tape.constant(h_prev), bind_constants(tape, p)).value();
}

std::vector<ad::Var> gru_encode(std::span<const ad::Var> inputs, std::span<const GruLayerVars> layers)
{
  if (inputs.empty()) {
    throw DimensionError("gru_encode: empty sequence");
  }
  if (layers.empty()) {
    throw DimensionError("gru_encode: no layers");
  }
  ad::Tape & tape = inputs.front().tape();
  std::vector<ad::Var> current(inputs.begin(), inputs.end());
  for (const auto & layer : layers) {
    const std::size_t hidden = layer.w_z.cols();
    ad::Var h = tape.constant(Tensor2D(current.front().rows(), hidden));
    std::vector<ad::Var> next;
    next.reserve(current.size());
    for (const ad::Var & x : current) {
      h = gru_cell(x, h, layer);
      next.push_back(h);
    }
    current = std::move(next);
  }
  return current;
}

HiddenSequence gru_encode(const Tensor2D & sequence, const GruParams & params)
{
  if (sequence.rows() == 0) {
    throw DimensionError("gru_encode: empty sequence");
  }
  params.validate(sequence.cols());
  ad::Tape tape(false);
  const ad::Var seq = tape.constant(sequence);
  std::vector<ad::Var> steps;
  for (std::size_t t = 0; t < sequence.rows(); ++t) {
    steps.push_back(ad::slice_rows(seq, t, t + 1));
  }
  std::vector<GruLayerVars> layers;
  for (const auto & l : params.layers) layers.push_back(bind_constants(tape, l));
  const auto out = gru_encode(steps, layers);
  return ad::concat_rows(out).value();
}

void MhaParams::validate() const
{
  const std::size_t d = model_dim();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError(
      "MhaParams: model dimension " + std::to_string(d) + " not divisible by " +
      std::to_string(heads) + " heads");
  }
  require_dims(w_q, d, d, "MHA W_Q");
  require_dims(w_k, d, d, "MHA W_K");
  require_dims(w_v, d, d, "MHA W_V");
  require_dims(w_o, d, d, "MHA W_O");
}

ad::Var sequence_attention(
  ad::Var q, ad::Var k, ad::Var v, std::size_t sequences, std::size_t steps, std::size_t heads)
{
  const Tensor2D & qv = q.value();
  const Tensor2D & kv = k.value();
  const Tensor2D & vv = v.value();
  const std::size_t rows = sequences * steps;
  const std::size_t d = qv.cols();
  if (qv.rows() != rows || kv.rows() != rows || vv.rows() != rows || kv.cols() != d ||
      vv.cols() != d) {
    throw DimensionError(
      "sequence_attention: Q " + qv.shape_string() + ", K " + kv.shape_string() + ", V " +
      vv.shape_string() + " for " + std::to_string(sequences) + " sequences of " +
      std::to_string(steps) + " steps");
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError(
      "sequence_attention: width " + std::to_string(d) + " not divisible by " +
      std::to_string(heads) + " heads");
  }
  const std::size_t dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const std::size_t tt = steps * steps;
  std::vector<double> probs(sequences * heads * tt);
  Tensor2D out(rows, d);

  for (std::size_t s = 0; s < sequences; ++s) {
    for (std::size_t m = 0; m < heads; ++m) {
      double * p = probs.data() + (s * heads + m) * tt;
      const std::size_t c0 = m * dk;
      for (std::size_t t = 0; t < steps; ++t) {
        const double * qr = qv.row(t * sequences + s).data() + c0;
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u < steps; ++u) {
          const double * kr = kv.row(u * sequences + s).data() + c0;
          double acc = 0.0;
          for (std::size_t c = 0; c < dk; ++c) acc += qr[c] * kr[c];
          p[t * steps + u] = acc * scale;
          row_max = std::max(row_max, p[t * steps + u]);
        }
        double total = 0.0;
        for (std::size_t u = 0; u < steps; ++u) {
          p[t * steps + u] = std::exp(p[t * steps + u] - row_max);
          total += p[t * steps + u];
        }
        double * orow = out.row(t * sequences + s).data() + c0;
        for (std::size_t u = 0; u < steps; ++u) {
          p[t * steps + u] /= total;
          const double w = p[t * steps + u];
          const double * vr = vv.row(u * sequences + s).data() + c0;
          for (std::size_t c = 0; c < dk; ++c) orow[c] += w * vr[c];
        }
      }
    }
  }

  const std::size_t qi = q.id(), ki = k.id(), vi = v.id();
  auto backward = [=, probs = std::move(probs)](ad::Tape & tp, const Tensor2D & g) {
    const Tensor2D & qv = tp.value(qi);
    const Tensor2D & kv = tp.value(ki);
    const Tensor2D & vv = tp.value(vi);
    Tensor2D * gq = tp.needs_grad(qi) ? &tp.grad_buffer(qi) : nullptr;
    Tensor2D * gk = tp.needs_grad(ki) ? &tp.grad_buffer(ki) : nullptr;
    Tensor2D * gv = tp.needs_grad(vi) ? &tp.grad_buffer(vi) : nullptr;
    std::vector<double> dp(tt);
    for (std::size_t s = 0; s < sequences; ++s) {
      for (std::size_t m = 0; m < heads; ++m) {
        const double * p = probs.data() + (s * heads + m) * tt;
        const std::size_t c0 = m * dk;
        for (std::size_t t = 0; t < steps; ++t) {
          const double * gr = g.row(t * sequences + s).data() + c0;
          double dot = 0.0;
          for (std::size_t u = 0; u < steps; ++u) {
            const double * vr = vv.row(u * sequences + s).data() + c0;
            double acc = 0.0;
            for (std::size_t c = 0; c < dk; ++c) acc += gr[c] * vr[c];
            dp[t * steps + u] = acc;
            dot += acc * p[t * steps + u];
            if (gv) {
              double * gvr = gv->row(u * sequences + s).data() + c0;
              const double w = p[t * steps + u];
              for (std::size_t c = 0; c < dk; ++c) gvr[c] += w * gr[c];
            }
          }
          for (std::size_t u = 0; u < steps; ++u) {
            const double ds = p[t * steps + u] * (dp[t * steps + u] - dot) * scale;
            if (ds == 0.0) continue;
            if (gq) {
              const double * kr = kv.row(u * sequences + s).data() + c0;
              double * gqr = gq->row(t * sequences + s).data() + c0;
              for (std::size_t c = 0; c < dk; ++c) gqr[c] += ds * kr[c];
            }
            if (gk) {
              const double * qr = qv.row(t * sequences + s).data() + c0;
              double * gkr = gk->row(u * sequences + s).data() + c0;
              for (std::size_t c = 0; c < dk; ++c) gkr[c] += ds * qr[c];
            }
          }
        }
      }
    }
  };
  return q.tape().push(std::move(out), {q, k, v}, std::move(backward));
}

ad::Var multi_head_self_attention(
  ad::Var sequence, std::size_t sequences, std::size_t steps, const MhaVars & p)
{
  const ad::Var q = ad::matmul(sequence, p.w_q);
  const ad::Var k = ad::matmul(sequence, p.w_k);
  const ad::Var v = ad::matmul(sequence, p.w_v);
  return ad::matmul(sequence_attention(q, k, v, sequences, steps, p.heads), p.w_o);
}

HiddenSequence multi_head_self_attention(const HiddenSequence & sequence, const MhaParams & p)
{
  p.validate();
  if (sequence.cols() != p.model_dim()) {
    throw DimensionError(
      "multi_head_self_attention: sequence " + sequence.shape_string() + " for model dimension " +
      std::to_string(p.model_dim()));
  }
  ad::Tape tape(false);
  return multi_head_self_attention(tape.constant(sequence), 1, sequence.rows(), bind_constants(tape, p))
    .value();
}

std::vector<Tensor2D> self_attention_weights(const HiddenSequence & sequence, const MhaParams & p)
{
  p.validate();
  ad::Tape tape(false);
  const ad::Var seq = tape.constant(sequence);
  const Tensor2D q = ad::matmul(seq, tape.constant(p.w_q)).value();
  const Tensor2D k = ad::matmul(seq, tape.constant(p.w_k)).value();
  const std::size_t dk = p.key_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor2D> out;
  for (std::size_t m = 0; m < p.heads; ++m) {
    Tensor2D scores(sequence.rows(), sequence.rows());
    for (std::size_t t = 0; t < sequence.rows(); ++t) {
      for (std::size_t u = 0; u < sequence.rows(); ++u) {
        double acc = 0.0;
        for (std::size_t c = m * dk; c < (m + 1) * dk; ++c) acc += q(t, c) * k(u, c);
        scores(t, u) = acc * scale;
      }
    }
    out.push_back(ad::softmax_rows(scores));
  }
  return out;
}

Tensor2D collapse_to_context(const HiddenSequence & sequence)
{
  if (sequence.rows() == 0) {
    throw DimensionError("collapse_to_context: empty sequence");
  }
  const auto last = sequence.row(sequence.rows() - 1);
  return Tensor2D::row_vector(last);
}

ad::Var collapse_to_context(ad::Var sequence, std::size_t sequences, std::size_t steps)
{
  if (steps == 0 || sequence.rows() != sequences * steps) {
    throw DimensionError(
      "collapse_to_context: " + sequence.value().shape_string() + " is not " +
      std::to_string(steps) + " steps of " + std::to_string(sequences) + " sequences");
  }
  return ad::slice_rows(sequence, (steps - 1) * sequences, steps * sequences);
}

}  // namespace fcw
