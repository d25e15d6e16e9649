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

#include "fcw/scene_graph.hpp"

#include "fcw/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>

namespace fcw
{

void SceneFrame::validate() const
{
  if (vehicles.empty()) {
    throw DataError("SceneFrame: no vehicles at t=" + std::to_string(timestamp));
  }
  if (ids.size() != vehicles.size()) {
    throw DataError("SceneFrame: id count does not match vehicle count");
  }
  for (const auto & v : vehicles) {
    for (double f : v.features()) {
      if (!std::isfinite(f)) {
        throw DataError("SceneFrame: non-finite feature at t=" + std::to_string(timestamp));
      }
    }
    if (!(v.length > 0.0) || !(v.width > 0.0)) {
      throw DataError("SceneFrame: vehicle footprint must be positive");
    }
  }
}

Tensor2D SceneFrame::feature_matrix() const
{
  Tensor2D out(vehicles.size(), kFeatureDim);
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    const auto f = vehicles[i].features();
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

bool AdjacencyMatrix::operator()(std::size_t i, std::size_t j) const
{
  const auto n = neighbors(i);
  return std::binary_search(n.begin(), n.end(), j);
}

std::span<const std::size_t> AdjacencyMatrix::neighbors(std::size_t i) const
{
  return {graph_.targets.data() + graph_.offsets[i], graph_.offsets[i + 1] - graph_.offsets[i]};
}

ad::Mask AdjacencyMatrix::dense() const
{
  const std::size_t n = size();
  ad::Mask out(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : neighbors(i)) out[i * n + j] = 1;
  }
  return out;
}

AdjacencyMatrix build_adjacency(std::span<const Vec2> positions, double radius)
{
  if (!(radius > 0.0)) {
    throw std::invalid_argument("build_adjacency: radius must be positive");
  }
  const std::size_t n = positions.size();
  auto cell_of = [radius](double v) { return static_cast<std::int64_t>(std::floor(v / radius)); };
  auto key = [](std::int64_t cx, std::int64_t cy) {
    return (static_cast<std::uint64_t>(cx) * 0x9E3779B97F4A7C15ULL) ^ static_cast<std::uint64_t>(cy);
  };
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < n; ++i) {
    cells[key(cell_of(positions[i].x), cell_of(positions[i].y))].push_back(i);
  }

  ad::SparseGraph g;
  g.nodes = n;
  g.offsets.assign(1, 0);
  std::vector<std::size_t> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    row.push_back(i);
    const std::int64_t cx = cell_of(positions[i].x);
    const std::int64_t cy = cell_of(positions[i].y);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        auto it = cells.find(key(cx + dx, cy + dy));
        if (it == cells.end()) {
          continue;
        }
        for (std::size_t j : it->second) {
          if (j == i) {
            continue;
          }
          const double ddx = positions[i].x - positions[j].x;
          const double ddy = positions[i].y - positions[j].y;
          if (std::sqrt(ddx * ddx + ddy * ddy) < radius) {
            row.push_back(j);
          }
        }
      }
    }
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    g.targets.insert(g.targets.end(), row.begin(), row.end());
    g.offsets.push_back(g.targets.size());
  }
  return AdjacencyMatrix(std::move(g));
}

AdjacencyMatrix build_adjacency(const SceneFrame & frame, double radius)
{
  std::vector<Vec2> pos;
  pos.reserve(frame.size());
  for (const auto & v : frame.vehicles) pos.push_back(v.position());
  return build_adjacency(pos, radius);
}

ad::Var embed_features(ad::Var features, ad::Var weight, ad::Var bias)
{
  return ad::activation(ad::linear_forward(features, weight, bias), ad::Activation::elu());
}

Tensor2D embed_frame(const SceneFrame & frame, const Tensor2D & weight, const Tensor2D & bias)
{
  ad::Tape tape(false);
  const ad::Var out = embed_features(
    tape.constant(frame.feature_matrix()), tape.constant(weight), tape.constant(bias));
  return out.value();
}

std::size_t GatLayerParams::head_dim() const
{
  return heads.empty() ? 0 : heads.front().transform.cols();
}

std::size_t GatLayerParams::output_dim() const
{
  return combine == HeadCombine::kConcat ? heads.size() * head_dim() : head_dim();
}

void GatLayerParams::validate(std::size_t input_dim) const
{
  if (heads.empty()) {
    throw DimensionError("GatLayerParams: no heads");
  }
  const std::size_t d = head_dim();
  for (const auto & h : heads) {
    if (h.transform.rows() != input_dim || h.transform.cols() != d) {
      throw DimensionError(
        "GatLayerParams: head transform " + h.transform.shape_string() + " expected " +
        shape_of(input_dim, d));
    }
    if (h.attention.rows() != 2 * d || h.attention.cols() != 1) {
      throw DimensionError(
        "GatLayerParams: attention vector " + h.attention.shape_string() + " expected " +
        shape_of(2 * d, 1));
    }
  }
}

namespace
{

struct HeadOutput
{
  ad::Var alpha;
  ad::Var aggregated;
};

HeadOutput run_head(
  ad::Var h, const ad::SparseGraph & graph, const GatHeadVars & head, std::size_t * evals)
{
  const ad::Var z = ad::matmul(h, head.transform);
  const std::size_t d = z.cols();
  if (head.attention.rows() != 2 * d || head.attention.cols() != 1) {
    throw DimensionError(
      "gat: attention vector " + head.attention.value().shape_string() + " expected " +
      shape_of(2 * d, 1));
  }
  const ad::Var src = ad::matmul(z, ad::slice_rows(head.attention, 0, d));
  const ad::Var dst = ad::matmul(z, ad::slice_rows(head.attention, d, 2 * d));
  const ad::Var alpha = ad::edge_softmax(src, dst, graph, kLeakySlope, evals);
  return {alpha, ad::edge_aggregate(alpha, z, graph)};
}

}  // namespace

ad::Var gat_layer_forward(
  ad::Var h, const ad::SparseGraph & graph, std::span<const GatHeadVars> heads,
  HeadCombine combine, std::size_t * score_evaluations)
{
  if (heads.empty()) {
    throw DimensionError("gat_layer_forward: no heads");
  }
  if (h.rows() != graph.nodes) {
    throw DimensionError(
      "gat_layer_forward: features " + h.value().shape_string() + " for a graph of " +
      std::to_string(graph.nodes) + " nodes");
  }
  std::vector<ad::Var> outs;
  outs.reserve(heads.size());
  for (const auto & head : heads) {
    outs.push_back(run_head(h, graph, head, score_evaluations).aggregated);
  }
  if (combine == HeadCombine::kConcat) {
    for (auto & o : outs) o = ad::activation(o, ad::Activation::elu());
    return outs.size() == 1 ? outs.front() : ad::concat_cols(outs);
  }
  ad::Var total = outs.front();
  for (std::size_t k = 1; k < outs.size(); ++k) total = ad::add(total, outs[k]);
  if (outs.size() > 1) total = ad::affine(total, 1.0 / static_cast<double>(outs.size()));
  return ad::activation(total, ad::Activation::elu());
}

Tensor2D gat_attention(
  const Tensor2D & h, const AdjacencyMatrix & adjacency, const GatHeadParams & head,
  std::size_t * score_evaluations)
{
  if (adjacency.size() != h.rows()) {
    throw DimensionError(
      "gat_attention: adjacency of " + std::to_string(adjacency.size()) + " nodes for features " +
      h.shape_string());
  }
  ad::Tape tape(false);
  const GatHeadVars vars{tape.constant(head.transform), tape.constant(head.attention)};
  const HeadOutput out = run_head(tape.constant(h), adjacency.graph(), vars, score_evaluations);
  const std::size_t n = h.rows();
  Tensor2D dense(n, n);
  const auto & g = adjacency.graph();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = g.offsets[i]; k < g.offsets[i + 1]; ++k) {
      dense(i, g.targets[k]) = out.alpha.value()[k];
    }
  }
  return dense;
}

Tensor2D gat_layer_forward(
  const Tensor2D & h, const AdjacencyMatrix & adjacency, const GatLayerParams & layer,
  std::size_t * score_evaluations)
{
  layer.validate(h.cols());
  if (adjacency.size() != h.rows()) {
    throw DimensionError(
      "gat_layer_forward: adjacency of " + std::to_string(adjacency.size()) +
      " nodes for features " + h.shape_string());
  }
  ad::Tape tape(false);
  std::vector<GatHeadVars> heads;
  for (const auto & hp : layer.heads) {
    heads.push_back({tape.constant(hp.transform), tape.constant(hp.attention)});
  }
  return gat_layer_forward(
           tape.constant(h), adjacency.graph(), heads, layer.combine, score_evaluations)
    .value();
}

void append_block(ad::SparseGraph & dst, const ad::SparseGraph & block)
{
  const std::size_t base = dst.nodes;
  for (std::size_t i = 0; i < block.nodes; ++i) {
    for (std::size_t k = block.offsets[i]; k < block.offsets[i + 1]; ++k) {
      dst.targets.push_back(block.targets[k] + base);
    }
    dst.offsets.push_back(dst.targets.size());
  }
  dst.nodes += block.nodes;
}

}  // namespace fcw
