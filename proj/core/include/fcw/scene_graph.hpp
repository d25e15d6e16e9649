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

#ifndef FCW__SCENE_GRAPH_HPP_
#define FCW__SCENE_GRAPH_HPP_

#include "fcw/autodiff.hpp"
#include "fcw/tensor.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace fcw
{

inline constexpr std::size_t kFeatureDim = 8;
inline constexpr double kLeakySlope = 0.2;

struct Vec2
{
  double x = 0.0;
  double y = 0.0;
};

/// One tracked vehicle at one instant. Positions in metres, velocity m/s,
/// acceleration m/s^2, footprint length/width in metres.
struct VehicleObservation
{
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double ax = 0.0;
  double ay = 0.0;
  double length = 4.5;
  double width = 1.8;

  std::array<double, kFeatureDim> features() const { return {x, y, vx, vy, ax, ay, length, width}; }
  Vec2 position() const { return {x, y}; }
};

struct SceneFrame
{
  double timestamp = 0.0;
  std::vector<int> ids;
  std::vector<VehicleObservation> vehicles;

  std::size_t size() const { return vehicles.size(); }
  /// Throws DataError unless N >= 1, ids match vehicles, all values finite
  /// and footprints positive.
  void validate() const;
  /// N x 8 raw feature matrix.
  Tensor2D feature_matrix() const;
};

/// Radius graph over vehicle reference points with self-loops. Stored as
/// sorted neighbour lists; symmetric by construction.
class AdjacencyMatrix
{
public:
  AdjacencyMatrix() = default;
  explicit AdjacencyMatrix(ad::SparseGraph graph) : graph_(std::move(graph)) {}

  std::size_t size() const { return graph_.nodes; }
  bool operator()(std::size_t i, std::size_t j) const;
  std::span<const std::size_t> neighbors(std::size_t i) const;
  /// Directed edge count including self-loops: the number of attention
  /// scores one head evaluates per layer.
  std::size_t edge_count() const { return graph_.edge_count(); }
  const ad::SparseGraph & graph() const { return graph_; }
  /// Row-major N x N 0/1 entries.
  ad::Mask dense() const;

private:
  ad::SparseGraph graph_;
};

/// Edge (i, j), i != j, iff the centre distance is strictly below `radius`.
/// Uses a uniform grid with cell size `radius`, so construction is linear in
/// N at fixed density.
AdjacencyMatrix build_adjacency(std::span<const Vec2> positions, double radius);
AdjacencyMatrix build_adjacency(const SceneFrame & frame, double radius);

/// ELU(x W_e + b_e) on a taped feature matrix.
ad::Var embed_features(ad::Var features, ad::Var weight, ad::Var bias);
/// Value-level embedding of a frame's raw features.
Tensor2D embed_frame(const SceneFrame & frame, const Tensor2D & weight, const Tensor2D & bias);

enum class HeadCombine { kConcat, kAverage };

struct GatHeadParams
{
  Tensor2D transform;  // D_in x D_out
  Tensor2D attention;  // 2*D_out x 1
};

struct GatLayerParams
{
  std::vector<GatHeadParams> heads;
  HeadCombine combine = HeadCombine::kConcat;

  std::size_t head_dim() const;
  std::size_t output_dim() const;
  /// Throws DimensionError for inconsistent heads or input width.
  void validate(std::size_t input_dim) const;
};

struct GatHeadVars
{
  ad::Var transform;
  ad::Var attention;
};

/// One GAT layer on the tape. Heads are combined per `combine`: concat
/// applies ELU per head, average applies ELU after the mean.
ad::Var gat_layer_forward(
  ad::Var h, const ad::SparseGraph & graph, std::span<const GatHeadVars> heads,
  HeadCombine combine, std::size_t * score_evaluations = nullptr);

/// Dense N x N attention weights of a single head (zero for non-neighbours).
Tensor2D gat_attention(
  const Tensor2D & h, const AdjacencyMatrix & adjacency, const GatHeadParams & head,
  std::size_t * score_evaluations = nullptr);

/// Value-level layer forward.
Tensor2D gat_layer_forward(
  const Tensor2D & h, const AdjacencyMatrix & adjacency, const GatLayerParams & layer,
  std::size_t * score_evaluations = nullptr);

/// Appends `block` to `dst` with node indices shifted by dst.nodes.
void append_block(ad::SparseGraph & dst, const ad::SparseGraph & block);

}  // namespace fcw

#endif  // FCW__SCENE_GRAPH_HPP_
