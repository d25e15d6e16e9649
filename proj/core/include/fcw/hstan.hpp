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

#ifndef FCW__HSTAN_HPP_
#define FCW__HSTAN_HPP_

#include "fcw/autodiff.hpp"
#include "fcw/optim.hpp"
#include "fcw/scenario.hpp"
#include "fcw/scene_graph.hpp"
#include "fcw/temporal.hpp"
#include "fcw/trajectory.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fcw
{

struct HstanConfig
{
  // Spatial module
  std::size_t feature_dim = kFeatureDim;  // C
  std::size_t sam_dim = 256;              // D_h
  std::size_t gat_heads = 8;              // K
  std::size_t gat_layers = 3;             // L_s
  double radius = 30.0;                   // R_d, metres

  // Temporal module
  std::size_t gru_hidden = 512;
  std::size_t gru_layers = 2;
  std::size_t attention_heads = 4;  // M

  std::size_t obs_steps = 8;    // T
  std::size_t pred_steps = 12;  // T'
  double dt = 0.1;

  std::vector<std::size_t> decoder_hidden{512, 256};

  double alpha = 0.1;
  double pinball_weight = 0.5;
  double collision_weight = 0.1;
  double collision_radius = 4.0;

  // Input / output normalisation (features are divided by these).
  double position_scale = 10.0;
  double velocity_scale = 10.0;
  double accel_scale = 5.0;
  double size_scale = 5.0;
  double output_scale = 10.0;  // decoder output unit, metres

  bool no_sam = false;       // GAT stack replaced by the embedding passthrough
  bool no_tam = false;       // GRU + self-attention replaced by the last frame
  bool single_head = false;  // K = M = 1

  std::size_t effective_gat_heads() const { return single_head ? 1 : gat_heads; }
  std::size_t effective_attention_heads() const { return single_head ? 1 : attention_heads; }

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;

  /// Small model used by the desk-scale harness.
  static HstanConfig desk_scale();

  std::string to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static HstanConfig from_json(const std::string & text);
};

/// All learnable tensors under stable path names.
class HstanModel
{
public:
  HstanModel() = default;
  /// Glorot-uniform weights and zero biases from one seeded stream.
  HstanModel(const HstanConfig & config, std::uint64_t seed);
  /// Adopts existing parameters; throws DimensionError when any path is
  /// missing, unexpected or mis-shaped for `config`.
  HstanModel(const HstanConfig & config, ad::ParameterStore params);

  const HstanConfig & config() const { return config_; }
  ad::ParameterStore & params() { return params_; }
  const ad::ParameterStore & params() const { return params_; }

  /// Value-level views for the module-level reference functions.
  std::vector<GatLayerParams> gat_params() const;
  GruParams gru_params() const;
  MhaParams mha_params() const;

private:
  HstanConfig config_;
  ad::ParameterStore params_;
};

/// Rescaled N x C features, positions relative to `origin`.
Tensor2D normalized_features(const SceneFrame & frame, Vec2 origin, const HstanConfig & config);
/// Centroid of the first frame.
Vec2 scene_origin(std::span<const SceneFrame> history);

/// Decoder MLP layers as (weight, bias) pairs.
using MlpParams = std::vector<std::pair<Tensor2D, Tensor2D>>;

/// Hidden layers use ReLU; the last layer is linear. Returns N x (T' * 2)
/// displacement rows in decoder units.
Tensor2D mlp_forward(const Tensor2D & x, const MlpParams & layers);

/// Absolute N x T' x 2 trajectories: last observed positions plus
/// `scale` times the MLP displacements.
TrajectorySet decode_trajectories(
  const Tensor2D & context, const MlpParams & decoder, std::span<const Vec2> last_positions,
  std::size_t pred_steps, double scale = 1.0);

struct QuantileTrajectories
{
  TrajectorySet lower;
  TrajectorySet upper;
};

QuantileTrajectories quantile_forward(
  const Tensor2D & context, const MlpParams & lower_head, const MlpParams & upper_head,
  std::span<const Vec2> last_positions, std::size_t pred_steps, double scale = 1.0);

MlpParams decoder_params(const HstanModel & model, const std::string & head);

struct HstanOutput
{
  Tensor2D context;  // H^F, one row per vehicle
  PredictionBatch prediction;
};

/// Full forward pass for one window. Throws DataError when the roster
/// changes across frames or the history length differs from T.
HstanOutput hstan_forward(std::span<const SceneFrame> history, const HstanModel & model);

/// Several windows at once (one combined graph); same results as calling
/// hstan_forward on each.
std::vector<PredictionBatch> hstan_predict(
  std::span<const std::vector<SceneFrame>> histories, const HstanModel & model);

/// Tape-level pieces of the objective.
ad::Var pinball_loss(ad::Var pred, const Tensor2D & target, double tau);
/// Mean over (pair, step) of max(0, r - |p_i - p_j|)^2 within each group of
/// rows. `groups` holds row ranges [begin, end) of vehicles sharing a scene;
/// rows are vehicles, columns interleave (x, y) per step.
ad::Var collision_penalty(
  ad::Var positions, std::span<const std::pair<std::size_t, std::size_t>> groups, double radius);

struct LossBreakdown
{
  double total = 0.0;
  double mse = 0.0;
  double pinball = 0.0;
  double collision = 0.0;
};

/// Objective on an uncalibrated batch (absolute metres).
LossBreakdown training_loss(
  const PredictionBatch & pred, const TrajectorySet & truth, const HstanConfig & config);

struct TrainOptions
{
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  LRSchedule schedule{};  // total_epochs is set from `epochs`
  std::uint64_t seed = 0;
  /// Stop once this many epochs are complete (0: run all). The schedule
  /// still spans `epochs`, so a later resume continues the same run.
  std::size_t stop_after = 0;
};

struct EpochLog
{
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double mse = 0.0;
  double pinball = 0.0;
  double collision = 0.0;
};

struct TrainState
{
  HstanModel model;
  OptimizerState optimizer;
  std::size_t epochs_completed = 0;
  std::vector<EpochLog> history;
};

/// Fresh state: model initialised from `seed`.
TrainState init_training(const HstanConfig & config, std::uint64_t seed);

/// Runs epochs [state.epochs_completed, options.epochs) over the training
/// windows. Resuming from a saved state reproduces an uninterrupted run.
/// Throws DataError on an empty split and EvaluationError on a NaN loss.
void train(
  TrainState & state, const TrajectoryDataset & dataset, const TrainOptions & options,
  const std::function<void(const EpochLog &)> & on_epoch = {});

/// Batch objective used by train(), exposed for gradient checks.
ad::Var batch_objective(
  ad::Tape & tape, const HstanModel & model, std::span<const Window> windows,
  LossBreakdown * parts = nullptr);

}  // namespace fcw

#endif  // FCW__HSTAN_HPP_
