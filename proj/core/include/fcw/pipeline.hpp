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

#ifndef FCW__PIPELINE_HPP_
#define FCW__PIPELINE_HPP_

#include "fcw/cqr.hpp"
#include "fcw/drta.hpp"
#include "fcw/hstan.hpp"
#include "fcw/metrics.hpp"
#include "fcw/scenario.hpp"

#include <cstdint>
#include <functional>
#include <iterator>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fcw
{

struct Ablations
{
  bool no_sam = false;
  bool no_tam = false;
  bool single_head = false;
  bool no_cqr = false;
  bool no_collision_loss = false;
  std::optional<double> fixed_threshold;

  /// Comma-separated switches, e.g. "no_sam,fixed_threshold=0.8". A bare
  /// fixed_threshold uses 1.0. Throws std::invalid_argument on unknown names.
  static Ablations parse(std::string_view list);
  std::string to_string() const;
  bool any() const;
};

struct DataConfig
{
  std::vector<ScenarioFamily> families{std::begin(kAllFamilies), std::end(kAllFamilies)};
  std::size_t episodes_per_family = 20;
  std::size_t vehicle_count = 4;
  double duration = 10.0;
  double noise = 0.02;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 7;

  /// Episode i of family f gets seed `seed * 1000003 + f * 10007 + i`.
  std::vector<ScenarioSpec> specs(double dt) const;
};

struct TrainConfig
{
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double min_learning_rate = 0.0;
  std::uint64_t seed = 1;
};

/// Everything a run needs. Model defaults are the full-size settings.
struct RunConfig
{
  HstanConfig model;
  RiskWeights risk;
  std::optional<DrivingMode> mode;  // overrides risk.lambda when set
  DataConfig data;
  TrainConfig train;
  Ablations ablations;

  /// Model config with the ablation switches applied.
  HstanConfig effective_model() const;
  /// Risk weights with the driving-mode preset applied.
  RiskWeights effective_risk() const;
  void validate() const;

  std::string to_json() const;
  /// Missing keys keep defaults; unknown keys throw std::invalid_argument.
  static RunConfig from_json(const std::string & text);
  static RunConfig load(const std::string & path);
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
/// Hex FNV-1a over the trajectory and label text of the episodes.
std::string dataset_fingerprint(std::span<const Episode> episodes);

/// A model or the constant-velocity baseline behind one interface.
using Predictor = std::function<std::vector<PredictionBatch>(std::span<const std::vector<SceneFrame>>)>;
Predictor hstan_predictor(const HstanModel & model);
/// Point, lower and upper all equal the CV extrapolation.
Predictor cv_predictor(std::size_t pred_steps, double dt);

struct LoadedDataset
{
  TrajectoryDataset dataset;
  std::string fingerprint;
};

/// Files inside a dataset directory.
inline constexpr std::string_view kTrajectoryFile = "trajectories.csv";
inline constexpr std::string_view kLabelFile = "labels.csv";

LoadedDataset build_dataset(const RunConfig & config);
LoadedDataset load_dataset(const std::string & dir, const RunConfig & config);

struct GenSummary
{
  std::size_t episodes = 0;
  std::size_t windows = 0;
  std::size_t danger = 0;
};

GenSummary cmd_gen(const RunConfig & config, const std::string & out_dir);

/// Trains on the dataset's training split. With `resume`, continues from a
/// checkpoint written by an earlier call (its config must match).
/// `stop_after` > 0 stops early under the full schedule.
TrainState train_model(
  const RunConfig & config, const TrajectoryDataset & dataset, std::optional<TrainState> resume = std::nullopt,
  std::size_t stop_after = 0, const std::function<void(const EpochLog &)> & on_epoch = {});

void save_training(const std::string & path, const TrainState & state, const RunConfig & config, const std::string & fingerprint);
TrainState load_training(const std::string & path);
HstanModel load_model(const std::string & path);

struct TrainSummary
{
  std::size_t epochs_completed = 0;
  std::vector<EpochLog> history;
};

TrainSummary cmd_train(
  const RunConfig & config, const std::string & dataset_dir, const std::string & out_checkpoint,
  const std::string & resume_from = {}, std::size_t stop_after = 0, std::ostream * log = nullptr);

/// Window predictions for one split of the dataset.
struct SplitPredictions
{
  std::vector<WindowRef> refs;
  std::vector<PredictionBatch> predictions;
  std::vector<TrajectorySet> truths;
};

SplitPredictions predict_split(const Predictor & predictor, const TrajectoryDataset & dataset, Split which);

struct CalibrationSummary
{
  ConformalCorrection correction;
  CoverageStats raw_calibration;
  CoverageStats corrected_calibration;
};

ConformalCorrection calibrate_model(
  const Predictor & predictor, const TrajectoryDataset & dataset, double alpha, const std::string & fingerprint);

CalibrationSummary cmd_calibrate(
  const RunConfig & config, const std::string & checkpoint, const std::string & dataset_dir, double alpha,
  const std::string & out_path);

/// Tick-by-tick replay of episodes through predictor, correction and DRTA.
struct WarnResult
{
  std::vector<WarningEvent> events;
  std::vector<double> latency_ms;  // per tick, wall clock
};

/// Every tick from T - 1 onward of each listed episode, for the ego track
/// (vehicle 0) against all other vehicles. A null correction leaves the
/// raw intervals in place; no_cqr in the config zeroes sigma_pred.
WarnResult run_warnings(
  const Predictor & predictor, const TrajectoryDataset & dataset, std::span<const std::size_t> episodes,
  const ConformalCorrection * correction, const RunConfig & config);

/// Files inside a warn output directory.
inline constexpr std::string_view kEventFile = "events.csv";
inline constexpr std::string_view kPredictionFile = "predictions.csv";
inline constexpr std::string_view kTimingFile = "timing.json";

struct WarnSummary
{
  std::size_t episodes = 0;
  std::size_t events = 0;
  std::size_t warnings = 0;
};

/// `checkpoint` empty with `baseline_cv` selects the CV predictor.
WarnSummary cmd_warn(
  const RunConfig & config, const std::string & checkpoint, const std::string & calibration,
  const std::string & dataset_dir, const std::string & out_dir, bool baseline_cv = false);

void write_predictions(const std::string & path, const TrajectoryDataset & dataset, const SplitPredictions & split);
/// Restores predictions keyed by (episode id, start frame).
std::vector<std::pair<std::pair<int, std::size_t>, PredictionBatch>> read_predictions(const std::string & path);

/// Full report from in-memory pieces.
EvalReport evaluate(
  const TrajectoryDataset & dataset, const SplitPredictions & test, std::span<const WarningEvent> events,
  std::span<const double> latency_ms);

/// Report over the test split from a warn output directory.
EvalReport cmd_eval(const RunConfig & config, const std::string & dataset_dir, const std::string & run_dir);

struct ScalingPoint
{
  std::size_t vehicles = 0;
  std::size_t edges = 0;              // directed, with self-loops
  std::size_t score_evaluations = 0;  // attention scores over all layers and heads
  std::size_t all_pairs = 0;          // N^2 times layers and heads
  double latency_p50_ms = 0.0;
  double latency_p90_ms = 0.0;
  double latency_p99_ms = 0.0;
};

struct BenchReport
{
  std::vector<ScalingPoint> points;
  double linear_r2 = 0.0;     // score evaluations vs N
  double quadratic_r2 = 0.0;  // all-pairs counter vs N^2
  double all_pairs_linear_r2 = 0.0;
};

/// Scene of `n` vehicles on a 4-lane road at fixed density (one vehicle per
/// `spacing` metres per lane).
SceneFrame constant_density_scene(std::size_t n, double spacing, std::uint64_t seed);

/// Least-squares fit of y = a + b x; returns R^2.
double linear_fit_r2(std::span<const double> x, std::span<const double> y);

BenchReport run_bench(const HstanModel & model, std::span<const std::size_t> sizes, std::size_t repeats);
std::string format_bench(const BenchReport & report);

}  // namespace fcw

#endif  // FCW__PIPELINE_HPP_
