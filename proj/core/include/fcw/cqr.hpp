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

#ifndef FCW__CQR_HPP_
#define FCW__CQR_HPP_

#include "fcw/trajectory.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fcw
{

/// Raw intervals and realised targets for one calibrated scalar stream.
struct CalibrationSet
{
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> target;

  std::size_t size() const { return target.size(); }
  void add(double l, double u, double y);
};

/// One q-hat per calibrated dimension. For trajectories dimension
/// 2 * step + coord, scores pooled over vehicles.
struct ConformalCorrection
{
  double alpha = 0.1;
  std::vector<double> q_hat;
  std::size_t calibration_size = 0;  // scores per dimension
  std::string fingerprint;           // of the calibration data source
};

/// max(L - y, y - U); negative strictly inside the interval.
double nonconformity(double lower, double upper, double y);

/// The ceil((1 - alpha)(n + 1))-th smallest score, clamped to the maximum.
/// Throws DataError on an empty input and std::invalid_argument for alpha
/// outside (0, 1).
double conformal_quantile(std::span<const double> scores, double alpha);

ConformalCorrection calibrate(const CalibrationSet & cal, double alpha);
ConformalCorrection calibrate(std::span<const CalibrationSet> dims, double alpha);

/// [L - q, U + q], collapsed to the midpoint when the bounds cross.
std::pair<double, double> conformal_interval(double lower, double upper, double q_hat);

struct CoverageStats
{
  double coverage = 0.0;
  double mean_width = 0.0;
  std::size_t count = 0;
};

/// Fraction with L <= y <= U and the mean of U - L. Throws DimensionError on
/// mismatched lengths.
CoverageStats empirical_coverage(
  std::span<const double> lower, std::span<const double> upper, std::span<const double> target);

/// Splits predictions into 2 * T' calibration streams.
std::vector<CalibrationSet> trajectory_calibration_sets(
  std::span<const PredictionBatch> predictions, std::span<const TrajectorySet> truths);

/// Applies the per-dimension correction and marks the batch calibrated.
PredictionBatch apply_correction(const PredictionBatch & raw, const ConformalCorrection & correction);

/// Pooled coverage over every (vehicle, step, coord) plus per-step mean
/// widths (averaged over coordinates).
struct TrajectoryCoverage
{
  CoverageStats overall;
  std::vector<double> width_per_step;
};

TrajectoryCoverage trajectory_coverage(
  std::span<const PredictionBatch> predictions, std::span<const TrajectorySet> truths);

std::string correction_to_json(const ConformalCorrection & correction);
ConformalCorrection correction_from_json(const std::string & text);
void write_correction(const std::string & path, const ConformalCorrection & correction);
ConformalCorrection read_correction(const std::string & path);

}  // namespace fcw

#endif  // FCW__CQR_HPP_
