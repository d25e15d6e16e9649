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

#ifndef FCW__OPTIM_HPP_
#define FCW__OPTIM_HPP_

#include "fcw/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>

namespace fcw
{

struct AdamMoments
{
  Tensor2D first;
  Tensor2D second;
};

struct OptimizerState
{
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments> moments;
};

/// One bias-corrected Adam update over every parameter in `params`, using
/// the gradients currently stored there. Moments are created on first use.
void adam_step(ad::ParameterStore & params, OptimizerState & state, double lr);

struct LRSchedule
{
  double base = 1e-3;
  double minimum = 0.0;
  std::size_t total_epochs = 200;
};

/// Cosine annealing from `base` at epoch 0 to `minimum` at `total_epochs`.
/// Throws RangeError past the end.
double cosine_lr(std::size_t epoch, const LRSchedule & schedule);

/// Builds a scalar loss on `tape` from the parameters in the store.
using ScalarObjective = std::function<ad::Var(ad::Tape &, const ad::ParameterStore &)>;

struct GradCheckOptions
{
  double step = 1e-5;
  /// Coordinates checked; 0 means every coordinate.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult
{
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_parameter;
};

/// Compares tape gradients with central differences. The error of one
/// coordinate is |analytic - numeric| / max(1, |analytic|).
/// Throws EvaluationError when the objective is not finite.
GradCheckResult grad_check(
  const ScalarObjective & objective, ad::ParameterStore & params,
  const GradCheckOptions & options = {});

}  // namespace fcw

#endif  // FCW__OPTIM_HPP_
