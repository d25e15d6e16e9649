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

#include "fcw/optim.hpp"

#include "fcw/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace fcw
{

void adam_step(ad::ParameterStore & params, OptimizerState & state, double lr)
{
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (auto & [path, p] : params) {
    auto it = state.moments.find(path);
    if (it == state.moments.end()) {
      it = state.moments
             .emplace(
               path, AdamMoments{
                       Tensor2D(p.value.rows(), p.value.cols()),
                       Tensor2D(p.value.rows(), p.value.cols())})
             .first;
    }
    AdamMoments & m = it->second;
    if (m.first.rows() != p.value.rows() || m.first.cols() != p.value.cols()) {
      throw DimensionError(
        "adam_step: moment shape " + m.first.shape_string() + " does not match parameter '" +
        path + "' " + p.value.shape_string());
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m.first[i] = state.beta1 * m.first[i] + (1.0 - state.beta1) * g;
      m.second[i] = state.beta2 * m.second[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m.first[i] / correction1;
      const double v_hat = m.second[i] / correction2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

double cosine_lr(std::size_t epoch, const LRSchedule & schedule)
{
  if (epoch > schedule.total_epochs) {
    throw RangeError(
      "cosine_lr: epoch " + std::to_string(epoch) + " beyond schedule of " +
      std::to_string(schedule.total_epochs) + " epochs");
  }
  if (schedule.total_epochs == 0) {
    return schedule.base;
  }
  const double progress =
    static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs);
  const double rate = schedule.minimum + 0.5 * (schedule.base - schedule.minimum) *
                                           (1.0 + std::cos(std::numbers::pi * progress));
  return std::clamp(rate, std::min(schedule.minimum, schedule.base),
                    std::max(schedule.minimum, schedule.base));
}

namespace
{

double evaluate(const ScalarObjective & objective, const ad::ParameterStore & params)
{
  ad::Tape tape(false);
  const ad::Var out = objective(tape, params);
  const double v = out.value()[0];
  if (!std::isfinite(v)) {
    throw EvaluationError("grad_check: objective evaluated to a non-finite value");
  }
  return v;
}

}  // namespace

GradCheckResult grad_check(
  const ScalarObjective & objective, ad::ParameterStore & params, const GradCheckOptions & options)
{
  if (!(options.step > 0.0)) {
    throw std::invalid_argument("grad_check: step must be positive");
  }
  ad::Tape tape(true);
  const ad::Var out = objective(tape, params);
  if (!std::isfinite(out.value()[0])) {
    throw EvaluationError("grad_check: objective evaluated to a non-finite value");
  }
  tape.backward(out);

  std::vector<std::pair<ad::Parameter *, std::size_t>> coords;
  std::vector<const std::string *> names;
  for (auto & [path, p] : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      coords.emplace_back(&p, i);
      names.push_back(&path);
    }
  }
  std::vector<std::size_t> order(coords.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (options.max_coordinates != 0 && options.max_coordinates < order.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(options.max_coordinates);
  }

  GradCheckResult result;
  std::map<const ad::Parameter *, Tensor2D> analytic;
  for (std::size_t k : order) {
    auto [p, i] = coords[k];
    auto it = analytic.find(p);
    if (it == analytic.end()) {
      it = analytic.emplace(p, tape.param_grad(*p)).first;
    }
    const double a = it->second[i];
    const double saved = p->value[i];
    p->value[i] = saved + options.step;
    const double plus = evaluate(objective, params);
    p->value[i] = saved - options.step;
    const double minus = evaluate(objective, params);
    p->value[i] = saved;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = *names[k] + "[" + std::to_string(i) + "]";
    }
    ++result.coordinates_checked;
  }
  return result;
}

}  // namespace fcw
