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

#ifndef FCW__DRTA_HPP_
#define FCW__DRTA_HPP_

#include "fcw/scene_graph.hpp"
#include "fcw/trajectory.hpp"

#include <cstddef>
#include <deque>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fcw
{

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class DrivingMode { kDefault, kHighway, kUrban };

/// Sensitivity preset for a driving mode.
double mode_lambda(DrivingMode mode);
std::string_view mode_name(DrivingMode mode);
/// Throws std::invalid_argument on an unknown name.
DrivingMode parse_mode(std::string_view name);

struct RiskWeights
{
  double w1 = 0.5;  // prediction term
  double w2 = 0.3;  // kinematic term
  double w3 = 0.2;  // geometric term
  double tau = 1.0;      // s
  double v_safe = 15.0;  // m/s
  double a_max = 8.0;    // m/s^2
  double gamma = 1.0;
  double beta = 0.5;
  double lambda = 2.2;

  double d_min_floor = 0.1;       // m, keeps 1 / d_min finite
  double kin_floor = -1.0;        // lower clamp on the kinematic term
  double collision_radius = 4.0;  // m, predicted contact distance for TTC
  std::size_t window = 50;        // W
  std::size_t warmup = 5;         // samples buffered before any warning

  /// Throws std::invalid_argument: weights must be non-negative and sum to
  /// 1, tau / v_safe / a_max positive, lambda within [1.5, 3], warmup >= 2
  /// and window >= warmup.
  void validate() const;
};

struct RiskInputs
{
  double d_min = kInfinity;  // m
  double ttc = kInfinity;    // s
  double sigma_pred = 0.0;   // m
  double v_rel = 0.0;        // m/s, positive when closing
  double a_rel = 0.0;        // m/s^2, positive when the closing rate grows
  double kappa = 0.0;        // 1/m, signed
  double v_ego = 0.0;        // m/s

  /// Throws std::invalid_argument on negative d_min / sigma_pred / v_ego or
  /// NaN fields.
  void validate() const;
};

/// (1 / max(d_min, floor)) * exp(-TTC / tau) * (1 + sigma_pred).
double risk_pred(const RiskInputs & in, const RiskWeights & w);
/// v_rel / v_safe + gamma * a_rel / a_max, clamped below at kin_floor.
double risk_kin(const RiskInputs & in, const RiskWeights & w);
/// 1 + beta * |kappa| * v_ego.
double risk_geo(const RiskInputs & in, const RiskWeights & w);

struct RiskTerms
{
  double pred = 0.0;
  double kin = 0.0;
  double geo = 0.0;
  double total = 0.0;
};

RiskTerms risk_terms(const RiskInputs & in, const RiskWeights & w);
double risk_total(const RiskInputs & in, const RiskWeights & w);

/// Fixed-capacity FIFO of recent risk values.
class SlidingWindow
{
public:
  explicit SlidingWindow(std::size_t capacity = 50);

  void push(double value);
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  const std::deque<double> & values() const { return values_; }

private:
  std::size_t capacity_;
  std::deque<double> values_;
};

struct WindowStats
{
  double mean = 0.0;
  double stddev = 0.0;  // n - 1 denominator; 0 below two samples
};

WindowStats window_stats(const SlidingWindow & window);

double dynamic_threshold(double mean, double stddev, double lambda);

struct WarningEvent
{
  int episode_id = 0;
  std::size_t tick = 0;
  double time = 0.0;
  int track_id = 0;
  RiskTerms terms;
  double mean = 0.0;
  double stddev = 0.0;
  double threshold = kInfinity;
  bool triggered = false;
};

/// Strict comparison: R > T_dyn.
WarningEvent decide(const RiskTerms & terms, double threshold);

/// Per-track warning state. The threshold for tick t comes from the values
/// up to t - 1; R(t) is pushed afterwards.
class RiskTrack
{
public:
  explicit RiskTrack(const RiskWeights & weights, std::optional<double> fixed_threshold = std::nullopt);

  WarningEvent step(const RiskInputs & inputs);
  /// Same, for a precomputed risk value (pred/kin/geo left at zero).
  WarningEvent step_value(double risk);

  const SlidingWindow & window() const { return window_; }
  std::size_t ticks() const { return ticks_; }

private:
  WarningEvent advance(const RiskTerms & terms);

  RiskWeights weights_;
  std::optional<double> fixed_threshold_;
  SlidingWindow window_;
  std::size_t ticks_ = 0;
};

/// Triggered flags of a scalar risk stream replayed through one track.
std::vector<bool> replay(std::span<const double> stream, const RiskWeights & weights);

/// Reduces a calibrated prediction to risk inputs for `ego` against
/// `threats`. d_min and TTC scan predicted centre distances over every
/// (step, threat); the critical threat is the first to reach the collision
/// radius, else the closest. sigma_pred is half the mean interval width of
/// the ego and the critical threat. Kinematics come from the last history
/// frame, projected on the ego-threat line. Without a curvature value the
/// ego's recent path curvature is used. With no threats d_min and TTC stay
/// infinite.
RiskInputs extract_risk_inputs(
  const PredictionBatch & pred, std::size_t ego, std::span<const std::size_t> threats,
  std::span<const SceneFrame> history, std::optional<double> curvature, double dt,
  const RiskWeights & weights);

/// Signed curvature of the circle through three points; 0 when collinear.
double menger_curvature(Vec2 a, Vec2 b, Vec2 c);

/// CSV header of the warning event log.
inline constexpr std::string_view kEventLogHeader =
  "episode_id,tick,time,track_id,R,R_pred,R_kin,R_geo,mu_R,sigma_R,T_dyn,triggered";

void write_event_row(std::ostream & out, const WarningEvent & e);
void write_event_log(const std::string & path, std::span<const WarningEvent> events);
std::vector<WarningEvent> read_event_log(const std::string & path);

}  // namespace fcw

#endif  // FCW__DRTA_HPP_
