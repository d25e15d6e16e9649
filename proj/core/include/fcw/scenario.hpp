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

#ifndef FCW__SCENARIO_HPP_
#define FCW__SCENARIO_HPP_

#include "fcw/scene_graph.hpp"
#include "fcw/trajectory.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fcw
{

/// Centre distance below which two vehicles are considered in contact.
inline constexpr double kContactThreshold = 2.0;
inline constexpr double kLaneWidth = 3.5;

enum class ScenarioFamily {
  kHighwayMerging,
  kUrbanIntersection,
  kSuddenBraking,
  kCutIn,
  kCongestedTraffic,
  kCurvedRoad,
};

inline constexpr ScenarioFamily kAllFamilies[] = {
  ScenarioFamily::kHighwayMerging,   ScenarioFamily::kUrbanIntersection,
  ScenarioFamily::kSuddenBraking,    ScenarioFamily::kCutIn,
  ScenarioFamily::kCongestedTraffic, ScenarioFamily::kCurvedRoad,
};

std::string_view family_name(ScenarioFamily family);
/// Accepts the snake_case names ("sudden_braking", ...). Throws on unknown.
ScenarioFamily parse_family(std::string_view name);

/// Generation request for one episode. Unset optionals are drawn from the
/// seed; set ones pin the family's event parameters.
struct ScenarioSpec
{
  ScenarioFamily family = ScenarioFamily::kSuddenBraking;
  std::size_t vehicle_count = 4;
  double duration = 10.0;
  double dt = 0.1;
  double noise = 0.02;      // position noise std, metres
  double curvature = 0.0;   // curved_road arc curvature (1/m); 0 draws one
  std::uint64_t seed = 0;

  std::optional<bool> hazard;  // dangerous vs benign variant
  std::optional<double> initial_gap;
  std::optional<double> initial_speed;
  std::optional<double> event_time;     // brake / cut-in / merge start
  std::optional<double> event_duration;
  std::optional<double> reaction_time;  // ego inattention after the event
  /// Congested family: lead-vehicle speed oscillation.
  std::optional<double> wave_amplitude;
  std::optional<double> wave_period;

  std::size_t frame_count() const;
  /// Throws std::invalid_argument when dt <= 0, noise < 0, duration is not a
  /// multiple of dt, or the vehicle count is below the family minimum.
  void validate() const;
};

/// True kinematic state of a simulated vehicle.
struct VehicleState
{
  double x = 0.0;
  double y = 0.0;
  double speed = 0.0;
  double heading = 0.0;
  double accel = 0.0;
  double length = 4.5;
  double width = 1.8;
};

struct IdmParams
{
  double desired_speed = 30.0;
  double time_headway = 1.5;
  double min_gap = 2.0;
  double max_accel = 1.5;
  double comfort_decel = 2.0;
  double exponent = 4.0;
  double max_brake = 9.0;  // physical deceleration limit
};

/// Intelligent Driver Model acceleration for a bumper-to-bumper `gap`.
double idm_acceleration(double speed, double lead_speed, double gap, const IdmParams & params);

/// Advances `follower` by one step along its heading with the IDM
/// acceleration against `leader` (assumed ahead in the same lane).
VehicleState idm_step(
  const VehicleState & follower, const VehicleState & leader, const IdmParams & params, double dt);

struct EpisodeLabel
{
  bool danger = false;
  std::optional<double> contact_time;
};

struct Episode
{
  int id = 0;
  ScenarioFamily family = ScenarioFamily::kSuddenBraking;
  double dt = 0.1;
  std::vector<SceneFrame> frames;
  EpisodeLabel label;
  /// Noise-free states per frame (empty for episodes read from files).
  std::vector<std::vector<VehicleState>> truth;
};

/// Exhaustive scan of all pairs over all frames of the stored positions.
EpisodeLabel scan_contacts(std::span<const SceneFrame> frames, double threshold = kContactThreshold);

/// Simulates one episode. Vehicle 0 is the ego. Throws DataError when
/// vehicles start in contact.
Episode gen_scenario(const ScenarioSpec & spec, int episode_id = 0);

/// Extrapolates each vehicle's last-frame velocity for `steps` steps.
TrajectorySet cv_baseline(std::span<const SceneFrame> history, std::size_t steps, double dt);

enum class Split { kTrain, kCalibration, kTest };

struct WindowRef
{
  std::size_t episode = 0;
  std::size_t start = 0;
};

/// Episodes plus their train/calibration/test assignment. Windows are
/// sliding with stride 1 and never straddle splits.
struct TrajectoryDataset
{
  std::vector<Episode> episodes;
  std::vector<Split> split;
  std::size_t obs_steps = 8;
  std::size_t pred_steps = 12;

  std::size_t windows_in(std::size_t episode) const;
  std::vector<WindowRef> windows(Split which) const;
  std::vector<WindowRef> all_windows() const;
  Window window(const WindowRef & ref) const;
  std::vector<std::size_t> episodes_in(Split which) const;
};

/// Assigns episodes 70/15/15 to train/calibration/test after a seeded
/// shuffle. Throws DataError for episodes shorter than T + T'.
TrajectoryDataset make_dataset(
  std::vector<Episode> episodes, std::size_t obs_steps, std::size_t pred_steps,
  std::uint64_t split_seed);
TrajectoryDataset make_dataset(
  std::span<const ScenarioSpec> specs, std::size_t obs_steps, std::size_t pred_steps,
  std::uint64_t split_seed);

/// Trajectory interchange: header then one row per (episode, frame, vehicle):
/// episode_id,t,vehicle_id,x,y,vx,vy,ax,ay,length,width
void write_trajectories(const std::string & path, std::span<const Episode> episodes);
/// Sidecar: episode_id,danger,contact_time,family (contact_time "nan" if none)
void write_labels(const std::string & path, std::span<const Episode> episodes);
/// In-memory forms of the two files.
std::string trajectories_text(std::span<const Episode> episodes);
std::string labels_text(std::span<const Episode> episodes);
std::vector<Episode> read_episodes(const std::string & trajectories_path, const std::string & labels_path);

}  // namespace fcw

#endif  // FCW__SCENARIO_HPP_
