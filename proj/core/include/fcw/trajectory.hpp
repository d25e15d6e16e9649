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

#ifndef FCW__TRAJECTORY_HPP_
#define FCW__TRAJECTORY_HPP_

#include "fcw/scene_graph.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace fcw
{

/// N vehicles x steps x (x, y), metres in the scene frame.
class TrajectorySet
{
public:
  TrajectorySet() = default;
  TrajectorySet(std::size_t vehicles, std::size_t steps)
  : vehicles_(vehicles), steps_(steps), xy_(vehicles * steps * 2, 0.0)
  {
  }

  std::size_t vehicles() const { return vehicles_; }
  std::size_t steps() const { return steps_; }
  bool empty() const { return xy_.empty(); }

  double & x(std::size_t v, std::size_t k) { return xy_[(v * steps_ + k) * 2]; }
  double & y(std::size_t v, std::size_t k) { return xy_[(v * steps_ + k) * 2 + 1]; }
  double x(std::size_t v, std::size_t k) const { return xy_[(v * steps_ + k) * 2]; }
  double y(std::size_t v, std::size_t k) const { return xy_[(v * steps_ + k) * 2 + 1]; }
  Vec2 at(std::size_t v, std::size_t k) const { return {x(v, k), y(v, k)}; }

  /// Coordinate c (0 = x, 1 = y) of step k for vehicle v.
  double & coord(std::size_t v, std::size_t k, std::size_t c) { return xy_[(v * steps_ + k) * 2 + c]; }
  double coord(std::size_t v, std::size_t k, std::size_t c) const { return xy_[(v * steps_ + k) * 2 + c]; }

  std::span<const double> values() const { return xy_; }
  std::span<double> values() { return xy_; }

  bool operator==(const TrajectorySet &) const = default;

private:
  std::size_t vehicles_ = 0;
  std::size_t steps_ = 0;
  std::vector<double> xy_;
};

/// Model output for one window. Lower/upper are the quantile-head bounds,
/// ordered only once a conformal correction has been applied.
struct PredictionBatch
{
  TrajectorySet point;
  TrajectorySet lower;
  TrajectorySet upper;
  bool calibrated = false;
};

/// T observed frames with a fixed roster, plus the T' future positions when
/// known.
struct Window
{
  std::vector<SceneFrame> history;
  TrajectorySet future;
  int episode_id = 0;
  std::size_t start_frame = 0;
};

}  // namespace fcw

#endif  // FCW__TRAJECTORY_HPP_
