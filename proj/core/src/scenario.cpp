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

#include "fcw/scenario.hpp"

#include "fcw/error.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace fcw
{

namespace
{

constexpr std::pair<ScenarioFamily, std::string_view> kFamilyNames[] = {
  {ScenarioFamily::kHighwayMerging, "highway_merging"},
  {ScenarioFamily::kUrbanIntersection, "urban_intersection"},
  {ScenarioFamily::kSuddenBraking, "sudden_braking"},
  {ScenarioFamily::kCutIn, "cut_in"},
  {ScenarioFamily::kCongestedTraffic, "congested_traffic"},
  {ScenarioFamily::kCurvedRoad, "curved_road"},
};

constexpr double kBrakeDecel = 6.0;
constexpr double kSameLane = 1.75;

}  // namespace

std::string_view family_name(ScenarioFamily family)
{
  for (const auto & [f, name] : kFamilyNames) {
    if (f == family) {
      return name;
    }
  }
  throw std::invalid_argument("family_name: unknown family");
}

ScenarioFamily parse_family(std::string_view name)
{
  for (const auto & [f, n] : kFamilyNames) {
    if (n == name) {
      return f;
    }
  }
  throw std::invalid_argument("unknown scenario family '" + std::string(name) + "'");
}

std::size_t ScenarioSpec::frame_count() const
{
  return static_cast<std::size_t>(std::llround(duration / dt));
}

void ScenarioSpec::validate() const
{
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw std::invalid_argument("ScenarioSpec: dt must be positive");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) {
    throw std::invalid_argument("ScenarioSpec: noise must be non-negative");
  }
  if (!(duration > 0.0) || !std::isfinite(duration)) {
    throw std::invalid_argument("ScenarioSpec: duration must be positive");
  }
  const double ratio = duration / dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-6) {
    throw std::invalid_argument("ScenarioSpec: duration must be a multiple of dt");
  }
  if (vehicle_count < 2) {
    throw std::invalid_argument("ScenarioSpec: at least 2 vehicles required");
  }
  if (curvature < 0.0 || curvature > 0.2) {
    throw std::invalid_argument("ScenarioSpec: curvature must lie in [0, 0.2]");
  }
}

double idm_acceleration(double speed, double lead_speed, double gap, const IdmParams & p)
{
  const double free = 1.0 - std::pow(speed / p.desired_speed, p.exponent);
  const double dv = speed - lead_speed;
  const double desired =
    p.min_gap + std::max(0.0, speed * p.time_headway + speed * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel)));
  const double g = std::max(gap, 1e-3);
  const double a = p.max_accel * (free - (desired / g) * (desired / g));
  return std::max(a, -p.max_brake);
}

namespace
{

/// Constant-acceleration update over dt that stops at zero speed.
void advance_longitudinal(double & s, double & v, double a, double dt)
{
  if (a < 0.0 && v + a * dt < 0.0) {
    s += -v * v / (2.0 * a);
    v = 0.0;
    return;
  }
  s += v * dt + 0.5 * a * dt * dt;
  v += a * dt;
}

}  // namespace

VehicleState idm_step(
  const VehicleState & follower, const VehicleState & leader, const IdmParams & params, double dt)
{
  const double dx = leader.x - follower.x;
  const double dy = leader.y - follower.y;
  const double ux = std::cos(follower.heading);
  const double uy = std::sin(follower.heading);
  const double gap = dx * ux + dy * uy - 0.5 * (follower.length + leader.length);
  const double a = idm_acceleration(follower.speed, leader.speed, gap, params);
  VehicleState out = follower;
  double s = 0.0;
  advance_longitudinal(s, out.speed, a, dt);
  out.x += s * ux;
  out.y += s * uy;
  out.accel = a;
  return out;
}

EpisodeLabel scan_contacts(std::span<const SceneFrame> frames, double threshold)
{
  EpisodeLabel label;
  for (const auto & f : frames) {
    const std::size_t n = f.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = std::hypot(f.vehicles[i].x - f.vehicles[j].x, f.vehicles[i].y - f.vehicles[j].y);
        if (d < threshold) {
          label.danger = true;
          label.contact_time = f.timestamp;
          return label;
        }
      }
    }
  }
  return label;
}

namespace
{

// ---------------------------------------------------------------------------
// Simulation model. Every vehicle moves along a path with arc length s and a
// lateral offset d(t); longitudinal acceleration comes from a script or IDM.

struct Path
{
  int id = 0;
  double ox = 0.0, oy = 0.0;  // start point
  double heading = 0.0;       // initial tangent angle
  double curvature = 0.0;     // > 0 turns left
};

struct LaneChange
{
  double start = 0.0;
  double duration = 1.0;
  double from = 0.0;
  double to = 0.0;
};

struct AccelSegment
{
  double start = 0.0;
  double end = 0.0;
  double accel = 0.0;
};

struct Agent
{
  Path path;
  double s = 0.0;
  double v = 0.0;
  double d = 0.0;
  std::optional<LaneChange> lane_change;
  double length = 4.5;
  double width = 1.8;

  bool scripted = false;
  std::vector<AccelSegment> script;
  double wave_amplitude = 0.0;  // speed oscillation A*sin(2 pi t / P)
  double wave_period = 0.0;

  IdmParams idm;
  double inattentive_from = 0.0;
  double inattentive_until = 0.0;  // holds speed within [from, until)

  double last_accel = 0.0;
};

double smoothstep5(double u)
{
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

double smoothstep5_rate(double u)
{
  if (u <= 0.0 || u >= 1.0) {
    return 0.0;
  }
  return 30.0 * u * u * (1.0 - u) * (1.0 - u);
}

double lateral_offset(const Agent & a, double t)
{
  if (!a.lane_change) {
    return a.d;
  }
  const auto & lc = *a.lane_change;
  return lc.from + (lc.to - lc.from) * smoothstep5((t - lc.start) / lc.duration);
}

double lateral_rate(const Agent & a, double t)
{
  if (!a.lane_change) {
    return 0.0;
  }
  const auto & lc = *a.lane_change;
  return (lc.to - lc.from) * smoothstep5_rate((t - lc.start) / lc.duration) / lc.duration;
}

VehicleState true_state(const Agent & a, double t)
{
  const Path & p = a.path;
  const double d = lateral_offset(a, t);
  const double dd = lateral_rate(a, t);
  VehicleState st;
  st.length = a.length;
  st.width = a.width;
  st.accel = a.last_accel;
  double vx = 0.0;
  double vy = 0.0;
  double tangent = p.heading;
  if (p.curvature == 0.0) {
    const double ux = std::cos(p.heading);
    const double uy = std::sin(p.heading);
    st.x = p.ox + a.s * ux - d * uy;
    st.y = p.oy + a.s * uy + d * ux;
    vx = a.v * ux - dd * uy;
    vy = a.v * uy + dd * ux;
  } else {
    const double k = p.curvature;
    const double theta = a.s * k;
    tangent = p.heading + theta;
    // Centre of the reference circle sits to the left of the start point.
    const double cx = p.ox - std::sin(p.heading) / k;
    const double cy = p.oy + std::cos(p.heading) / k;
    const double r = 1.0 / k - d;
    st.x = cx + r * std::sin(tangent);
    st.y = cy - r * std::cos(tangent);
    const double rate = r * k * a.v;
    vx = rate * std::cos(tangent) - dd * std::sin(tangent);
    vy = rate * std::sin(tangent) + dd * std::cos(tangent);
  }
  st.speed = std::hypot(vx, vy);
  st.heading = st.speed > 1e-9 ? std::atan2(vy, vx) : tangent;
  return st;
}

double scripted_accel(const Agent & a, double t)
{
  double acc = 0.0;
  for (const auto & seg : a.script) {
    if (t >= seg.start - 1e-9 && t < seg.end - 1e-9) {
      acc += seg.accel;
    }
  }
  if (a.wave_amplitude > 0.0 && a.wave_period > 0.0) {
    const double w = 2.0 * std::numbers::pi / a.wave_period;
    acc += -a.wave_amplitude * w * std::cos(w * t);
  }
  return acc;
}

/// Nearest agent ahead on the same path within half a lane; -1 if none.
int find_leader(const std::vector<Agent> & agents, std::size_t i, double t)
{
  const Agent & me = agents[i];
  const double my_d = lateral_offset(me, t);
  int best = -1;
  double best_ds = 0.0;
  for (std::size_t j = 0; j < agents.size(); ++j) {
    if (j == i || agents[j].path.id != me.path.id) {
      continue;
    }
    const double ds = agents[j].s - me.s;
    if (ds <= 0.0 || std::abs(lateral_offset(agents[j], t) - my_d) >= kSameLane) {
      continue;
    }
    if (best < 0 || ds < best_ds) {
      best = static_cast<int>(j);
      best_ds = ds;
    }
  }
  return best;
}

double agent_accel(const std::vector<Agent> & agents, std::size_t i, double t)
{
  const Agent & a = agents[i];
  if (a.scripted) {
    return scripted_accel(a, t);
  }
  if (t >= a.inattentive_from - 1e-9 && t < a.inattentive_until - 1e-9) {
    return 0.0;
  }
  const int lead = find_leader(agents, i, t);
  if (lead < 0) {
    return idm_acceleration(a.v, a.v, 1e9, a.idm);
  }
  const Agent & l = agents[static_cast<std::size_t>(lead)];
  const double gap = l.s - a.s - 0.5 * (a.length + l.length);
  return idm_acceleration(a.v, l.v, gap, a.idm);
}

// ---------------------------------------------------------------------------
// Families. Vehicle 0 is the ego and vehicle 1 carries the family's event.

class Builder
{
public:
  explicit Builder(const ScenarioSpec & spec) : spec_(spec), rng_(spec.seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin() { return std::bernoulli_distribution(0.5)(rng_); }
  double on_grid(double t) const { return std::round(t / spec_.dt) * spec_.dt; }
  std::mt19937_64 & rng() { return rng_; }

  Agent idm_agent(const Path & path, double s, double v, double d)
  {
    Agent a;
    a.path = path;
    a.s = s;
    a.v = v;
    a.d = d;
    a.idm.desired_speed = std::max(v, 1.0) * uniform(1.0, 1.1);
    a.length = uniform(4.2, 4.8);
    a.width = uniform(1.7, 1.9);
    return a;
  }

  Agent scripted_agent(const Path & path, double s, double v, double d)
  {
    Agent a = idm_agent(path, s, v, d);
    a.scripted = true;
    return a;
  }

  /// Background traffic: lane `d` ahead of and behind s = 0 and, when
  /// `lane0_followers`, a queue behind the ego in lane 0.
  void add_background(std::vector<Agent> & agents, const Path & path, double d, double v, bool lane0_followers)
  {
    double side_ahead = uniform(-5.0, 10.0);
    double side_behind = -uniform(15.0, 30.0);
    double queue = 0.0;
    std::size_t slot = 0;
    const std::size_t first = agents.size();
    const std::size_t slots = lane0_followers ? 3 : 2;
    while (agents.size() < spec_.vehicle_count) {
      const double speed = v * uniform(0.9, 1.1);
      Agent a;
      switch (slot % slots) {
        case 0:
          a = idm_agent(path, side_ahead, speed, d);
          side_ahead += uniform(25.0, 40.0);
          break;
        case 1:
          a = idm_agent(path, side_behind, speed, d);
          side_behind -= uniform(25.0, 40.0);
          break;
        default:
          queue -= uniform(25.0, 35.0);
          a = idm_agent(path, queue, v, 0.0);
          break;
      }
      a.idm.time_headway = 1.2;
      a.idm.desired_speed = 1.3 * speed;
      agents.push_back(a);
      ++slot;
    }
    // Vehicles with nobody ahead cruise at their initial speed.
    for (std::size_t i = first; i < agents.size(); ++i) {
      if (find_leader(agents, i, 0.0) < 0) {
        agents[i].idm.desired_speed = std::max(agents[i].v, 1.0);
      }
    }
  }

  const ScenarioSpec & spec() const { return spec_; }

private:
  const ScenarioSpec & spec_;
  std::mt19937_64 rng_;
};

struct Setup
{
  std::vector<Agent> agents;
};

Setup setup_sudden_braking(Builder & b, bool hazard, const Path & path)
{
  const ScenarioSpec & s = b.spec();
  const double v = s.initial_speed.value_or(b.uniform(15.0, 25.0));
  const double gap = s.initial_gap.value_or(b.uniform(25.0, 40.0));
  const double t_brake = b.on_grid(s.event_time.value_or(b.uniform(2.0, std::max(2.5, s.duration - 4.0))));
  const double brake_len = s.event_duration.value_or(v / kBrakeDecel);
  const double reaction = s.reaction_time.value_or(hazard ? b.uniform(2.5, 4.0) : b.uniform(0.3, 0.8));

  Setup out;
  Agent ego = b.idm_agent(path, 0.0, v, 0.0);
  ego.inattentive_from = 0.0;
  ego.inattentive_until = t_brake + reaction;
  out.agents.push_back(ego);

  Agent lead = b.scripted_agent(path, gap, v, 0.0);
  lead.script.push_back({t_brake, t_brake + brake_len, -kBrakeDecel});
  out.agents.push_back(lead);
  b.add_background(out.agents, path, kLaneWidth, v, true);
  return out;
}

Setup setup_cut_in(Builder & b, bool hazard, const Path & path)
{
  const ScenarioSpec & s = b.spec();
  const double v = s.initial_speed.value_or(b.uniform(15.0, 25.0));
  const double gap = s.initial_gap.value_or(hazard ? b.uniform(5.0, 10.0) : b.uniform(30.0, 40.0));
  const double t_cut = b.on_grid(s.event_time.value_or(b.uniform(2.0, std::max(2.5, s.duration - 5.0))));
  const double len = s.event_duration.value_or(b.uniform(2.0, 3.0));
  const double reaction = s.reaction_time.value_or(hazard ? b.uniform(2.5, 4.0) : b.uniform(0.3, 0.8));
  const double cutter_v = hazard ? v - b.uniform(4.0, 7.0) : v + b.uniform(0.0, 2.0);

  Setup out;
  Agent ego = b.idm_agent(path, 0.0, v, 0.0);
  ego.inattentive_from = t_cut;
  ego.inattentive_until = t_cut + reaction;
  ego.idm.desired_speed = v;
  out.agents.push_back(ego);

  // `gap` is the longitudinal spacing when the lane change starts.
  const double cutter_s = gap + (v - cutter_v) * t_cut;
  Agent cutter = b.scripted_agent(path, cutter_s, cutter_v, kLaneWidth);
  cutter.lane_change = LaneChange{t_cut, len, kLaneWidth, 0.0};
  out.agents.push_back(cutter);
  if (out.agents.size() < s.vehicle_count) {
    // Lane-0 leader well ahead so the ego has car-following context.
    out.agents.push_back(b.idm_agent(path, cutter_s + b.uniform(40.0, 60.0), v, 0.0));
  }
  b.add_background(out.agents, path, kLaneWidth, cutter_v, true);
  // Keep background clear of the cutter's start slot.
  for (std::size_t i = 3; i < out.agents.size(); ++i) {
    if (std::abs(out.agents[i].s - cutter_s) < 12.0) {
      out.agents[i].s = cutter_s + (out.agents[i].s >= cutter_s ? 12.0 : -12.0);
    }
  }
  return out;
}

Setup setup_merging(Builder & b, bool hazard, const Path & path)
{
  const ScenarioSpec & s = b.spec();
  const double v = s.initial_speed.value_or(b.uniform(18.0, 26.0));
  const double t_merge = b.on_grid(s.event_time.value_or(b.uniform(2.0, std::max(2.5, s.duration - 5.0))));
  const double len = s.event_duration.value_or(b.uniform(2.5, 3.5));
  const double reaction = s.reaction_time.value_or(hazard ? b.uniform(2.5, 4.0) : b.uniform(0.3, 0.8));
  const double v_ramp = v - b.uniform(4.0, 7.0);
  const double ramp_accel = b.uniform(0.8, 1.5);
  // Hazard: the ramp vehicle arrives in the lane just ahead of the ego.
  const double rel = s.initial_gap.value_or(hazard ? b.uniform(8.0, 14.0) : b.uniform(35.0, 50.0));
  const double ramp_s = rel + (v - v_ramp) * t_merge;

  Setup out;
  Agent ego = b.idm_agent(path, 0.0, v, 0.0);
  ego.inattentive_from = t_merge;
  ego.inattentive_until = t_merge + reaction;
  ego.idm.desired_speed = v;
  out.agents.push_back(ego);

  Agent ramp = b.scripted_agent(path, ramp_s, v_ramp, -kLaneWidth);
  ramp.script.push_back({0.0, t_merge + len, ramp_accel * (hazard ? 0.0 : 1.0)});
  ramp.lane_change = LaneChange{t_merge, len, -kLaneWidth, 0.0};
  out.agents.push_back(ramp);
  b.add_background(out.agents, path, kLaneWidth, v, true);
  return out;
}

Setup setup_intersection(Builder & b, bool hazard)
{
  const ScenarioSpec & s = b.spec();
  const double v_ego = s.initial_speed.value_or(b.uniform(8.0, 14.0));
  const double v_cross = b.uniform(8.0, 14.0);
  const double t_arrive = b.on_grid(s.event_time.value_or(b.uniform(3.0, std::max(3.5, s.duration - 3.0))));
  // Benign crossings pass between the ego and its first follower.
  const double offset = hazard ? b.uniform(-0.1, 0.1) : (b.coin() ? 1.0 : -1.0) * b.uniform(1.3, 1.7);

  const Path main{0, 0.0, 0.0, 0.0, 0.0};
  const Path cross{1, 0.0, 0.0, std::numbers::pi / 2.0, 0.0};

  Setup out;
  Agent ego = b.scripted_agent(main, -v_ego * t_arrive, v_ego, 0.0);
  out.agents.push_back(ego);
  Agent crosser = b.scripted_agent(cross, -v_cross * (t_arrive + offset), v_cross, 0.0);
  out.agents.push_back(crosser);
  double back = ego.s;
  while (out.agents.size() < s.vehicle_count) {
    back -= v_ego * b.uniform(3.5, 4.0);
    Agent f = b.idm_agent(main, back, v_ego, 0.0);
    f.idm.desired_speed = v_ego;
    out.agents.push_back(f);
  }
  return out;
}

Setup setup_congested(Builder & b, bool hazard, const Path & path)
{
  const ScenarioSpec & s = b.spec();
  const double v0 = s.initial_speed.value_or(b.uniform(6.0, 10.0));
  const double amp = s.wave_amplitude.value_or(v0 * b.uniform(0.6, 1.0));
  const double period = s.wave_period.value_or(b.uniform(10.0, 16.0));
  const double reaction = s.reaction_time.value_or(b.uniform(2.5, 4.0));
  // Leader decelerates fastest at t = k * period; start inattention just before.
  const double t_event = b.on_grid(s.event_time.value_or(period * std::floor(b.uniform(0.0, std::max(1.0, s.duration / period - 0.5))) + period * 0.05));

  IdmParams idm;
  idm.desired_speed = v0 + amp + 2.0;
  const double gap0 = s.initial_gap.value_or(
    (idm.min_gap + v0 * idm.time_headway) / std::sqrt(1.0 - std::pow(v0 / idm.desired_speed, idm.exponent)) + 4.5);

  Setup out;
  // Platoon: leader (vehicle 1) at the front, ego right behind it, rest behind.
  Agent ego = b.idm_agent(path, 0.0, v0, 0.0);
  ego.idm = idm;
  ego.length = 4.5;
  if (hazard) {
    ego.inattentive_from = t_event;
    ego.inattentive_until = t_event + reaction;
  }
  out.agents.push_back(ego);
  Agent lead = b.scripted_agent(path, gap0, v0, 0.0);
  lead.length = 4.5;
  lead.wave_amplitude = amp;
  lead.wave_period = period;
  out.agents.push_back(lead);
  double back = 0.0;
  while (out.agents.size() < s.vehicle_count) {
    back -= gap0;
    Agent f = b.idm_agent(path, back, v0, 0.0);
    f.idm = idm;
    f.length = 4.5;
    out.agents.push_back(f);
  }
  return out;
}

Setup setup_curved(Builder & b, bool hazard, const Path & path)
{
  const ScenarioSpec & s = b.spec();
  const double v = s.initial_speed.value_or(b.uniform(12.0, 20.0));
  const double gap = s.initial_gap.value_or(b.uniform(25.0, 35.0));
  const double t_brake = b.on_grid(s.event_time.value_or(b.uniform(2.0, std::max(2.5, s.duration - 4.0))));
  const double reaction = s.reaction_time.value_or(b.uniform(2.5, 4.0));

  Setup out;
  Agent ego = b.idm_agent(path, 0.0, v, 0.0);
  ego.inattentive_until = hazard ? t_brake + reaction : 0.0;
  ego.idm.desired_speed = v;
  out.agents.push_back(ego);
  Agent lead = b.scripted_agent(path, gap, v, 0.0);
  if (hazard) {
    lead.script.push_back({t_brake, t_brake + s.event_duration.value_or(v / kBrakeDecel), -kBrakeDecel});
  }
  out.agents.push_back(lead);
  // Inner lane traffic.
  b.add_background(out.agents, path, kLaneWidth, v, true);
  return out;
}

}  // namespace

Episode gen_scenario(const ScenarioSpec & spec, int episode_id)
{
  spec.validate();
  Builder b(spec);
  const bool hazard = spec.hazard.has_value() ? *spec.hazard : b.coin();
  double curvature = spec.curvature;
  if (spec.family == ScenarioFamily::kCurvedRoad && curvature == 0.0) {
    curvature = b.uniform(0.005, 0.02);
  }
  const Path road{0, 0.0, 0.0, 0.0, spec.family == ScenarioFamily::kCurvedRoad ? curvature : 0.0};

  Setup setup;
  switch (spec.family) {
    case ScenarioFamily::kSuddenBraking: setup = setup_sudden_braking(b, hazard, road); break;
    case ScenarioFamily::kCutIn: setup = setup_cut_in(b, hazard, road); break;
    case ScenarioFamily::kHighwayMerging: setup = setup_merging(b, hazard, road); break;
    case ScenarioFamily::kUrbanIntersection: setup = setup_intersection(b, hazard); break;
    case ScenarioFamily::kCongestedTraffic: setup = setup_congested(b, hazard, road); break;
    case ScenarioFamily::kCurvedRoad: setup = setup_curved(b, hazard, road); break;
  }
  auto & agents = setup.agents;
  agents.resize(spec.vehicle_count);

  const std::size_t frames = spec.frame_count();
  const std::size_t n = agents.size();
  Episode ep;
  ep.id = episode_id;
  ep.family = spec.family;
  ep.dt = spec.dt;
  ep.truth.assign(frames, {});

  std::vector<double> acc(n, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f) * spec.dt;
    for (std::size_t i = 0; i < n; ++i) {
      acc[i] = agent_accel(agents, i, t);
      if (agents[i].v <= 0.0 && acc[i] < 0.0) {
        acc[i] = 0.0;
      }
    }
    auto & row = ep.truth[f];
    row.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      agents[i].last_accel = acc[i];
      row.push_back(true_state(agents[i], t));
    }
    if (f == 0) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          if (std::hypot(row[i].x - row[j].x, row[i].y - row[j].y) < kContactThreshold) {
            throw DataError(
              "gen_scenario: vehicles " + std::to_string(i) + " and " + std::to_string(j) +
              " overlap at t=0");
          }
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      advance_longitudinal(agents[i].s, agents[i].v, acc[i], spec.dt);
    }
  }

  // Observation: Gaussian position noise, velocities and accelerations by
  // finite differences of the noisy positions.
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::vector<Vec2>> noisy(frames, std::vector<Vec2>(n));
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < n; ++i) {
      const double ex = spec.noise > 0.0 ? spec.noise * noise(b.rng()) : 0.0;
      const double ey = spec.noise > 0.0 ? spec.noise * noise(b.rng()) : 0.0;
      noisy[f][i] = {ep.truth[f][i].x + ex, ep.truth[f][i].y + ey};
    }
  }
  ep.frames.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    SceneFrame & fr = ep.frames[f];
    fr.timestamp = static_cast<double>(f) * spec.dt;
    fr.ids.resize(n);
    fr.vehicles.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      fr.ids[i] = static_cast<int>(i);
      auto & o = fr.vehicles[i];
      o.x = noisy[f][i].x;
      o.y = noisy[f][i].y;
      o.length = ep.truth[f][i].length;
      o.width = ep.truth[f][i].width;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < frames; ++f) {
      const std::size_t a = f == 0 ? 0 : f - 1;
      const std::size_t c = f == 0 ? std::min<std::size_t>(1, frames - 1) : f;
      auto & o = ep.frames[f].vehicles[i];
      if (a != c) {
        o.vx = (noisy[c][i].x - noisy[a][i].x) / spec.dt;
        o.vy = (noisy[c][i].y - noisy[a][i].y) / spec.dt;
      }
    }
    for (std::size_t f = 1; f < frames; ++f) {
      const std::size_t m = std::min<std::size_t>(f, 5);
      auto & o = ep.frames[f].vehicles[i];
      const auto & p = ep.frames[f - m].vehicles[i];
      o.ax = (o.vx - p.vx) / (static_cast<double>(m) * spec.dt);
      o.ay = (o.vy - p.vy) / (static_cast<double>(m) * spec.dt);
    }
  }
  ep.label = scan_contacts(ep.frames);
  return ep;
}

TrajectorySet cv_baseline(std::span<const SceneFrame> history, std::size_t steps, double dt)
{
  if (history.size() < 2) {
    throw std::invalid_argument("cv_baseline: at least 2 history frames required");
  }
  const SceneFrame & last = history.back();
  TrajectorySet out(last.size(), steps);
  for (std::size_t v = 0; v < last.size(); ++v) {
    const auto & o = last.vehicles[v];
    for (std::size_t k = 0; k < steps; ++k) {
      const double h = static_cast<double>(k + 1) * dt;
      out.x(v, k) = o.x + o.vx * h;
      out.y(v, k) = o.y + o.vy * h;
    }
  }
  return out;
}

std::size_t TrajectoryDataset::windows_in(std::size_t episode) const
{
  const std::size_t f = episodes.at(episode).frames.size();
  const std::size_t need = obs_steps + pred_steps;
  return f < need ? 0 : f - need + 1;
}

std::vector<WindowRef> TrajectoryDataset::windows(Split which) const
{
  std::vector<WindowRef> out;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (split[e] != which) {
      continue;
    }
    for (std::size_t s = 0; s < windows_in(e); ++s) out.push_back({e, s});
  }
  return out;
}

std::vector<WindowRef> TrajectoryDataset::all_windows() const
{
  std::vector<WindowRef> out;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    for (std::size_t s = 0; s < windows_in(e); ++s) out.push_back({e, s});
  }
  return out;
}

std::vector<std::size_t> TrajectoryDataset::episodes_in(Split which) const
{
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (split[e] == which) {
      out.push_back(e);
    }
  }
  return out;
}

Window TrajectoryDataset::window(const WindowRef & ref) const
{
  if (ref.start >= windows_in(ref.episode)) {
    throw RangeError("TrajectoryDataset::window: start out of range");
  }
  const Episode & ep = episodes[ref.episode];
  Window w;
  w.episode_id = ep.id;
  w.start_frame = ref.start;
  w.history.assign(
    ep.frames.begin() + static_cast<std::ptrdiff_t>(ref.start),
    ep.frames.begin() + static_cast<std::ptrdiff_t>(ref.start + obs_steps));
  const std::size_t n = w.history.back().size();
  w.future = TrajectorySet(n, pred_steps);
  for (std::size_t k = 0; k < pred_steps; ++k) {
    const SceneFrame & f = ep.frames[ref.start + obs_steps + k];
    for (std::size_t v = 0; v < n; ++v) {
      w.future.x(v, k) = f.vehicles[v].x;
      w.future.y(v, k) = f.vehicles[v].y;
    }
  }
  return w;
}

TrajectoryDataset make_dataset(
  std::vector<Episode> episodes, std::size_t obs_steps, std::size_t pred_steps,
  std::uint64_t split_seed)
{
  if (obs_steps < 2 || pred_steps < 1) {
    throw DataError("make_dataset: need T >= 2 and T' >= 1");
  }
  for (const auto & ep : episodes) {
    if (ep.frames.size() < obs_steps + pred_steps) {
      throw DataError(
        "make_dataset: episode " + std::to_string(ep.id) + " has " +
        std::to_string(ep.frames.size()) + " frames, fewer than T+T'=" +
        std::to_string(obs_steps + pred_steps));
    }
    for (const auto & f : ep.frames) {
      if (f.ids != ep.frames.front().ids) {
        throw DataError("make_dataset: episode " + std::to_string(ep.id) + " roster changes");
      }
    }
  }
  TrajectoryDataset ds;
  ds.obs_steps = obs_steps;
  ds.pred_steps = pred_steps;
  const std::size_t n = episodes.size();
  ds.episodes = std::move(episodes);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
  const auto n_cal = std::min(n - n_train, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n))));
  ds.split.assign(n, Split::kTest);
  for (std::size_t i = 0; i < n; ++i) {
    ds.split[order[i]] = i < n_train ? Split::kTrain : (i < n_train + n_cal ? Split::kCalibration : Split::kTest);
  }
  return ds;
}

TrajectoryDataset make_dataset(
  std::span<const ScenarioSpec> specs, std::size_t obs_steps, std::size_t pred_steps,
  std::uint64_t split_seed)
{
  std::vector<Episode> episodes;
  episodes.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    episodes.push_back(gen_scenario(specs[i], static_cast<int>(i)));
  }
  return make_dataset(std::move(episodes), obs_steps, pred_steps, split_seed);
}

// ---------------------------------------------------------------------------
// Text files

namespace
{

using namespace text;

constexpr std::string_view kTrajectoryHeader = "episode_id,t,vehicle_id,x,y,vx,vy,ax,ay,length,width";
constexpr std::string_view kLabelHeader = "episode_id,danger,contact_time,family";

}  // namespace

std::string trajectories_text(std::span<const Episode> episodes)
{
  std::string out(kTrajectoryHeader);
  out += '\n';
  for (const auto & ep : episodes) {
    for (const auto & f : ep.frames) {
      for (std::size_t i = 0; i < f.size(); ++i) {
        const auto & v = f.vehicles[i];
        out += std::to_string(ep.id);
        out += ',';
        put(out, f.timestamp);
        out += ',';
        out += std::to_string(f.ids[i]);
        for (double x : {v.x, v.y, v.vx, v.vy, v.ax, v.ay, v.length, v.width}) {
          out += ',';
          put(out, x);
        }
        out += '\n';
      }
    }
  }
  return out;
}

void write_trajectories(const std::string & path, std::span<const Episode> episodes)
{
  write_text(path, trajectories_text(episodes));
}

std::string labels_text(std::span<const Episode> episodes)
{
  std::string out(kLabelHeader);
  out += '\n';
  for (const auto & ep : episodes) {
    out += std::to_string(ep.id);
    out += ep.label.danger ? ",1," : ",0,";
    put(out, ep.label.contact_time.value_or(std::nan("")));
    out += ',';
    out += family_name(ep.family);
    out += '\n';
  }
  return out;
}

void write_labels(const std::string & path, std::span<const Episode> episodes)
{
  write_text(path, labels_text(episodes));
}

std::vector<Episode> read_episodes(const std::string & trajectories_path, const std::string & labels_path)
{
  const auto labels = read_lines(labels_path);
  if (labels.empty() || labels.front() != kLabelHeader) {
    throw DataError(labels_path + ": missing or wrong header");
  }
  std::vector<Episode> episodes;
  std::map<int, std::size_t> index;
  for (std::size_t l = 1; l < labels.size(); ++l) {
    const std::string where = labels_path + ":" + std::to_string(l + 1);
    const auto cols = split_csv(labels[l]);
    if (cols.size() != 4) {
      throw DataError(where + ": expected 4 fields");
    }
    Episode ep;
    ep.id = static_cast<int>(parse_int(cols[0], where));
    ep.label.danger = parse_int(cols[1], where) != 0;
    const double ct = parse_double(cols[2], where);
    if (!std::isnan(ct)) {
      ep.label.contact_time = ct;
    }
    try {
      ep.family = parse_family(cols[3]);
    } catch (const std::invalid_argument & e) {
      throw DataError(where + ": " + e.what());
    }
    if (index.count(ep.id) != 0) {
      throw DataError(where + ": duplicate episode id");
    }
    index[ep.id] = episodes.size();
    episodes.push_back(std::move(ep));
  }

  const auto lines = read_lines(trajectories_path);
  if (lines.empty() || lines.front() != kTrajectoryHeader) {
    throw DataError(trajectories_path + ": missing or wrong header");
  }
  for (std::size_t l = 1; l < lines.size(); ++l) {
    const std::string where = trajectories_path + ":" + std::to_string(l + 1);
    const auto cols = split_csv(lines[l]);
    if (cols.size() != 11) {
      throw DataError(where + ": expected 11 fields");
    }
    const int id = static_cast<int>(parse_int(cols[0], where));
    auto it = index.find(id);
    if (it == index.end()) {
      throw DataError(where + ": episode " + std::to_string(id) + " has no label");
    }
    Episode & ep = episodes[it->second];
    const double t = parse_double(cols[1], where);
    if (ep.frames.empty() || ep.frames.back().timestamp != t) {
      if (!ep.frames.empty() && t < ep.frames.back().timestamp) {
        throw DataError(where + ": timestamps must be non-decreasing");
      }
      ep.frames.push_back({});
      ep.frames.back().timestamp = t;
    }
    VehicleObservation v;
    double * fields[] = {&v.x, &v.y, &v.vx, &v.vy, &v.ax, &v.ay, &v.length, &v.width};
    for (std::size_t c = 0; c < 8; ++c) *fields[c] = parse_double(cols[3 + c], where);
    ep.frames.back().ids.push_back(static_cast<int>(parse_int(cols[2], where)));
    ep.frames.back().vehicles.push_back(v);
  }
  for (auto & ep : episodes) {
    if (ep.frames.empty()) {
      throw DataError(labels_path + ": episode " + std::to_string(ep.id) + " has no frames");
    }
    if (ep.frames.size() >= 2) {
      ep.dt = ep.frames[1].timestamp - ep.frames[0].timestamp;
    }
    for (const auto & f : ep.frames) {
      f.validate();
      if (f.ids != ep.frames.front().ids) {
        throw DataError("episode " + std::to_string(ep.id) + ": roster changes between frames");
      }
    }
    if (ep.label.contact_time && *ep.label.contact_time > ep.frames.back().timestamp + 1e-9) {
      throw DataError("episode " + std::to_string(ep.id) + ": contact time after the last frame");
    }
  }
  return episodes;
}

}  // namespace fcw
