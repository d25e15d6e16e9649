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

#include "fcw/drta.hpp"
#include "fcw/error.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

namespace
{

constexpr double kInf = std::numeric_limits<double>::infinity();

fcw::RiskInputs inputs(double d_min, double ttc, double sigma = 0.0)
{
  fcw::RiskInputs in;
  in.d_min = d_min;
  in.ttc = ttc;
  in.sigma_pred = sigma;
  return in;
}

/// Straight-line predictions: vehicle v at p0 + k * step for k = 1..steps.
fcw::PredictionBatch linear_prediction(
  const std::vector<fcw::Vec2> & p0, const std::vector<fcw::Vec2> & step, std::size_t steps, double half_width)
{
  fcw::PredictionBatch b{fcw::TrajectorySet(p0.size(), steps), {}, {}, true};
  for (std::size_t v = 0; v < p0.size(); ++v)
    for (std::size_t k = 0; k < steps; ++k) {
      b.point.x(v, k) = p0[v].x + static_cast<double>(k + 1) * step[v].x;
      b.point.y(v, k) = p0[v].y + static_cast<double>(k + 1) * step[v].y;
    }
  b.lower = b.point;
  b.upper = b.point;
  for (double & x : b.lower.values()) x -= half_width;
  for (double & x : b.upper.values()) x += half_width;
  return b;
}

fcw::SceneFrame frame_of(const std::vector<fcw::Vec2> & p, const std::vector<fcw::Vec2> & vel)
{
  fcw::SceneFrame f;
  for (std::size_t i = 0; i < p.size(); ++i) {
    fcw::VehicleObservation v;
    v.x = p[i].x;
    v.y = p[i].y;
    v.vx = vel[i].x;
    v.vy = vel[i].y;
    f.vehicles.push_back(v);
    f.ids.push_back(static_cast<int>(i));
  }
  return f;
}

std::vector<double> random_stream(std::mt19937_64 & rng, std::size_t n)
{
  std::normal_distribution<double> g(1.0, 0.2);
  std::bernoulli_distribution spike(0.05);
  std::vector<double> s(n);
  for (double & x : s) x = std::abs(g(rng)) + (spike(rng) ? 2.0 : 0.0);
  return s;
}

}  // namespace

TEST_SUITE("drta")
{
TEST_CASE("weights validation and mode presets")
{
  fcw::RiskWeights w;
  CHECK_NOTHROW(w.validate());
  CHECK(w.w1 + w.w2 + w.w3 == doctest::Approx(1.0));
  w.w1 = 0.6;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w = {};
  w.lambda = 3.5;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w = {};
  w.tau = 0.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  CHECK(fcw::mode_lambda(fcw::DrivingMode::kHighway) == 2.6);
  CHECK(fcw::mode_lambda(fcw::DrivingMode::kUrban) == 2.0);
  CHECK(fcw::mode_lambda(fcw::DrivingMode::kDefault) == 2.2);
  CHECK(fcw::parse_mode("urban") == fcw::DrivingMode::kUrban);
  CHECK_THROWS_AS(fcw::parse_mode("rally"), std::invalid_argument);
  CHECK_THROWS_AS(inputs(-1.0, 1.0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(inputs(1.0, std::nan("")).validate(), std::invalid_argument);
}

TEST_CASE("prediction term examples")
{
  const fcw::RiskWeights w;
  CHECK(fcw::risk_pred(inputs(10.0, w.tau), w) == doctest::Approx(std::exp(-1.0) / 10.0).epsilon(1e-14));
  CHECK(fcw::risk_pred(inputs(10.0, w.tau), w) == doctest::Approx(0.0368).epsilon(1e-3));
  CHECK(fcw::risk_pred(inputs(0.5, kInf), w) == 0.0);
  CHECK(fcw::risk_pred(inputs(3.0, 0.7, 1.0), w) == doctest::Approx(2.0 * fcw::risk_pred(inputs(3.0, 0.7), w)));
  // The distance floor keeps contact finite.
  CHECK(fcw::risk_pred(inputs(0.0, 0.0), w) == doctest::Approx(1.0 / w.d_min_floor));
}

TEST_CASE("kinematic and geometric term examples")
{
  fcw::RiskWeights w;
  fcw::RiskInputs in;
  in.v_rel = w.v_safe;
  CHECK(fcw::risk_kin(in, w) == 1.0);
  in.v_rel = 0.0;
  in.a_rel = w.a_max;
  CHECK(fcw::risk_kin(in, w) == 1.0);
  w.v_safe = 20.0;
  in.v_rel = 10.0;
  in.a_rel = 2.0;
  CHECK(fcw::risk_kin(in, w) == doctest::Approx(0.75));
  in.v_rel = -100.0;
  CHECK(fcw::risk_kin(in, w) == w.kin_floor);

  fcw::RiskInputs g;
  g.v_ego = 20.0;
  CHECK(fcw::risk_geo(g, w) == 1.0);
  g.kappa = 0.01;
  CHECK(fcw::risk_geo(g, w) == doctest::Approx(1.1));
  const double pos = fcw::risk_geo(g, w);
  g.kappa = -0.01;
  CHECK(fcw::risk_geo(g, w) == pos);
}

TEST_CASE("total risk examples")
{
  fcw::RiskWeights w;
  w.v_safe = 20.0;
  fcw::RiskInputs in = inputs(10.0, w.tau);
  in.v_rel = 10.0;
  in.a_rel = 2.0;
  in.kappa = 0.01;
  in.v_ego = 20.0;
  const auto t = fcw::risk_terms(in, w);
  CHECK(t.total == doctest::Approx(0.5 * std::exp(-1.0) / 10.0 + 0.3 * 0.75 + 0.2 * 1.1).epsilon(1e-14));
  CHECK(t.total == doctest::Approx(0.4634).epsilon(1e-3));

  fcw::RiskWeights only_pred = w;
  only_pred.w1 = 1.0;
  only_pred.w2 = only_pred.w3 = 0.0;
  CHECK(fcw::risk_total(in, only_pred) == fcw::risk_pred(in, only_pred));

  // Equal terms give that value under any normalised weights.
  fcw::RiskWeights eq;
  eq.v_safe = 1.0;
  eq.gamma = 0.0;
  fcw::RiskInputs c;  // geo = 1
  c.v_rel = 1.0;      // kin = 1
  c.d_min = 1.0;
  c.ttc = 0.0;        // pred = 1
  std::mt19937_64 rng(70);
  std::uniform_real_distribution<double> u;
  for (int i = 0; i < 20; ++i) {
    const double a = u(rng), b = u(rng) * (1.0 - a);
    eq.w1 = a;
    eq.w2 = b;
    eq.w3 = 1.0 - a - b;
    CHECK(fcw::risk_total(c, eq) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("risk terms are monotone in their inputs")
{
  const fcw::RiskWeights w;
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0.01, 30.0);
  for (int i = 0; i < 500; ++i) {
    const double d = u(rng) + w.d_min_floor, t = u(rng) / 10.0, s = u(rng) / 10.0;
    CHECK(fcw::risk_pred(inputs(d + 0.5, t, s), w) < fcw::risk_pred(inputs(d, t, s), w));
    CHECK(fcw::risk_pred(inputs(d, t + 0.1, s), w) < fcw::risk_pred(inputs(d, t, s), w));
    fcw::RiskInputs a, b;
    a.kappa = u(rng) / 1000.0;
    a.v_ego = u(rng);
    b = a;
    b.kappa = -(a.kappa + 0.001);
    CHECK(fcw::risk_geo(b, w) >= fcw::risk_geo(a, w));
    b = a;
    b.v_ego += 1.0;
    CHECK(fcw::risk_geo(b, w) >= fcw::risk_geo(a, w));
    a.v_rel = u(rng) - 10.0;
    b = a;
    b.v_rel += 0.5;
    CHECK(fcw::risk_kin(b, w) > fcw::risk_kin(a, w));
  }
}

TEST_CASE("window statistics and threshold examples")
{
  fcw::SlidingWindow win(3);
  for (double v : {1.0, 2.0, 3.0}) win.push(v);
  auto s = fcw::window_stats(win);
  CHECK(s.mean == 2.0);
  CHECK(s.stddev == 1.0);
  win.push(4.0);
  CHECK(win.size() == 3);
  CHECK(win.values().front() == 2.0);
  CHECK(fcw::window_stats(win).mean == 3.0);

  fcw::SlidingWindow one(5);
  one.push(7.5);
  s = fcw::window_stats(one);
  CHECK(s.mean == 7.5);
  CHECK(s.stddev == 0.0);

  fcw::SlidingWindow flat(50);
  for (int i = 0; i < 80; ++i) flat.push(0.3);
  CHECK(fcw::window_stats(flat).stddev == 0.0);
  CHECK(fcw::window_stats(flat).mean == doctest::Approx(0.3).epsilon(1e-15));

  CHECK(fcw::dynamic_threshold(2.0, 1.0, 2.0) == 4.0);
  CHECK(fcw::dynamic_threshold(2.0, 0.0, 2.7) == 2.0);
  CHECK_THROWS_AS(fcw::SlidingWindow(0), std::invalid_argument);
}

TEST_CASE("decision examples")
{
  fcw::RiskTerms t;
  t.total = 5.0;
  CHECK(fcw::decide(t, 4.0).triggered);
  t.total = 4.0;
  CHECK_FALSE(fcw::decide(t, 4.0).triggered);

  const fcw::RiskWeights w;
  std::mt19937_64 rng(75);
  std::uniform_real_distribution<double> c(0.0, 5.0);
  for (int i = 0; i < 200; ++i) CHECK(fcw::replay(std::vector<double>(120, c(rng)), w) == std::vector<bool>(120, false));

  fcw::RiskTrack early(w);
  for (std::size_t i = 0; i < w.warmup; ++i) {
    const auto e = early.step_value(i == 0 ? 1.0 : 100.0 * static_cast<double>(i));
    CHECK_FALSE(e.triggered);
    CHECK(std::isinf(e.threshold));
  }

  std::vector<double> spike(50, 0.4);
  spike.push_back(10.4);
  const auto d = fcw::replay(spike, w);
  CHECK(d.back());
  CHECK(std::count(d.begin(), d.end(), true) == 1);

  // A slow ramp stays inside mean + lambda * sigma of its own recent past.
  std::vector<double> ramp;
  for (int i = 0; i < 300; ++i) ramp.push_back(1.0 + 0.001 * i);
  const auto r = fcw::replay(ramp, w);
  CHECK(std::count(r.begin(), r.end(), true) == 0);
}

TEST_CASE("threshold is read before the current value is pushed")
{
  fcw::RiskWeights w;
  w.window = 5;
  fcw::RiskTrack track(w);
  for (double v : {1.0, 2.0, 1.0, 2.0, 1.0}) track.step_value(v);
  const auto e = track.step_value(3.0);
  fcw::SlidingWindow ref(5);
  for (double v : {1.0, 2.0, 1.0, 2.0, 1.0}) ref.push(v);
  const auto s = fcw::window_stats(ref);
  CHECK(e.mean == s.mean);
  CHECK(e.stddev == s.stddev);
  CHECK(e.threshold == fcw::dynamic_threshold(s.mean, s.stddev, w.lambda));
  CHECK(e.triggered == (3.0 > e.threshold));
  CHECK(track.window().values().back() == 3.0);
  CHECK(e.tick == 5);

  fcw::RiskTrack fixed(w, 0.5);
  CHECK(fixed.step_value(0.6).triggered);
  CHECK_FALSE(fixed.step_value(0.5).triggered);
}

TEST_CASE("decisions are invariant under positive rescaling of the stream")
{
  std::mt19937_64 rng(72);
  const fcw::RiskWeights w;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_stream(rng, 200);
    const auto base = fcw::replay(s, w);
    for (double k : {0.25, 4.0, 3.7, 1e-3}) {
      auto scaled = s;
      for (double & x : scaled) x *= k;
      CHECK(fcw::replay(scaled, w) == base);
    }
  }
}

TEST_CASE("raising lambda only removes warnings")
{
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_stream(rng, 200);
    fcw::RiskWeights lo, hi;
    lo.lambda = 1.5 + 0.5 * (trial % 3);
    hi.lambda = lo.lambda + 0.4;
    const auto a = fcw::replay(s, lo);
    const auto b = fcw::replay(s, hi);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK((!b[i] || a[i]));
  }
}

TEST_CASE("risk input extraction examples")
{
  const fcw::RiskWeights w;
  const std::vector<std::size_t> threat{1};
  // Parallel lanes 20 m apart.
  {
    const std::vector<fcw::Vec2> p{{0, 0}, {0, 20}}, v{{2, 0}, {2, 0}};
    const auto pred = linear_prediction(p, v, 12, 0.0);
    const std::vector<fcw::SceneFrame> hist{frame_of(p, {{20, 0}, {20, 0}})};
    const auto in = fcw::extract_risk_inputs(pred, 0, threat, hist, 0.0, 0.1, w);
    CHECK(std::isinf(in.ttc));
    CHECK(in.d_min == doctest::Approx(20.0));
    CHECK(in.v_rel == doctest::Approx(0.0));
  }
  // Head-on: 22 m apart, closing 2 m per step each way; within 4 m at step 5.
  {
    const std::vector<fcw::Vec2> p{{0, 0}, {22, 0}}, v{{2, 0}, {-2, 0}};
    const auto pred = linear_prediction(p, v, 12, 0.5);
    const std::vector<fcw::SceneFrame> hist{frame_of(p, {{20, 0}, {-20, 0}})};
    const auto in = fcw::extract_risk_inputs(pred, 0, threat, hist, 0.0, 0.1, w);
    CHECK(in.ttc == doctest::Approx(0.5));
    CHECK(in.d_min == doctest::Approx(2.0));
    CHECK(in.v_rel == doctest::Approx(40.0));
    CHECK(in.sigma_pred == doctest::Approx(0.5));
    CHECK(in.v_ego == doctest::Approx(20.0));
  }
  // No threats.
  {
    const std::vector<fcw::Vec2> p{{0, 0}}, v{{1, 0}};
    const auto pred = linear_prediction(p, v, 3, 0.0);
    const auto in = fcw::extract_risk_inputs(pred, 0, {}, std::vector<fcw::SceneFrame>{frame_of(p, v)}, 0.0, 0.1, w);
    CHECK(std::isinf(in.d_min));
    CHECK(std::isinf(in.ttc));
    CHECK(fcw::risk_pred(in, w) == 0.0);
  }
}

TEST_CASE("extraction matches an exhaustive rescan")
{
  std::mt19937_64 rng(74);
  std::uniform_real_distribution<double> pos(-30, 30), step(-3, 3);
  const fcw::RiskWeights w;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 5), steps = 8;
    std::vector<fcw::Vec2> p(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = {pos(rng), pos(rng) / 3.0};
      v[i] = {step(rng), step(rng) / 3.0};
    }
    const auto pred = linear_prediction(p, v, steps, 0.2);
    std::vector<std::size_t> threats;
    for (std::size_t j = 1; j < n; ++j) threats.push_back(j);
    const auto in = fcw::extract_risk_inputs(pred, 0, threats, std::vector<fcw::SceneFrame>{frame_of(p, v)}, 0.0, 0.1, w);
    double d_min = kInf, ttc = kInf;
    for (std::size_t k = 0; k < steps; ++k)
      for (std::size_t j = 1; j < n; ++j) {
        const double d = std::hypot(pred.point.x(0, k) - pred.point.x(j, k), pred.point.y(0, k) - pred.point.y(j, k));
        d_min = std::min(d_min, d);
        if (d <= w.collision_radius) ttc = std::min(ttc, 0.1 * static_cast<double>(k + 1));
      }
    CHECK(in.d_min == d_min);
    CHECK(in.ttc == ttc);
  }
}

TEST_CASE("curvature of three points")
{
  // Points on a circle of radius 50, counter-clockwise.
  auto on = [](double a) { return fcw::Vec2{50.0 * std::cos(a), 50.0 * std::sin(a)}; };
  CHECK(fcw::menger_curvature(on(0.0), on(0.2), on(0.4)) == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(fcw::menger_curvature(on(0.4), on(0.2), on(0.0)) == doctest::Approx(-0.02).epsilon(1e-12));
  CHECK(fcw::menger_curvature({0, 0}, {1, 0}, {2, 0}) == 0.0);
  CHECK(fcw::menger_curvature({0, 0}, {0, 0}, {0, 0}) == 0.0);
}

TEST_CASE("event log round trip")
{
  std::vector<fcw::WarningEvent> ev(3);
  for (std::size_t i = 0; i < ev.size(); ++i) {
    ev[i].episode_id = 4;
    ev[i].tick = i;
    ev[i].time = 0.1 * static_cast<double>(i);
    ev[i].track_id = 2;
    ev[i].terms = {0.1 / 3.0, 0.75, 1.1, 0.4634};
    ev[i].mean = 1e-17;
    ev[i].threshold = i == 0 ? kInf : 0.5;
    ev[i].triggered = i == 2;
  }
  const auto path = (std::filesystem::temp_directory_path() / "fcw_events.csv").string();
  fcw::write_event_log(path, ev);
  const auto back = fcw::read_event_log(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].tick == ev[i].tick);
    CHECK(back[i].time == ev[i].time);
    CHECK(back[i].terms.total == ev[i].terms.total);
    CHECK(back[i].terms.geo == ev[i].terms.geo);
    CHECK(back[i].mean == ev[i].mean);
    CHECK(back[i].threshold == ev[i].threshold);
    CHECK(back[i].triggered == ev[i].triggered);
  }
  std::filesystem::remove(path);
}
}
