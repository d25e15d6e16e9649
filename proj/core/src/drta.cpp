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
#include "text_io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fcw
{

double mode_lambda(DrivingMode mode)
{
  switch (mode) {
    case DrivingMode::kHighway: return 2.6;
    case DrivingMode::kUrban: return 2.0;
    case DrivingMode::kDefault: break;
  }
  return 2.2;
}

std::string_view mode_name(DrivingMode mode)
{
  switch (mode) {
    case DrivingMode::kHighway: return "highway";
    case DrivingMode::kUrban: return "urban";
    case DrivingMode::kDefault: break;
  }
  return "default";
}

DrivingMode parse_mode(std::string_view name)
{
  if (name == "highway") return DrivingMode::kHighway;
  if (name == "urban") return DrivingMode::kUrban;
  if (name == "default") return DrivingMode::kDefault;
  throw std::invalid_argument("unknown driving mode '" + std::string(name) + "'");
}

void RiskWeights::validate() const
{
  if (w1 < 0.0 || w2 < 0.0 || w3 < 0.0 || std::abs(w1 + w2 + w3 - 1.0) > 1e-9) {
    throw std::invalid_argument("risk weights must be non-negative and sum to 1");
  }
  if (!(tau > 0.0) || !(v_safe > 0.0) || !(a_max > 0.0)) {
    throw std::invalid_argument("tau, v_safe and a_max must be positive");
  }
  if (!(lambda >= 1.5 && lambda <= 3.0)) {
    throw std::invalid_argument("lambda must lie in [1.5, 3.0]");
  }
  if (!(d_min_floor > 0.0) || !(collision_radius > 0.0) || !std::isfinite(gamma) || !std::isfinite(beta)) {
    throw std::invalid_argument("d_min_floor and collision_radius must be positive");
  }
  if (warmup < 2 || window < warmup) {
    throw std::invalid_argument("need 2 <= warmup <= window");
  }
}

void RiskInputs::validate() const
{
  if (std::isnan(d_min) || std::isnan(ttc) || std::isnan(sigma_pred) || std::isnan(v_rel) ||
      std::isnan(a_rel) || std::isnan(kappa) || std::isnan(v_ego)) {
    throw std::invalid_argument("risk inputs contain NaN");
  }
  if (d_min < 0.0 || sigma_pred < 0.0 || v_ego < 0.0 || ttc < 0.0) {
    throw std::invalid_argument("d_min, ttc, sigma_pred and v_ego must be non-negative");
  }
}

double risk_pred(const RiskInputs & in, const RiskWeights & w)
{
  if (std::isinf(in.ttc) || std::isinf(in.d_min)) {
    return 0.0;
  }
  const double d = std::max(in.d_min, w.d_min_floor);
  return std::exp(-in.ttc / w.tau) * (1.0 + in.sigma_pred) / d;
}

double risk_kin(const RiskInputs & in, const RiskWeights & w)
{
  return std::max(w.kin_floor, in.v_rel / w.v_safe + w.gamma * in.a_rel / w.a_max);
}

double risk_geo(const RiskInputs & in, const RiskWeights & w)
{
  return 1.0 + w.beta * std::abs(in.kappa) * in.v_ego;
}

RiskTerms risk_terms(const RiskInputs & in, const RiskWeights & w)
{
  RiskTerms t;
  t.pred = risk_pred(in, w);
  t.kin = risk_kin(in, w);
  t.geo = risk_geo(in, w);
  t.total = w.w1 * t.pred + w.w2 * t.kin + w.w3 * t.geo;
  return t;
}

double risk_total(const RiskInputs & in, const RiskWeights & w)
{
  return risk_terms(in, w).total;
}

SlidingWindow::SlidingWindow(std::size_t capacity) : capacity_(capacity)
{
  if (capacity == 0) {
    throw std::invalid_argument("sliding window capacity must be positive");
  }
}

void SlidingWindow::push(double value)
{
  if (values_.size() == capacity_) {
    values_.pop_front();
  }
  values_.push_back(value);
}

WindowStats window_stats(const SlidingWindow & window)
{
  WindowStats s;
  const auto & v = window.values();
  if (v.empty()) {
    return s;
  }
  // Shifted by the oldest value so a constant window is exactly (c, 0).
  const double shift = v.front();
  double sum = 0.0;
  for (double x : v) {
    sum += x - shift;
  }
  const double n = static_cast<double>(v.size());
  const double offset = sum / n;
  s.mean = shift + offset;
  if (v.size() < 2) {
    return s;
  }
  double ss = 0.0;
  for (double x : v) {
    ss += (x - shift - offset) * (x - shift - offset);
  }
  s.stddev = std::sqrt(ss / (n - 1.0));
  return s;
}

double dynamic_threshold(double mean, double stddev, double lambda)
{
  return mean + lambda * stddev;
}

WarningEvent decide(const RiskTerms & terms, double threshold)
{
  WarningEvent e;
  e.terms = terms;
  e.threshold = threshold;
  e.triggered = terms.total > threshold;
  return e;
}

RiskTrack::RiskTrack(const RiskWeights & weights, std::optional<double> fixed_threshold)
: weights_(weights), fixed_threshold_(fixed_threshold), window_(weights.window)
{
  weights_.validate();
}

WarningEvent RiskTrack::step(const RiskInputs & inputs)
{
  return advance(risk_terms(inputs, weights_));
}

WarningEvent RiskTrack::step_value(double risk)
{
  RiskTerms t;
  t.total = risk;
  return advance(t);
}

WarningEvent RiskTrack::advance(const RiskTerms & terms)
{
  const WindowStats stats = window_stats(window_);
  double threshold = kInfinity;
  if (fixed_threshold_) {
    threshold = *fixed_threshold_;
  } else if (window_.size() >= weights_.warmup) {
    threshold = dynamic_threshold(stats.mean, stats.stddev, weights_.lambda);
  }
  WarningEvent e = decide(terms, threshold);
  e.tick = ticks_++;
  e.mean = stats.mean;
  e.stddev = stats.stddev;
  window_.push(terms.total);
  return e;
}

std::vector<bool> replay(std::span<const double> stream, const RiskWeights & weights)
{
  RiskTrack track(weights);
  std::vector<bool> out;
  out.reserve(stream.size());
  for (double r : stream) {
    out.push_back(track.step_value(r).triggered);
  }
  return out;
}

double menger_curvature(Vec2 a, Vec2 b, Vec2 c)
{
  const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  const double ab = std::hypot(b.x - a.x, b.y - a.y);
  const double bc = std::hypot(c.x - b.x, c.y - b.y);
  const double ca = std::hypot(a.x - c.x, a.y - c.y);
  const double denom = ab * bc * ca;
  // Below ~1 cm of travel the noise dominates; treat as straight.
  if (denom < 1e-6 || std::min({ab, bc, ca}) < 1e-2) {
    return 0.0;
  }
  return 2.0 * cross / denom;
}

namespace
{

double mean_width(const PredictionBatch & p, std::size_t v)
{
  const std::size_t steps = p.lower.steps();
  if (steps == 0) {
    return 0.0;
  }
  double w = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t c = 0; c < 2; ++c) {
      w += std::max(0.0, p.upper.coord(v, k, c) - p.lower.coord(v, k, c));
    }
  }
  return w / static_cast<double>(2 * steps);
}

}  // namespace

RiskInputs extract_risk_inputs(
  const PredictionBatch & pred, std::size_t ego, std::span<const std::size_t> threats,
  std::span<const SceneFrame> history, std::optional<double> curvature, double dt,
  const RiskWeights & weights)
{
  const std::size_t n = pred.point.vehicles();
  const std::size_t steps = pred.point.steps();
  if (ego >= n) {
    throw DimensionError("extract_risk_inputs: ego index " + std::to_string(ego) + " >= " + std::to_string(n));
  }
  if (history.empty() || history.back().size() != n) {
    throw DimensionError("extract_risk_inputs: history roster differs from the prediction");
  }
  const SceneFrame & now = history.back();
  const VehicleObservation & me = now.vehicles[ego];

  RiskInputs in;
  in.v_ego = std::hypot(me.vx, me.vy);
  if (curvature) {
    in.kappa = *curvature;
  } else if (history.size() >= 3) {
    in.kappa = menger_curvature(
      history.front().vehicles[ego].position(), history[history.size() / 2].vehicles[ego].position(),
      me.position());
  }

  std::optional<std::size_t> critical;
  std::size_t contact_step = steps;
  std::optional<std::size_t> closest;
  for (std::size_t j : threats) {
    if (j >= n || j == ego) {
      throw DimensionError("extract_risk_inputs: bad threat index " + std::to_string(j));
    }
    for (std::size_t k = 0; k < steps; ++k) {
      const double d = std::hypot(
        pred.point.x(ego, k) - pred.point.x(j, k), pred.point.y(ego, k) - pred.point.y(j, k));
      if (d < in.d_min) {
        in.d_min = d;
        closest = j;
      }
      if (d <= weights.collision_radius && k < contact_step) {
        contact_step = k;
        critical = j;
      }
    }
  }
  if (contact_step < steps) {
    in.ttc = dt * static_cast<double>(contact_step + 1);
  } else {
    critical = closest;
  }
  if (!critical) {
    in.sigma_pred = 0.5 * mean_width(pred, ego);
    return in;
  }
  in.sigma_pred = 0.25 * (mean_width(pred, ego) + mean_width(pred, *critical));

  const VehicleObservation & other = now.vehicles[*critical];
  const double dx = other.x - me.x;
  const double dy = other.y - me.y;
  const double dist = std::hypot(dx, dy);
  if (dist > 0.0) {
    const double ux = dx / dist;
    const double uy = dy / dist;
    in.v_rel = (me.vx - other.vx) * ux + (me.vy - other.vy) * uy;
    in.a_rel = (me.ax - other.ax) * ux + (me.ay - other.ay) * uy;
  }
  return in;
}

void write_event_row(std::ostream & out, const WarningEvent & e)
{
  std::string line;
  line += std::to_string(e.episode_id);
  line += ',';
  line += std::to_string(e.tick);
  line += ',';
  text::put(line, e.time);
  line += ',';
  line += std::to_string(e.track_id);
  for (double v : {e.terms.total, e.terms.pred, e.terms.kin, e.terms.geo, e.mean, e.stddev, e.threshold}) {
    line += ',';
    text::put(line, v);
  }
  line += e.triggered ? ",1\n" : ",0\n";
  out << line;
}

void write_event_log(const std::string & path, std::span<const WarningEvent> events)
{
  std::string body(kEventLogHeader);
  body += '\n';
  std::ostringstream rows;
  for (const auto & e : events) {
    write_event_row(rows, e);
  }
  body += rows.str();
  text::write_text(path, body);
}

std::vector<WarningEvent> read_event_log(const std::string & path)
{
  const auto lines = text::read_lines(path);
  if (lines.empty() || lines.front() != kEventLogHeader) {
    throw DataError(path + ": missing event log header");
  }
  std::vector<WarningEvent> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = path + ":" + std::to_string(i + 1);
    const auto f = text::split_csv(lines[i]);
    if (f.size() != 12) {
      throw DataError(where + ": expected 12 fields");
    }
    WarningEvent e;
    e.episode_id = static_cast<int>(text::parse_int(f[0], where));
    e.tick = static_cast<std::size_t>(text::parse_int(f[1], where));
    e.time = text::parse_double(f[2], where);
    e.track_id = static_cast<int>(text::parse_int(f[3], where));
    e.terms.total = text::parse_double(f[4], where);
    e.terms.pred = text::parse_double(f[5], where);
    e.terms.kin = text::parse_double(f[6], where);
    e.terms.geo = text::parse_double(f[7], where);
    e.mean = text::parse_double(f[8], where);
    e.stddev = text::parse_double(f[9], where);
    e.threshold = text::parse_double(f[10], where);
    e.triggered = text::parse_int(f[11], where) != 0;
    out.push_back(e);
  }
  return out;
}

}  // namespace fcw
