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

#include "fcw/cqr.hpp"

#include "fcw/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fcw
{

void CalibrationSet::add(double l, double u, double y)
{
  lower.push_back(l);
  upper.push_back(u);
  target.push_back(y);
}

double nonconformity(double lower, double upper, double y)
{
  return std::max(lower - y, y - upper);
}

double conformal_quantile(std::span<const double> scores, double alpha)
{
  if (scores.empty()) {
    throw DataError("conformal_quantile: empty calibration set");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("conformal_quantile: alpha must lie in (0, 1)");
  }
  const std::size_t n = scores.size();
  // (1 - alpha)(1 + 1/n) * n, with a small guard so 2.0000000001 stays 2.
  const double rank = (1.0 - alpha) * static_cast<double>(n + 1);
  const auto k = static_cast<std::size_t>(std::ceil(rank - 1e-9));
  std::vector<double> sorted(scores.begin(), scores.end());
  if (k >= n) {
    return *std::max_element(sorted.begin(), sorted.end());
  }
  const std::size_t idx = k == 0 ? 0 : k - 1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx), sorted.end());
  return sorted[idx];
}

namespace
{

std::vector<double> scores_of(const CalibrationSet & cal)
{
  if (cal.lower.size() != cal.target.size() || cal.upper.size() != cal.target.size()) {
    throw DimensionError("calibrate: lower/upper/target lengths differ");
  }
  std::vector<double> s(cal.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(cal.lower[i]) || !std::isfinite(cal.upper[i]) || !std::isfinite(cal.target[i])) {
      throw DataError("calibrate: non-finite calibration value");
    }
    s[i] = nonconformity(cal.lower[i], cal.upper[i], cal.target[i]);
  }
  return s;
}

}  // namespace

ConformalCorrection calibrate(const CalibrationSet & cal, double alpha)
{
  return calibrate(std::span(&cal, 1), alpha);
}

ConformalCorrection calibrate(std::span<const CalibrationSet> dims, double alpha)
{
  if (dims.empty()) {
    throw DataError("calibrate: no calibration dimensions");
  }
  ConformalCorrection out;
  out.alpha = alpha;
  out.calibration_size = dims.front().size();
  for (const auto & d : dims) {
    out.q_hat.push_back(conformal_quantile(scores_of(d), alpha));
  }
  return out;
}

std::pair<double, double> conformal_interval(double lower, double upper, double q_hat)
{
  const double l = lower - q_hat;
  const double u = upper + q_hat;
  if (l > u) {
    const double mid = 0.5 * (lower + upper);
    return {mid, mid};
  }
  return {l, u};
}

CoverageStats empirical_coverage(
  std::span<const double> lower, std::span<const double> upper, std::span<const double> target)
{
  if (lower.size() != target.size() || upper.size() != target.size()) {
    throw DimensionError(
      "empirical_coverage: " + std::to_string(lower.size()) + " lower, " +
      std::to_string(upper.size()) + " upper, " + std::to_string(target.size()) + " targets");
  }
  CoverageStats s;
  s.count = target.size();
  if (s.count == 0) {
    return s;
  }
  std::size_t hit = 0;
  double width = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (lower[i] <= target[i] && target[i] <= upper[i]) {
      ++hit;
    }
    width += upper[i] - lower[i];
  }
  s.coverage = static_cast<double>(hit) / static_cast<double>(s.count);
  s.mean_width = width / static_cast<double>(s.count);
  return s;
}

namespace
{

void check_pair(const PredictionBatch & p, const TrajectorySet & t)
{
  const std::size_t n = t.values().size();
  if (p.point.values().size() != n || p.lower.values().size() != n || p.upper.values().size() != n ||
      p.lower.steps() != t.steps()) {
    throw DimensionError("cqr: prediction and truth shapes differ");
  }
}

}  // namespace

std::vector<CalibrationSet> trajectory_calibration_sets(
  std::span<const PredictionBatch> predictions, std::span<const TrajectorySet> truths)
{
  if (predictions.size() != truths.size()) {
    throw DimensionError("trajectory_calibration_sets: prediction/truth counts differ");
  }
  if (predictions.empty()) {
    throw DataError("trajectory_calibration_sets: empty calibration split");
  }
  const std::size_t steps = truths.front().steps();
  std::vector<CalibrationSet> dims(steps * 2);
  for (std::size_t w = 0; w < predictions.size(); ++w) {
    check_pair(predictions[w], truths[w]);
    if (truths[w].steps() != steps) {
      throw DimensionError("trajectory_calibration_sets: horizon differs between windows");
    }
    for (std::size_t v = 0; v < truths[w].vehicles(); ++v) {
      for (std::size_t k = 0; k < steps; ++k) {
        for (std::size_t c = 0; c < 2; ++c) {
          dims[2 * k + c].add(
            predictions[w].lower.coord(v, k, c), predictions[w].upper.coord(v, k, c), truths[w].coord(v, k, c));
        }
      }
    }
  }
  return dims;
}

PredictionBatch apply_correction(const PredictionBatch & raw, const ConformalCorrection & correction)
{
  const std::size_t steps = raw.lower.steps();
  if (correction.q_hat.size() != steps * 2) {
    throw DimensionError(
      "apply_correction: correction has " + std::to_string(correction.q_hat.size()) +
      " dimensions for a horizon of " + std::to_string(steps));
  }
  PredictionBatch out = raw;
  for (std::size_t v = 0; v < raw.lower.vehicles(); ++v) {
    for (std::size_t k = 0; k < steps; ++k) {
      for (std::size_t c = 0; c < 2; ++c) {
        const auto [l, u] =
          conformal_interval(raw.lower.coord(v, k, c), raw.upper.coord(v, k, c), correction.q_hat[2 * k + c]);
        out.lower.coord(v, k, c) = l;
        out.upper.coord(v, k, c) = u;
      }
    }
  }
  out.calibrated = true;
  return out;
}

TrajectoryCoverage trajectory_coverage(
  std::span<const PredictionBatch> predictions, std::span<const TrajectorySet> truths)
{
  if (predictions.size() != truths.size()) {
    throw DimensionError("trajectory_coverage: prediction/truth counts differ");
  }
  TrajectoryCoverage out;
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<double> y;
  std::vector<std::size_t> per_step_count;
  for (std::size_t w = 0; w < predictions.size(); ++w) {
    check_pair(predictions[w], truths[w]);
    const std::size_t steps = truths[w].steps();
    if (out.width_per_step.size() < steps) {
      out.width_per_step.resize(steps, 0.0);
      per_step_count.resize(steps, 0);
    }
    const auto l = predictions[w].lower.values();
    const auto u = predictions[w].upper.values();
    const auto t = truths[w].values();
    lo.insert(lo.end(), l.begin(), l.end());
    hi.insert(hi.end(), u.begin(), u.end());
    y.insert(y.end(), t.begin(), t.end());
    for (std::size_t v = 0; v < truths[w].vehicles(); ++v) {
      for (std::size_t k = 0; k < steps; ++k) {
        for (std::size_t c = 0; c < 2; ++c) {
          out.width_per_step[k] += predictions[w].upper.coord(v, k, c) - predictions[w].lower.coord(v, k, c);
          ++per_step_count[k];
        }
      }
    }
  }
  out.overall = empirical_coverage(lo, hi, y);
  for (std::size_t k = 0; k < out.width_per_step.size(); ++k) {
    if (per_step_count[k] > 0) {
      out.width_per_step[k] /= static_cast<double>(per_step_count[k]);
    }
  }
  return out;
}

std::string correction_to_json(const ConformalCorrection & c)
{
  nlohmann::json j{
    {"alpha", c.alpha},
    {"q_hat", c.q_hat},
    {"calibration_size", c.calibration_size},
    {"fingerprint", c.fingerprint},
  };
  return j.dump(2);
}

ConformalCorrection correction_from_json(const std::string & text)
{
  try {
    const auto j = nlohmann::json::parse(text);
    ConformalCorrection c;
    c.alpha = j.at("alpha").get<double>();
    c.q_hat = j.at("q_hat").get<std::vector<double>>();
    c.calibration_size = j.at("calibration_size").get<std::size_t>();
    c.fingerprint = j.value("fingerprint", std::string());
    return c;
  } catch (const nlohmann::json::exception & e) {
    throw DataError(std::string("calibration artifact: ") + e.what());
  }
}

void write_correction(const std::string & path, const ConformalCorrection & correction)
{
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw IoError("cannot open '" + path + "' for writing");
  }
  f << correction_to_json(correction) << '\n';
  if (!f) {
    throw IoError("write failed for '" + path + "'");
  }
}

ConformalCorrection read_correction(const std::string & path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw IoError("cannot open '" + path + "'");
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return correction_from_json(ss.str());
}

}  // namespace fcw
