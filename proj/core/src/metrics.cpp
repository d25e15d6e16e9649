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

#include "fcw/metrics.hpp"

#include "fcw/error.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fcw
{

void KahanSum::add(double v)
{
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v)) {
    comp_ += (sum_ - t) + v;
  } else {
    comp_ += (v - t) + sum_;
  }
  sum_ = t;
}

namespace
{

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_shapes(const TrajectorySet & pred, const TrajectorySet & truth)
{
  if (pred.vehicles() != truth.vehicles() || pred.steps() != truth.steps()) {
    throw DimensionError(
      "trajectory shapes differ: " + std::to_string(pred.vehicles()) + "x" + std::to_string(pred.steps()) +
      " vs " + std::to_string(truth.vehicles()) + "x" + std::to_string(truth.steps()));
  }
}

double step_error(const TrajectorySet & pred, const TrajectorySet & truth, std::size_t v, std::size_t k)
{
  return std::hypot(pred.x(v, k) - truth.x(v, k), pred.y(v, k) - truth.y(v, k));
}

struct ErrorSums
{
  KahanSum sum;
  std::size_t count = 0;
};

void accumulate(ErrorSums & acc, const TrajectorySet & pred, const TrajectorySet & truth, bool final_only)
{
  check_shapes(pred, truth);
  if (pred.steps() == 0) {
    return;
  }
  for (std::size_t v = 0; v < pred.vehicles(); ++v) {
    const std::size_t first = final_only ? pred.steps() - 1 : 0;
    for (std::size_t k = first; k < pred.steps(); ++k) {
      acc.sum.add(step_error(pred, truth, v, k));
      ++acc.count;
    }
  }
}

double finish(const ErrorSums & acc)
{
  if (acc.count == 0) {
    throw DataError("displacement error over an empty set");
  }
  return acc.sum.value() / static_cast<double>(acc.count);
}

double ratio(std::size_t num, std::size_t den)
{
  return den == 0 ? kNaN : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double ade(const TrajectorySet & pred, const TrajectorySet & truth)
{
  ErrorSums acc;
  accumulate(acc, pred, truth, false);
  return finish(acc);
}

double fde(const TrajectorySet & pred, const TrajectorySet & truth)
{
  ErrorSums acc;
  accumulate(acc, pred, truth, true);
  return finish(acc);
}

double mean_ade(std::span<const TrajectorySet> preds, std::span<const TrajectorySet> truths)
{
  if (preds.size() != truths.size()) {
    throw DimensionError("mean_ade: prediction/truth counts differ");
  }
  ErrorSums acc;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    accumulate(acc, preds[i], truths[i], false);
  }
  return finish(acc);
}

double mean_fde(std::span<const TrajectorySet> preds, std::span<const TrajectorySet> truths)
{
  if (preds.size() != truths.size()) {
    throw DimensionError("mean_fde: prediction/truth counts differ");
  }
  ErrorSums acc;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    accumulate(acc, preds[i], truths[i], true);
  }
  return finish(acc);
}

bool predicts_collision(const TrajectorySet & pred, double threshold)
{
  for (std::size_t k = 0; k < pred.steps(); ++k) {
    for (std::size_t i = 0; i < pred.vehicles(); ++i) {
      for (std::size_t j = i + 1; j < pred.vehicles(); ++j) {
        if (std::hypot(pred.x(i, k) - pred.x(j, k), pred.y(i, k) - pred.y(j, k)) < threshold) {
          return true;
        }
      }
    }
  }
  return false;
}

double collision_rate(std::span<const TrajectorySet> preds, double threshold)
{
  if (!(threshold > 0.0)) {
    throw std::invalid_argument("collision_rate: threshold must be positive");
  }
  if (preds.empty()) {
    return 0.0;
  }
  std::size_t hits = 0;
  for (const auto & p : preds) {
    hits += predicts_collision(p, threshold) ? 1 : 0;
  }
  return ratio(hits, preds.size());
}

ClassificationMetrics rates_from_counts(const ConfusionCounts & c)
{
  ClassificationMetrics m;
  m.counts = c;
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.fpr = ratio(c.fp, c.fp + c.tn);
  m.fnr = ratio(c.fn, c.fn + c.tp);
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

std::map<int, double> first_warnings(std::span<const WarningEvent> events, std::span<const Episode> episodes)
{
  std::map<int, const Episode *> by_id;
  for (const auto & ep : episodes) {
    by_id[ep.id] = &ep;
  }
  std::map<int, double> first;
  for (const auto & e : events) {
    if (!e.triggered) {
      continue;
    }
    const auto it = by_id.find(e.episode_id);
    if (it == by_id.end()) {
      continue;
    }
    const auto & label = it->second->label;
    if (label.danger && label.contact_time && !(e.time < *label.contact_time)) {
      continue;
    }
    auto [slot, inserted] = first.emplace(e.episode_id, e.time);
    if (!inserted && e.time < slot->second) {
      slot->second = e.time;
    }
  }
  return first;
}

ClassificationMetrics classification_metrics(
  std::span<const WarningEvent> events, std::span<const Episode> episodes)
{
  if (episodes.empty()) {
    throw DataError("classification_metrics: no episodes");
  }
  const auto first = first_warnings(events, episodes);
  ConfusionCounts c;
  for (const auto & ep : episodes) {
    const bool warned = first.count(ep.id) > 0;
    if (ep.label.danger) {
      ++(warned ? c.tp : c.fn);
    } else {
      ++(warned ? c.fp : c.tn);
    }
  }
  return rates_from_counts(c);
}

double percentile(std::vector<double> values, double q)
{
  if (values.empty()) {
    throw DataError("percentile of an empty sample");
  }
  if (!(q >= 0.0 && q <= 1.0)) {
    throw std::invalid_argument("percentile: q must lie in [0, 1]");
  }
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<LeadTimeStats> awlt(std::span<const WarningEvent> events, std::span<const Episode> episodes)
{
  const auto first = first_warnings(events, episodes);
  std::vector<double> leads;
  for (const auto & ep : episodes) {
    if (!ep.label.danger || !ep.label.contact_time) {
      continue;
    }
    const auto it = first.find(ep.id);
    if (it != first.end()) {
      leads.push_back(*ep.label.contact_time - it->second);
    }
  }
  if (leads.empty()) {
    return std::nullopt;
  }
  LeadTimeStats s;
  s.count = leads.size();
  KahanSum sum;
  for (double l : leads) {
    sum.add(l);
  }
  s.mean = sum.value() / static_cast<double>(s.count);
  if (s.count > 1) {
    KahanSum ss;
    for (double l : leads) {
      ss.add((l - s.mean) * (l - s.mean));
    }
    s.stddev = std::sqrt(ss.value() / static_cast<double>(s.count - 1));
  }
  s.percentile5 = percentile(leads, 0.05);
  return s;
}

std::vector<std::pair<std::string, double>> EvalReport::entries() const
{
  const auto & c = classification;
  std::vector<std::pair<std::string, double>> out{
    {"episodes", static_cast<double>(episodes)},
    {"windows", static_cast<double>(windows)},
    {"ade_m", ade},
    {"fde_m", fde},
    {"collision_rate", collision_rate},
    {"tp", static_cast<double>(c.counts.tp)},
    {"fp", static_cast<double>(c.counts.fp)},
    {"tn", static_cast<double>(c.counts.tn)},
    {"fn", static_cast<double>(c.counts.fn)},
    {"precision", c.precision},
    {"recall", c.recall},
    {"f1", c.f1},
    {"fpr", c.fpr},
    {"fnr", c.fnr},
    {"awlt_mean_s", lead_time ? lead_time->mean : kNaN},
    {"awlt_std_s", lead_time ? lead_time->stddev : kNaN},
    {"awlt_p5_s", lead_time ? lead_time->percentile5 : kNaN},
    {"coverage", coverage},
    {"mean_width_m", mean_width},
    {"latency_p50_ms", latency_p50_ms},
    {"latency_p90_ms", latency_p90_ms},
    {"latency_p99_ms", latency_p99_ms},
  };
  return out;
}

namespace
{

std::string number(double v)
{
  std::string s;
  text::put(s, v);
  return s;
}

std::string fixed(double v, int digits)
{
  if (std::isnan(v)) {
    return "n/a";
  }
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string pad(const std::string & s, std::size_t width)
{
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string format_report(const EvalReport & report)
{
  const auto rows = report.entries();
  std::string out = "# evaluation report";
  if (!report.label.empty()) {
    out += ": " + report.label;
  }
  out += "\n[metrics]\n";
  for (const auto & [k, v] : rows) {
    out += k + " = " + number(v) + "\n";
  }
  out += "\n[table]\n";
  out += pad("metric", 16) + "value\n";
  out += std::string(28, '-') + "\n";
  for (const auto & [k, v] : rows) {
    out += pad(k, 16) + fixed(v, 4) + "\n";
  }
  return out;
}

std::map<std::string, double> parse_report(const std::string & text)
{
  std::map<std::string, double> out;
  std::istringstream in(text);
  std::string line;
  bool in_metrics = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty() || line.front() == '#') {
      continue;
    }
    if (line.front() == '[') {
      in_metrics = line == "[metrics]";
      continue;
    }
    if (!in_metrics) {
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) {
      throw DataError("report: malformed line '" + line + "'");
    }
    out[line.substr(0, eq)] = text::parse_double(std::string_view(line).substr(eq + 3), "report");
  }
  if (out.empty()) {
    throw DataError("report: no [metrics] section");
  }
  return out;
}

std::string format_comparison(
  const std::map<std::string, double> & reference, const EvalReport & candidate, const std::string & reference_label)
{
  const std::string cand = candidate.label.empty() ? "candidate" : candidate.label;
  std::string out = pad("metric", 16) + pad(reference_label, 14) + pad(cand, 14) + "delta\n";
  out += std::string(56, '-') + "\n";
  for (const auto & [k, v] : candidate.entries()) {
    const auto it = reference.find(k);
    const double ref = it == reference.end() ? kNaN : it->second;
    out += pad(k, 16) + pad(fixed(ref, 4), 14) + pad(fixed(v, 4), 14) + fixed(v - ref, 4) + "\n";
  }
  return out;
}

}  // namespace fcw
