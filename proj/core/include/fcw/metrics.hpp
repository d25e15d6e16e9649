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

#ifndef FCW__METRICS_HPP_
#define FCW__METRICS_HPP_

#include "fcw/drta.hpp"
#include "fcw/scenario.hpp"
#include "fcw/trajectory.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fcw
{

/// Compensated (Neumaier) running sum.
class KahanSum
{
public:
  void add(double v);
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Mean pointwise Euclidean error over vehicles and steps. Throws
/// DimensionError on a shape mismatch.
double ade(const TrajectorySet & pred, const TrajectorySet & truth);
/// Same, final step only.
double fde(const TrajectorySet & pred, const TrajectorySet & truth);

/// Per-window errors pooled over windows (every vehicle-step weighs the
/// same).
double mean_ade(std::span<const TrajectorySet> preds, std::span<const TrajectorySet> truths);
double mean_fde(std::span<const TrajectorySet> preds, std::span<const TrajectorySet> truths);

/// True when some pair of predicted vehicles comes closer than `threshold`
/// at a common step.
bool predicts_collision(const TrajectorySet & pred, double threshold);
/// Fraction of windows for which predicts_collision holds. Throws
/// std::invalid_argument for threshold <= 0.
double collision_rate(std::span<const TrajectorySet> preds, double threshold = kContactThreshold);

struct ConfusionCounts
{
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts &) const = default;
};

/// Rates with an undefined denominator are NaN.
struct ClassificationMetrics
{
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
};

ClassificationMetrics rates_from_counts(const ConfusionCounts & counts);

/// Per-episode first warning time (strictly before contact for danger
/// episodes). Episodes without such a warning are absent.
std::map<int, double> first_warnings(std::span<const WarningEvent> events, std::span<const Episode> episodes);

/// Episode-level accounting: TP when a danger episode has a warning before
/// contact, FP when a safe episode has any warning. Throws DataError on an
/// empty episode list.
ClassificationMetrics classification_metrics(
  std::span<const WarningEvent> events, std::span<const Episode> episodes);

struct LeadTimeStats
{
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;       // sample std, 0 for a single lead
  double percentile5 = 0.0;  // linear interpolation between order stats
};

/// Contact time minus first warning time over TP episodes; nullopt when
/// there are none.
std::optional<LeadTimeStats> awlt(std::span<const WarningEvent> events, std::span<const Episode> episodes);

/// q in [0, 1]; linear interpolation on the sorted sample.
double percentile(std::vector<double> values, double q);

struct EvalReport
{
  std::size_t episodes = 0;
  std::size_t windows = 0;
  double ade = 0.0;
  double fde = 0.0;
  double collision_rate = 0.0;
  ClassificationMetrics classification;
  std::optional<LeadTimeStats> lead_time;
  double coverage = 0.0;
  double mean_width = 0.0;
  double latency_p50_ms = 0.0;
  double latency_p90_ms = 0.0;
  double latency_p99_ms = 0.0;
  std::string label;  // model / ablation tag

  /// Flat key -> value view, NaN for undefined entries.
  std::vector<std::pair<std::string, double>> entries() const;
};

/// Key-value section ("key = value" lines) followed by a table.
std::string format_report(const EvalReport & report);
/// Reads the key-value section back. Throws DataError on malformed text.
std::map<std::string, double> parse_report(const std::string & text);
/// Side-by-side table: reference, candidate and difference per key.
std::string format_comparison(
  const std::map<std::string, double> & reference, const EvalReport & candidate, const std::string & reference_label);

}  // namespace fcw

#endif  // FCW__METRICS_HPP_
