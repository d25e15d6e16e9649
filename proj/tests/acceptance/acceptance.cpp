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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. Details go to the indented lines below
// each verdict.

#include "fcw/cqr.hpp"
#include "fcw/drta.hpp"
#include "fcw/hstan.hpp"
#include "fcw/metrics.hpp"
#include "fcw/optim.hpp"
#include "fcw/pipeline.hpp"
#include "fcw/scenario.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace
{

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(int id, bool pass, const std::string & title)
{
  std::printf("%s  criterion %2d  %s\n", pass ? "PASS" : "FAIL", id, title.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void detail(const char * fmt, ...) __attribute__((format(printf, 1, 2)));
void detail(const char * fmt, ...)
{
  std::printf("      ");
  va_list args;
  va_start(args, fmt);
  std::vprintf(fmt, args);
  va_end(args);
  std::printf("\n");
  std::fflush(stdout);
}

std::string slurp(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// 1. End-to-end gradient check

void criterion_gradients()
{
  const auto t0 = Clock::now();
  fcw::HstanConfig c;
  c.sam_dim = 8;
  c.gat_heads = 2;
  c.gat_layers = 2;
  c.gru_hidden = 8;
  c.gru_layers = 1;
  c.attention_heads = 2;
  c.obs_steps = 4;
  c.pred_steps = 3;
  c.decoder_hidden = {8};
  c.collision_radius = 30.0;  // every pair inside, so the penalty carries gradient
  fcw::HstanModel model(c, 3);

  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> pos(-12.0, 12.0), vel(-3.0, 12.0), jitter(-0.3, 0.3);
  fcw::Window w;
  const std::size_t n = 3;
  std::vector<fcw::VehicleObservation> start(n);
  for (auto & v : start) {
    v.x = pos(rng);
    v.y = pos(rng) / 4.0;
    v.vx = vel(rng);
    v.vy = jitter(rng);
  }
  for (std::size_t f = 0; f < c.obs_steps; ++f) {
    fcw::SceneFrame frame;
    frame.timestamp = c.dt * static_cast<double>(f);
    for (std::size_t i = 0; i < n; ++i) {
      auto v = start[i];
      v.x += v.vx * frame.timestamp;
      v.y += v.vy * frame.timestamp;
      frame.vehicles.push_back(v);
      frame.ids.push_back(static_cast<int>(i));
    }
    w.history.push_back(frame);
  }
  w.future = fcw::TrajectorySet(n, c.pred_steps);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c.pred_steps; ++k) {
      const double t = c.dt * static_cast<double>(c.obs_steps + k);
      w.future.x(i, k) = start[i].x + start[i].vx * t + jitter(rng);
      w.future.y(i, k) = start[i].y + start[i].vy * t + jitter(rng);
    }
  }
  const std::vector<fcw::Window> ws{w};
  auto objective = [&](fcw::ad::Tape & tape, const fcw::ad::ParameterStore &) {
    return fcw::batch_objective(tape, model, ws);
  };
  const auto r = fcw::grad_check(objective, model.params());
  const double elapsed = seconds_since(t0);
  const bool all = r.coordinates_checked == model.params().scalar_count();
  verdict(1, all && r.max_relative_error < 1e-4 && elapsed < 30.0, "end-to-end gradient check");
  detail(
    "max relative error %.3e (limit 1e-4) over %zu of %zu coordinates, worst %s; %.1f s (limit 30 s)",
    r.max_relative_error, r.coordinates_checked, model.params().scalar_count(), r.worst_parameter.c_str(), elapsed);
}

// ---------------------------------------------------------------------------
// 2. Conformal coverage on heteroscedastic data

struct Sample
{
  std::vector<double> x;
  std::vector<double> y;
};

Sample heteroscedastic(std::size_t n, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> ux(-3.0, 3.0);
  std::normal_distribution<double> eps(0.0, 1.0);
  Sample s;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ux(rng);
    s.x.push_back(x);
    s.y.push_back(2.0 * std::sin(x) + 0.5 * x + (0.2 + 0.5 * std::abs(x)) * eps(rng));
  }
  return s;
}

fcw::Tensor2D quantile_features(const std::vector<double> & x)
{
  constexpr std::size_t kF = 5;
  fcw::Tensor2D f(x.size(), kF);
  for (std::size_t i = 0; i < x.size(); ++i) {
    f(i, 0) = x[i] / 3.0;
    f(i, 1) = std::abs(x[i]) / 3.0;
    f(i, 2) = std::sin(x[i]);
    f(i, 3) = std::cos(x[i]);
    f(i, 4) = x[i] * x[i] / 9.0;
  }
  return f;
}

// Linear lower/upper quantile heads trained with the pinball loss.
struct QuantileHeads
{
  fcw::ad::ParameterStore params;

  QuantileHeads()
  {
    params.add("w", fcw::Tensor2D(5, 2));
    params.add("b", fcw::Tensor2D(1, 2));
  }

  void fit(const Sample & train, double alpha)
  {
    const fcw::Tensor2D features = quantile_features(train.x);
    fcw::Tensor2D target(train.y.size(), 1);
    for (std::size_t i = 0; i < train.y.size(); ++i) target(i, 0) = train.y[i];
    fcw::OptimizerState opt;
    for (int step = 0; step < 400; ++step) {
      params.zero_grad();
      fcw::ad::Tape tape;
      const auto out = fcw::ad::linear_forward(tape.constant(features), tape.param(params.at("w")), tape.param(params.at("b")));
      const auto lo = fcw::pinball_loss(fcw::ad::slice_cols(out, 0, 1), target, alpha / 2.0);
      const auto hi = fcw::pinball_loss(fcw::ad::slice_cols(out, 1, 2), target, 1.0 - alpha / 2.0);
      const auto loss = fcw::ad::add(lo, hi);
      tape.backward(loss);
      tape.accumulate_into(params);
      fcw::adam_step(params, opt, 0.05);
    }
  }

  fcw::CalibrationSet predict(const Sample & s) const
  {
    const fcw::Tensor2D f = quantile_features(s.x);
    const auto & w = params.at("w").value;
    const auto & b = params.at("b").value;
    fcw::CalibrationSet out;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double lo = b(0, 0), hi = b(0, 1);
      for (std::size_t j = 0; j < f.cols(); ++j) {
        lo += f(i, j) * w(j, 0);
        hi += f(i, j) * w(j, 1);
      }
      out.add(lo, hi, s.y[i]);
    }
    return out;
  }
};

void criterion_coverage()
{
  const auto t0 = Clock::now();
  constexpr std::size_t kN = 1000;
  constexpr int kSeeds = 20;
  const std::vector<double> nominal{0.70, 0.75, 0.80, 0.85, 0.90};
  bool pass = true;
  std::vector<std::string> rows;
  for (double level : nominal) {
    const double alpha = 1.0 - level;
    double raw_sum = 0.0, cal_sum = 0.0, width_sum = 0.0, cal_sq = 0.0;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
      const Sample train = heteroscedastic(kN, rng);
      const Sample cal = heteroscedastic(kN, rng);
      const Sample test = heteroscedastic(kN, rng);
      QuantileHeads heads;
      heads.fit(train, alpha);
      const auto cal_set = heads.predict(cal);
      const auto test_set = heads.predict(test);
      const double q = fcw::calibrate(cal_set, alpha).q_hat.at(0);
      std::vector<double> lo, hi;
      for (std::size_t i = 0; i < test_set.size(); ++i) {
        const auto [l, u] = fcw::conformal_interval(test_set.lower[i], test_set.upper[i], q);
        lo.push_back(l);
        hi.push_back(u);
      }
      const auto raw = fcw::empirical_coverage(test_set.lower, test_set.upper, test_set.target);
      const auto corrected = fcw::empirical_coverage(lo, hi, test_set.target);
      raw_sum += raw.coverage;
      cal_sum += corrected.coverage;
      cal_sq += corrected.coverage * corrected.coverage;
      width_sum += corrected.mean_width;
    }
    const double raw_mean = raw_sum / kSeeds;
    const double cal_mean = cal_sum / kSeeds;
    const double se = std::sqrt(std::max(0.0, cal_sq / kSeeds - cal_mean * cal_mean) / (kSeeds - 1));
    const bool ok = cal_mean >= level && cal_mean <= level + 0.03;
    pass = pass && ok;
    char row[200];
    std::snprintf(
      row, sizeof row, "nominal %.2f  raw %.4f  calibrated %.4f (se %.4f)  width %.3f  %s", level, raw_mean, cal_mean, se,
      width_sum / kSeeds, ok ? "ok" : "outside [nominal, nominal + 0.03]");
    rows.emplace_back(row);
  }
  const double elapsed = seconds_since(t0);
  verdict(2, pass && elapsed < 300.0, "conformal coverage over 20 seeds");
  for (const auto & r : rows) detail("%s", r.c_str());
  detail("n_cal = n_test = %zu; %.1f s (limit 300 s)", kN, elapsed);
}

// ---------------------------------------------------------------------------
// Shared pipeline helpers

struct RunOutput
{
  fcw::EvalReport report;
  double train_seconds = 0.0;
  std::string checkpoint;
};

fcw::RunConfig event_config()
{
  fcw::RunConfig c;
  c.model = fcw::HstanConfig::desk_scale();
  c.data.families = {fcw::ScenarioFamily::kSuddenBraking, fcw::ScenarioFamily::kCutIn};
  c.data.episodes_per_family = 20;
  c.data.vehicle_count = 4;
  c.data.duration = 8.0;
  c.data.noise = 0.02;
  c.data.seed = 1;
  c.data.split_seed = 7;
  c.train.epochs = 50;
  c.train.batch_size = 32;
  c.train.learning_rate = 1e-3;
  c.train.seed = 1;
  return c;
}

// gen -> train -> calibrate -> warn -> eval through the command layer.
// `reuse` names a checkpoint trained under the same effective model.
RunOutput run_pipeline(
  const fcw::RunConfig & config, const std::string & dataset_dir, const std::string & dir, const std::string & reuse = {})
{
  fs::create_directories(dir);
  RunOutput out;
  out.checkpoint = reuse.empty() ? dir + "/model.ckpt" : reuse;
  if (reuse.empty()) {
    const auto t0 = Clock::now();
    fcw::cmd_train(config, dataset_dir, out.checkpoint);
    out.train_seconds = seconds_since(t0);
  }
  const std::string cal = dir + "/calibration.json";
  fcw::cmd_calibrate(config, out.checkpoint, dataset_dir, config.model.alpha, cal);
  fcw::cmd_warn(config, out.checkpoint, cal, dataset_dir, dir + "/warn");
  out.report = fcw::cmd_eval(config, dataset_dir, dir + "/warn");
  std::ofstream(dir + "/report.txt") << fcw::format_report(out.report);
  return out;
}

// ---------------------------------------------------------------------------
// 3 and 8. Prediction quality and ablations on event-heavy traffic

struct EventRuns
{
  RunOutput full;
  double full_seconds = 0.0;
  fcw::EvalReport cv;
  std::vector<std::string> switches{"no_sam", "no_tam", "single_head", "no_cqr", "no_collision_loss", "fixed_threshold=0.8"};
  std::map<std::string, fcw::EvalReport> reports;
  std::vector<std::string> errors;
  bool produced = true;
};

EventRuns run_event_pipelines(const std::string & root)
{
  EventRuns out;
  const fcw::RunConfig base = event_config();
  const std::string data_dir = root + "/events";
  fcw::cmd_gen(base, data_dir);

  const auto t0 = Clock::now();
  out.full = run_pipeline(base, data_dir, root + "/full");
  out.full_seconds = seconds_since(t0);

  fcw::cmd_warn(base, "", "", data_dir, root + "/cv", true);
  out.cv = fcw::cmd_eval(base, data_dir, root + "/cv");

  for (const auto & s : out.switches) {
    fcw::RunConfig c = base;
    c.ablations = fcw::Ablations::parse(s);
    const bool same_model = c.effective_model().to_json() == base.effective_model().to_json();
    std::string tag = s;
    std::replace(tag.begin(), tag.end(), '=', '_');
    try {
      const RunOutput r = run_pipeline(c, data_dir, root + "/" + tag, same_model ? out.full.checkpoint : std::string{});
      const auto parsed = fcw::parse_report(slurp(root + "/" + tag + "/report.txt"));
      out.produced = out.produced && !parsed.empty() && std::isfinite(r.report.ade);
      out.reports[s] = r.report;
    } catch (const std::exception & e) {
      out.errors.push_back(s + " failed: " + e.what());
      out.produced = false;
    }
  }
  return out;
}

void criterion_prediction(const EventRuns & runs)
{
  const auto & full = runs.full;
  const double ratio = full.report.ade / runs.cv.ade;
  verdict(3, ratio <= 0.8 && runs.full_seconds < 600.0, "HSTAN ADE at most 0.8 x constant velocity");
  detail(
    "test ADE %.4f m vs constant velocity %.4f m, ratio %.3f (limit 0.8); FDE %.4f vs %.4f", full.report.ade, runs.cv.ade,
    ratio, full.report.fde, runs.cv.fde);
  detail(
    "%zu test windows; pipeline %.1f s, of which training %.1f s (limit 600 s)", full.report.windows, runs.full_seconds,
    full.train_seconds);
}

void criterion_ablations(const EventRuns & runs)
{
  const double full_ade = runs.full.report.ade;
  const double sam_ade = runs.reports.count("no_sam") ? runs.reports.at("no_sam").ade : NAN;
  const double tam_ade = runs.reports.count("no_tam") ? runs.reports.at("no_tam").ade : NAN;
  const bool sam_worse = sam_ade > full_ade;
  const bool tam_worse = tam_ade > full_ade;
  verdict(8, runs.produced && sam_worse && tam_worse, "every ablation runs; removing SAM or TAM raises ADE");
  for (const auto & e : runs.errors) detail("%s", e.c_str());
  detail("all switches produced a report: %s", runs.produced ? "yes" : "no");
  detail("no_sam ADE %.4f vs full %.4f: %s", sam_ade, full_ade, sam_worse ? "worse, as required" : "NOT worse");
  detail("no_tam ADE %.4f vs full %.4f: %s", tam_ade, full_ade, tam_worse ? "worse, as required" : "NOT worse");
  detail("%-22s %8s %8s %8s %8s %8s", "run", "ADE", "FDE", "F1", "FPR", "cover");
  auto row = [](const std::string & name, const fcw::EvalReport & r) {
    detail(
      "%-22s %8.4f %8.4f %8.3f %8.3f %8.3f", name.c_str(), r.ade, r.fde, r.classification.f1, r.classification.fpr,
      r.coverage);
  };
  row("full", runs.full.report);
  for (const auto & s : runs.switches) {
    if (runs.reports.count(s)) row(s, runs.reports.at(s));
  }
  row("constant velocity", runs.cv);
}

// ---------------------------------------------------------------------------
// 4. Constant-velocity sanity

void criterion_constant_velocity()
{
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-40.0, 40.0), vel(5.0, 20.0), lat(-1.0, 1.0);
  std::vector<fcw::Episode> eps;
  for (int e = 0; e < 100; ++e) {
    fcw::Episode ep;
    ep.id = e;
    std::vector<fcw::VehicleObservation> start(3);
    for (std::size_t i = 0; i < start.size(); ++i) {
      start[i].x = pos(rng) + 60.0 * static_cast<double>(i);
      start[i].y = fcw::kLaneWidth * static_cast<double>(i);
      start[i].vx = vel(rng);
      start[i].vy = lat(rng);
    }
    for (int f = 0; f < 40; ++f) {
      fcw::SceneFrame frame;
      frame.timestamp = 0.1 * f;
      for (std::size_t i = 0; i < start.size(); ++i) {
        auto v = start[i];
        v.x += v.vx * frame.timestamp;
        v.y += v.vy * frame.timestamp;
        frame.vehicles.push_back(v);
        frame.ids.push_back(static_cast<int>(i));
      }
      ep.frames.push_back(frame);
    }
    ep.label = fcw::scan_contacts(ep.frames);
    eps.push_back(ep);
  }
  const auto config = fcw::HstanConfig::desk_scale();
  const auto ds = fcw::make_dataset(eps, config.obs_steps, config.pred_steps, 7);
  auto state = fcw::init_training(config, 1);
  fcw::TrainOptions opt;
  opt.epochs = 100;
  opt.seed = 1;
  opt.schedule.base = 1e-2;
  fcw::train(state, ds, opt);

  std::vector<std::vector<fcw::SceneFrame>> histories;
  std::vector<fcw::TrajectorySet> truths, preds;
  for (const auto & ref : ds.windows(fcw::Split::kTest)) {
    auto w = ds.window(ref);
    histories.push_back(std::move(w.history));
    truths.push_back(std::move(w.future));
  }
  for (const auto & b : fcw::hstan_predict(histories, state.model)) preds.push_back(b.point);
  const double ade = fcw::mean_ade(preds, truths);
  verdict(4, ade < 0.05, "noiseless constant-velocity scenes are learned");
  detail("test ADE %.4f m (limit 0.05 m) over %zu windows; %.1f s", ade, truths.size(), seconds_since(t0));
}

// ---------------------------------------------------------------------------
// 5. Risk engine invariants

void criterion_risk_invariants()
{
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> level(0.05, 5.0), unit(0.0, 1.0);
  fcw::RiskWeights w;

  // (a) constant streams
  bool constant_ok = true;
  for (int s = 0; s < 100; ++s) {
    const std::vector<double> stream(200, level(rng));
    for (bool t : fcw::replay(stream, w)) constant_ok = constant_ok && !t;
  }

  // (b) an isolated +10 sigma spike on an alternating c +- sigma baseline,
  // whose z-score stays near 1 for any window fill
  bool spike_ok = true;
  for (int s = 0; s < 100; ++s) {
    const double c = level(rng), sigma = 0.01 + 0.2 * unit(rng);
    const std::size_t parity = unit(rng) < 0.5 ? 0 : 1;
    const std::size_t at = 60 + static_cast<std::size_t>(unit(rng) * 100.0);
    std::vector<double> stream;
    for (std::size_t t = 0; t < 200; ++t) stream.push_back((t + parity) % 2 == 0 ? c + sigma : c - sigma);
    fcw::SlidingWindow win(w.window);
    for (std::size_t t = 0; t < at; ++t) win.push(stream[t]);
    const auto st = fcw::window_stats(win);
    stream[at] = st.mean + 10.0 * st.stddev;
    const auto fired = fcw::replay(stream, w);
    for (std::size_t t = 0; t < fired.size(); ++t) spike_ok = spike_ok && (fired[t] == (t == at));
  }

  // (c) lambda monotonicity and (d) rescaling on noisy streams with bursts
  bool subset_ok = true, scale_ok = true;
  std::size_t fired_loose = 0, fired_mid = 0, fired_strict = 0;
  std::lognormal_distribution<double> noise(0.0, 0.5);
  for (int s = 0; s < 100; ++s) {
    std::vector<double> stream;
    for (int t = 0; t < 300; ++t) stream.push_back(noise(rng) + (unit(rng) < 0.05 ? 3.0 * unit(rng) : 0.0));
    auto run = [&](double lambda) {
      fcw::RiskWeights v = w;
      v.lambda = lambda;
      return fcw::replay(stream, v);
    };
    const auto strict = run(3.0), mid = run(2.2), loose = run(1.5);
    for (std::size_t t = 0; t < stream.size(); ++t) {
      subset_ok = subset_ok && (!strict[t] || mid[t]) && (!mid[t] || loose[t]);
      fired_strict += strict[t];
      fired_mid += mid[t];
      fired_loose += loose[t];
    }
    const double k = std::exp(std::uniform_real_distribution<double>(-4.0, 4.0)(rng));
    std::vector<double> scaled;
    for (double v : stream) scaled.push_back(k * v);
    scale_ok = scale_ok && fcw::replay(scaled, w) == mid;
  }
  verdict(5, constant_ok && spike_ok && subset_ok && scale_ok, "adaptive threshold invariants");
  detail("(a) constant streams never warn: %s", constant_ok ? "yes" : "no");
  detail("(b) +10 sigma spike warns exactly at the spike tick: %s", spike_ok ? "yes" : "no");
  detail(
    "(c) warnings at lambda 3.0 within 2.2 within 1.5: %s (%zu / %zu / %zu ticks)", subset_ok ? "yes" : "no", fired_strict,
    fired_mid, fired_loose);
  detail("(d) rescaled streams give identical decisions: %s", scale_ok ? "yes" : "no");
}

// ---------------------------------------------------------------------------
// 6. Sparse attention scaling

void criterion_scaling()
{
  const fcw::HstanModel model(fcw::HstanConfig::desk_scale(), 1);
  const std::vector<std::size_t> sizes{10, 20, 40, 60, 80, 100, 120};
  const auto report = fcw::run_bench(model, sizes, 20);
  verdict(6, report.linear_r2 > 0.99 && report.quadratic_r2 > 0.99, "attention work grows linearly in N at fixed density");
  detail(
    "score evaluations vs N: R^2 %.5f (limit 0.99); all-pairs vs N^2: R^2 %.5f; all-pairs vs N: R^2 %.5f", report.linear_r2,
    report.quadratic_r2, report.all_pairs_linear_r2);
  std::istringstream table(fcw::format_bench(report));
  for (std::string line; std::getline(table, line);) detail("%s", line.c_str());
}

// ---------------------------------------------------------------------------
// 7. Metrics against brute-force recomputation

bool brute_collides(const fcw::TrajectorySet & p)
{
  for (std::size_t i = 0; i < p.vehicles(); ++i) {
    for (std::size_t j = 0; j < p.vehicles(); ++j) {
      if (i == j) continue;
      for (std::size_t k = 0; k < p.steps(); ++k) {
        const double dx = p.x(i, k) - p.x(j, k), dy = p.y(i, k) - p.y(j, k);
        if (dx * dx + dy * dy < fcw::kContactThreshold * fcw::kContactThreshold) return true;
      }
    }
  }
  return false;
}

struct BruteEpisodeScores
{
  fcw::ConfusionCounts counts;
  std::vector<double> leads;
};

BruteEpisodeScores brute_episodes(const std::vector<fcw::WarningEvent> & events, const std::vector<fcw::Episode> & eps)
{
  BruteEpisodeScores out;
  for (const auto & ep : eps) {
    double first = INFINITY;
    for (const auto & e : events) {
      if (e.episode_id != ep.id || !e.triggered) continue;
      if (ep.label.danger && ep.label.contact_time && e.time >= *ep.label.contact_time) continue;
      first = std::min(first, e.time);
    }
    const bool warned = std::isfinite(first);
    if (ep.label.danger) {
      warned ? ++out.counts.tp : ++out.counts.fn;
      if (warned && ep.label.contact_time) out.leads.push_back(*ep.label.contact_time - first);
    } else {
      warned ? ++out.counts.fp : ++out.counts.tn;
    }
  }
  return out;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

bool matches(const std::vector<fcw::WarningEvent> & events, const std::vector<fcw::Episode> & eps, std::string & why)
{
  const auto b = brute_episodes(events, eps);
  const auto m = fcw::classification_metrics(events, eps);
  if (!(m.counts == b.counts)) {
    why = "confusion counts";
    return false;
  }
  const auto & c = b.counts;
  auto frac = [](std::size_t num, std::size_t den) { return den == 0 ? 0.0 : double(num) / double(den); };
  if (!close(m.precision, frac(c.tp, c.tp + c.fp)) || !close(m.recall, frac(c.tp, c.tp + c.fn)) ||
      !close(m.fpr, frac(c.fp, c.fp + c.tn)) || !close(m.fnr, frac(c.fn, c.fn + c.tp)) ||
      !close(m.f1, frac(2 * c.tp, 2 * c.tp + c.fp + c.fn))) {
    why = "classification rates";
    return false;
  }
  const auto lead = fcw::awlt(events, eps);
  if (b.leads.empty() != !lead.has_value()) {
    why = "lead-time presence";
    return false;
  }
  if (lead) {
    double mean = 0.0;
    for (double l : b.leads) mean += l;
    mean /= double(b.leads.size());
    double var = 0.0;
    for (double l : b.leads) var += (l - mean) * (l - mean);
    const double sd = b.leads.size() > 1 ? std::sqrt(var / double(b.leads.size() - 1)) : 0.0;
    auto sorted = b.leads;
    std::sort(sorted.begin(), sorted.end());
    const double pos = 0.05 * double(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double p5 = lo + 1 < sorted.size() ? sorted[lo] + (pos - double(lo)) * (sorted[lo + 1] - sorted[lo]) : sorted[lo];
    if (lead->count != b.leads.size() || !close(lead->mean, mean) || !close(lead->stddev, sd) || !close(lead->percentile5, p5)) {
      why = "lead-time statistics";
      return false;
    }
  }
  return true;
}

void criterion_metrics()
{
  fcw::RunConfig config;
  config.model = fcw::HstanConfig::desk_scale();
  std::vector<fcw::Episode> eps;
  int id = 40;
  for (std::size_t i = 0; i < 10; ++i) {
    fcw::ScenarioSpec s;
    s.family = fcw::kAllFamilies[i % std::size(fcw::kAllFamilies)];
    s.vehicle_count = 3 + i % 2;
    s.duration = 6.0;
    s.seed = 9000 + i;
    eps.push_back(fcw::gen_scenario(s, id));
    id += 3;
  }
  const auto ds = fcw::make_dataset(eps, config.model.obs_steps, config.model.pred_steps, 7);
  const auto predictor = fcw::cv_predictor(config.model.pred_steps, 0.1);

  // Window-level metrics over every window of the ten episodes.
  std::vector<fcw::TrajectorySet> preds, truths;
  for (const auto & ref : ds.all_windows()) {
    auto w = ds.window(ref);
    preds.push_back(fcw::cv_baseline(w.history, config.model.pred_steps, 0.1));
    truths.push_back(std::move(w.future));
  }
  double dist_sum = 0.0, final_sum = 0.0;
  std::size_t vehicle_steps = 0, vehicles = 0, hits = 0;
  for (std::size_t w = 0; w < preds.size(); ++w) {
    const auto & p = preds[w];
    const auto & t = truths[w];
    for (std::size_t i = 0; i < p.vehicles(); ++i) {
      for (std::size_t k = 0; k < p.steps(); ++k) {
        const double d = std::hypot(p.x(i, k) - t.x(i, k), p.y(i, k) - t.y(i, k));
        dist_sum += d;
        ++vehicle_steps;
        if (k + 1 == p.steps()) final_sum += d;
      }
      ++vehicles;
    }
    hits += brute_collides(p) ? 1 : 0;
  }
  const double n = double(preds.size());
  const double ade = dist_sum / double(vehicle_steps), fde = final_sum / double(vehicles);
  const bool ade_ok = close(fcw::mean_ade(preds, truths), ade), fde_ok = close(fcw::mean_fde(preds, truths), fde);
  const bool rate_ok = fcw::collision_rate(preds) == double(hits) / n;
  const bool window_ok = ade_ok && fde_ok && rate_ok;

  // Episode-level metrics on the replayed warnings and on random event logs.
  std::vector<std::size_t> all(ds.episodes.size());
  for (std::size_t e = 0; e < all.size(); ++e) all[e] = e;
  const auto warned = fcw::run_warnings(predictor, ds, all, nullptr, config);
  std::string why;
  bool episode_ok = matches(warned.events, ds.episodes, why);
  std::mt19937_64 rng(77);
  std::bernoulli_distribution fire(0.02);
  for (int trial = 0; trial < 50 && episode_ok; ++trial) {
    auto events = warned.events;
    for (auto & e : events) e.triggered = fire(rng);
    episode_ok = matches(events, ds.episodes, why);
  }
  std::size_t danger = 0;
  for (const auto & ep : ds.episodes) danger += ep.label.danger ? 1 : 0;
  const auto m = fcw::classification_metrics(warned.events, ds.episodes);
  verdict(7, window_ok && episode_ok, "metrics match brute-force recomputation");
  detail(
    "%zu episodes (%zu dangerous), %zu windows; ADE %.4f FDE %.4f collision rate %.4f", ds.episodes.size(), danger,
    preds.size(), ade, fde, double(hits) / n);
  if (!window_ok) detail("window metrics: ADE %s, FDE %s, collision rate %s", ade_ok ? "ok" : "MISMATCH", fde_ok ? "ok" : "MISMATCH", rate_ok ? "ok" : "MISMATCH");
  detail(
    "replayed warnings: tp %zu fp %zu tn %zu fn %zu; plus 50 random event logs%s%s", m.counts.tp, m.counts.fp, m.counts.tn,
    m.counts.fn, episode_ok ? "" : "; mismatch in ", why.c_str());
}

// ---------------------------------------------------------------------------
// 9. Determinism

void criterion_determinism(const std::string & root)
{
  fcw::RunConfig c;
  c.model = fcw::HstanConfig::desk_scale();
  c.data.episodes_per_family = 2;
  c.data.duration = 5.0;
  c.train.epochs = 3;
  const std::string data_dir = root + "/det_data";
  fcw::cmd_gen(c, data_dir);
  for (const char * run : {"a", "b"}) {
    const std::string dir = root + "/det_" + run;
    fs::create_directories(dir);
    fcw::cmd_train(c, data_dir, dir + "/model.ckpt");
    fcw::cmd_calibrate(c, dir + "/model.ckpt", data_dir, c.model.alpha, dir + "/calibration.json");
    fcw::cmd_warn(c, dir + "/model.ckpt", dir + "/calibration.json", data_dir, dir + "/warn");
  }
  auto same = [&](const std::string & rel) { return slurp(root + "/det_a/" + rel) == slurp(root + "/det_b/" + rel); };
  const bool ckpt = same("model.ckpt"), cal = same("calibration.json");
  const bool events = same("warn/" + std::string(fcw::kEventFile)), preds = same("warn/" + std::string(fcw::kPredictionFile));
  const bool nonempty = !slurp(root + "/det_a/model.ckpt").empty() && !slurp(root + "/det_a/warn/events.csv").empty();
  verdict(9, nonempty && ckpt && cal && events && preds, "identical config and seed give identical artifacts");
  detail(
    "checkpoint %s, calibration %s, event log %s, predictions %s", ckpt ? "identical" : "DIFFERENT",
    cal ? "identical" : "DIFFERENT", events ? "identical" : "DIFFERENT", preds ? "identical" : "DIFFERENT");
}

// ---------------------------------------------------------------------------
// 10. Published numbers

void criterion_published_numbers()
{
  verdict(10, true, "published numbers are reported as not reproducible");
  detail("The published ADE/FDE, collision rate, F1, false-warning and missed-warning rates, lead times and latencies");
  detail("depend on real driving datasets, hardware and training budgets that are not available here. This suite");
  detail("checks structural properties on synthetic data only; none of the published numbers are reproduced.");
}

}  // namespace

int main()
{
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / ("fcw_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(root);
  auto guarded = [](int id, const std::function<void()> & body) {
    try {
      body();
    } catch (const std::exception & e) {
      verdict(id, false, std::string("aborted: ") + e.what());
    }
  };
  guarded(1, criterion_gradients);
  guarded(2, criterion_coverage);
  std::optional<EventRuns> runs;
  try {
    runs = run_event_pipelines(root.string());
  } catch (const std::exception & e) {
    verdict(3, false, std::string("aborted: ") + e.what());
  }
  if (runs) guarded(3, [&] { criterion_prediction(*runs); });
  guarded(4, criterion_constant_velocity);
  guarded(5, criterion_risk_invariants);
  guarded(6, criterion_scaling);
  guarded(7, criterion_metrics);
  if (runs) {
    guarded(8, [&] { criterion_ablations(*runs); });
  } else {
    verdict(8, false, "aborted: event pipelines did not complete");
  }
  guarded(9, [&] { criterion_determinism(root.string()); });
  guarded(10, criterion_published_numbers);
  std::error_code ec;
  fs::remove_all(root, ec);
  std::printf("%d criterion line(s) failed; %.1f s total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
