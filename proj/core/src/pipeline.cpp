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

#include "fcw/pipeline.hpp"

#include "fcw/checkpoint.hpp"
#include "fcw/error.hpp"
#include "text_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace fcw
{

using Json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

Ablations Ablations::parse(std::string_view list)
{
  Ablations a;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    std::size_t comma = list.find(',', pos);
    if (comma == std::string_view::npos) comma = list.size();
    std::string_view item = list.substr(pos, comma - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    pos = comma + 1;
    if (item.empty()) continue;
    const std::size_t eq = item.find('=');
    const std::string_view name = item.substr(0, eq);
    if (name == "no_sam") {
      a.no_sam = true;
    } else if (name == "no_tam") {
      a.no_tam = true;
    } else if (name == "single_head") {
      a.single_head = true;
    } else if (name == "no_cqr") {
      a.no_cqr = true;
    } else if (name == "no_collision_loss") {
      a.no_collision_loss = true;
    } else if (name == "fixed_threshold") {
      a.fixed_threshold = 1.0;
      if (eq != std::string_view::npos) {
        a.fixed_threshold = text::parse_double(item.substr(eq + 1), "fixed_threshold");
      }
    } else {
      throw std::invalid_argument("unknown ablation '" + std::string(item) + "'");
    }
    if (eq != std::string_view::npos && name != "fixed_threshold") {
      throw std::invalid_argument("ablation '" + std::string(name) + "' takes no value");
    }
  }
  return a;
}

std::string Ablations::to_string() const
{
  std::vector<std::string> parts;
  if (no_sam) parts.emplace_back("no_sam");
  if (no_tam) parts.emplace_back("no_tam");
  if (single_head) parts.emplace_back("single_head");
  if (no_cqr) parts.emplace_back("no_cqr");
  if (no_collision_loss) parts.emplace_back("no_collision_loss");
  if (fixed_threshold) {
    std::string s = "fixed_threshold=";
    text::put(s, *fixed_threshold);
    parts.push_back(s);
  }
  std::string out;
  for (const auto & p : parts) {
    if (!out.empty()) out += ',';
    out += p;
  }
  return out;
}

bool Ablations::any() const
{
  return no_sam || no_tam || single_head || no_cqr || no_collision_loss || fixed_threshold.has_value();
}

std::vector<ScenarioSpec> DataConfig::specs(double dt) const
{
  std::vector<ScenarioSpec> out;
  for (std::size_t f = 0; f < families.size(); ++f) {
    for (std::size_t i = 0; i < episodes_per_family; ++i) {
      ScenarioSpec s;
      s.family = families[f];
      s.vehicle_count = vehicle_count;
      s.duration = duration;
      s.dt = dt;
      s.noise = noise;
      s.seed = seed * 1000003ULL + static_cast<std::uint64_t>(f) * 10007ULL + i;
      out.push_back(s);
    }
  }
  return out;
}

HstanConfig RunConfig::effective_model() const
{
  HstanConfig c = model;
  c.no_sam = c.no_sam || ablations.no_sam;
  c.no_tam = c.no_tam || ablations.no_tam;
  c.single_head = c.single_head || ablations.single_head;
  if (ablations.no_collision_loss) {
    c.collision_weight = 0.0;
  }
  return c;
}

RiskWeights RunConfig::effective_risk() const
{
  RiskWeights w = risk;
  if (mode) {
    w.lambda = mode_lambda(*mode);
  }
  return w;
}

void RunConfig::validate() const
{
  effective_model().validate();
  effective_risk().validate();
  if (data.families.empty() || data.episodes_per_family == 0) {
    throw std::invalid_argument("data: need at least one family and one episode");
  }
  if (train.epochs == 0 || train.batch_size == 0 || !(train.learning_rate >= 0.0)) {
    throw std::invalid_argument("train: epochs and batch_size must be positive, learning_rate >= 0");
  }
  if (ablations.fixed_threshold && !std::isfinite(*ablations.fixed_threshold)) {
    throw std::invalid_argument("fixed_threshold must be finite");
  }
}

namespace
{

Json risk_to_json(const RiskWeights & w)
{
  return Json{
    {"w1", w.w1}, {"w2", w.w2}, {"w3", w.w3}, {"tau", w.tau}, {"v_safe", w.v_safe}, {"a_max", w.a_max},
    {"gamma", w.gamma}, {"beta", w.beta}, {"lambda", w.lambda}, {"d_min_floor", w.d_min_floor},
    {"kin_floor", w.kin_floor}, {"collision_radius", w.collision_radius}, {"window", w.window},
    {"warmup", w.warmup},
  };
}

Json data_to_json(const DataConfig & d)
{
  Json families = Json::array();
  for (auto f : d.families) families.push_back(std::string(family_name(f)));
  return Json{
    {"families", families}, {"episodes_per_family", d.episodes_per_family}, {"vehicle_count", d.vehicle_count},
    {"duration", d.duration}, {"noise", d.noise}, {"seed", d.seed}, {"split_seed", d.split_seed},
  };
}

Json train_to_json(const TrainConfig & t)
{
  return Json{
    {"epochs", t.epochs}, {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
    {"min_learning_rate", t.min_learning_rate}, {"seed", t.seed},
  };
}

void reject_unknown(const Json & j, const Json & known, const std::string & section)
{
  if (!j.is_object()) {
    throw std::invalid_argument("config section '" + section + "' must be an object");
  }
  for (const auto & [k, v] : j.items()) {
    if (!known.contains(k)) {
      throw std::invalid_argument("unknown config key '" + section + "." + k + "'");
    }
  }
}

template <class T>
void read_key(const Json & j, const char * key, T & out)
{
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

}  // namespace

std::string RunConfig::to_json() const
{
  Json j{
    {"model", Json::parse(model.to_json())},
    {"risk", risk_to_json(risk)},
    {"mode", mode ? Json(std::string(mode_name(*mode))) : Json(nullptr)},
    {"data", data_to_json(data)},
    {"train", train_to_json(train)},
    {"ablations", ablations.to_string()},
  };
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string & text)
{
  RunConfig c;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception & e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  reject_unknown(j, Json{{"model", 0}, {"risk", 0}, {"mode", 0}, {"data", 0}, {"train", 0}, {"ablations", 0}}, "");
  try {
    if (j.contains("model")) {
      c.model = HstanConfig::from_json(j.at("model").dump());
    }
    if (j.contains("risk")) {
      const Json & r = j.at("risk");
      reject_unknown(r, risk_to_json(c.risk), "risk");
      read_key(r, "w1", c.risk.w1);
      read_key(r, "w2", c.risk.w2);
      read_key(r, "w3", c.risk.w3);
      read_key(r, "tau", c.risk.tau);
      read_key(r, "v_safe", c.risk.v_safe);
      read_key(r, "a_max", c.risk.a_max);
      read_key(r, "gamma", c.risk.gamma);
      read_key(r, "beta", c.risk.beta);
      read_key(r, "lambda", c.risk.lambda);
      read_key(r, "d_min_floor", c.risk.d_min_floor);
      read_key(r, "kin_floor", c.risk.kin_floor);
      read_key(r, "collision_radius", c.risk.collision_radius);
      read_key(r, "window", c.risk.window);
      read_key(r, "warmup", c.risk.warmup);
    }
    if (j.contains("mode") && !j.at("mode").is_null()) {
      c.mode = parse_mode(j.at("mode").get<std::string>());
    }
    if (j.contains("data")) {
      const Json & d = j.at("data");
      reject_unknown(d, data_to_json(c.data), "data");
      if (d.contains("families")) {
        c.data.families.clear();
        for (const auto & f : d.at("families")) c.data.families.push_back(parse_family(f.get<std::string>()));
      }
      read_key(d, "episodes_per_family", c.data.episodes_per_family);
      read_key(d, "vehicle_count", c.data.vehicle_count);
      read_key(d, "duration", c.data.duration);
      read_key(d, "noise", c.data.noise);
      read_key(d, "seed", c.data.seed);
      read_key(d, "split_seed", c.data.split_seed);
    }
    if (j.contains("train")) {
      const Json & t = j.at("train");
      reject_unknown(t, train_to_json(c.train), "train");
      read_key(t, "epochs", c.train.epochs);
      read_key(t, "batch_size", c.train.batch_size);
      read_key(t, "learning_rate", c.train.learning_rate);
      read_key(t, "min_learning_rate", c.train.min_learning_rate);
      read_key(t, "seed", c.train.seed);
    }
    if (j.contains("ablations")) {
      c.ablations = Ablations::parse(j.at("ablations").get<std::string>());
    }
  } catch (const Json::exception & e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::string & path)
{
  const auto lines = text::read_lines(path);
  std::string body;
  for (const auto & l : lines) {
    body += l;
    body += '\n';
  }
  return from_json(body);
}

// ---------------------------------------------------------------------------
// Data

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed)
{
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string dataset_fingerprint(std::span<const Episode> episodes)
{
  const std::uint64_t h = fnv1a(labels_text(episodes), fnv1a(trajectories_text(episodes)));
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) {
    out[static_cast<std::size_t>(15 - i)] = kHex[(h >> (4 * i)) & 0xF];
  }
  return out;
}

Predictor hstan_predictor(const HstanModel & model)
{
  return [&model](std::span<const std::vector<SceneFrame>> histories) { return hstan_predict(histories, model); };
}

Predictor cv_predictor(std::size_t pred_steps, double dt)
{
  return [pred_steps, dt](std::span<const std::vector<SceneFrame>> histories) {
    std::vector<PredictionBatch> out;
    out.reserve(histories.size());
    for (const auto & h : histories) {
      PredictionBatch b;
      b.point = cv_baseline(h, pred_steps, dt);
      b.lower = b.point;
      b.upper = b.point;
      out.push_back(std::move(b));
    }
    return out;
  };
}

LoadedDataset build_dataset(const RunConfig & config)
{
  const HstanConfig m = config.effective_model();
  const auto specs = config.data.specs(m.dt);
  LoadedDataset out;
  out.dataset = make_dataset(specs, m.obs_steps, m.pred_steps, config.data.split_seed);
  out.fingerprint = dataset_fingerprint(out.dataset.episodes);
  return out;
}

LoadedDataset load_dataset(const std::string & dir, const RunConfig & config)
{
  const HstanConfig m = config.effective_model();
  auto episodes = read_episodes(
    (fs::path(dir) / kTrajectoryFile).string(), (fs::path(dir) / kLabelFile).string());
  LoadedDataset out;
  out.fingerprint = dataset_fingerprint(episodes);
  out.dataset = make_dataset(std::move(episodes), m.obs_steps, m.pred_steps, config.data.split_seed);
  return out;
}

GenSummary cmd_gen(const RunConfig & config, const std::string & out_dir)
{
  config.validate();
  const LoadedDataset data = build_dataset(config);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create '" + out_dir + "': " + ec.message());
  }
  write_trajectories((fs::path(out_dir) / kTrajectoryFile).string(), data.dataset.episodes);
  write_labels((fs::path(out_dir) / kLabelFile).string(), data.dataset.episodes);
  GenSummary s;
  s.episodes = data.dataset.episodes.size();
  s.windows = data.dataset.all_windows().size();
  for (const auto & ep : data.dataset.episodes) {
    s.danger += ep.label.danger ? 1 : 0;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training

TrainState train_model(
  const RunConfig & config, const TrajectoryDataset & dataset, std::optional<TrainState> resume,
  std::size_t stop_after, const std::function<void(const EpochLog &)> & on_epoch)
{
  const HstanConfig m = config.effective_model();
  TrainState state;
  if (resume) {
    if (resume->model.config().to_json() != m.to_json()) {
      throw DataError("resume: checkpoint model config differs from the run config");
    }
    state = std::move(*resume);
  } else {
    state = init_training(m, config.train.seed);
  }
  TrainOptions opt;
  opt.epochs = config.train.epochs;
  opt.batch_size = config.train.batch_size;
  opt.schedule.base = config.train.learning_rate;
  opt.schedule.minimum = config.train.min_learning_rate;
  opt.seed = config.train.seed;
  opt.stop_after = stop_after;
  train(state, dataset, opt, on_epoch);
  return state;
}

namespace
{

Json history_to_json(const std::vector<EpochLog> & history)
{
  Json out = Json::array();
  for (const auto & e : history) {
    out.push_back(Json{
      {"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}, {"mse", e.mse}, {"pinball", e.pinball},
      {"collision", e.collision}});
  }
  return out;
}

}  // namespace

void save_training(const std::string & path, const TrainState & state, const RunConfig & config, const std::string & fingerprint)
{
  Checkpoint ck;
  ck.config_json = state.model.config().to_json();
  const Json meta{
    {"epochs_completed", state.epochs_completed},
    {"history", history_to_json(state.history)},
    {"dataset_fingerprint", fingerprint},
    {"run_config", Json::parse(config.to_json())},
  };
  ck.metadata_json = meta.dump();
  ck.params = state.model.params();
  ck.optimizer = state.optimizer;
  write_checkpoint(path, ck);
}

TrainState load_training(const std::string & path)
{
  Checkpoint ck = read_checkpoint(path);
  TrainState s;
  s.model = HstanModel(HstanConfig::from_json(ck.config_json), std::move(ck.params));
  if (ck.optimizer) {
    s.optimizer = *ck.optimizer;
  }
  try {
    const Json meta = Json::parse(ck.metadata_json);
    s.epochs_completed = meta.value("epochs_completed", std::size_t{0});
    if (meta.contains("history")) {
      for (const auto & e : meta.at("history")) {
        EpochLog log;
        log.epoch = e.at("epoch").get<std::size_t>();
        log.lr = e.at("lr").get<double>();
        log.loss = e.at("loss").get<double>();
        log.mse = e.at("mse").get<double>();
        log.pinball = e.at("pinball").get<double>();
        log.collision = e.at("collision").get<double>();
        s.history.push_back(log);
      }
    }
  } catch (const Json::exception & e) {
    throw DataError(path + ": bad checkpoint metadata: " + e.what());
  }
  return s;
}

HstanModel load_model(const std::string & path)
{
  Checkpoint ck = read_checkpoint(path);
  return HstanModel(HstanConfig::from_json(ck.config_json), std::move(ck.params));
}

TrainSummary cmd_train(
  const RunConfig & config, const std::string & dataset_dir, const std::string & out_checkpoint,
  const std::string & resume_from, std::size_t stop_after, std::ostream * log)
{
  config.validate();
  const LoadedDataset data = load_dataset(dataset_dir, config);
  std::optional<TrainState> resume;
  if (!resume_from.empty()) {
    resume = load_training(resume_from);
  }
  const auto on_epoch = [log](const EpochLog & e) {
    if (!log) return;
    std::string line = "epoch " + std::to_string(e.epoch + 1) + " lr ";
    text::put(line, e.lr);
    line += " loss ";
    text::put(line, e.loss);
    line += " mse ";
    text::put(line, e.mse);
    line += " pinball ";
    text::put(line, e.pinball);
    line += " collision ";
    text::put(line, e.collision);
    *log << line << std::endl;
  };
  const TrainState state = train_model(config, data.dataset, std::move(resume), stop_after, on_epoch);
  save_training(out_checkpoint, state, config, data.fingerprint);
  return TrainSummary{state.epochs_completed, state.history};
}

// ---------------------------------------------------------------------------
// Prediction and calibration

namespace
{

constexpr std::size_t kPredictChunk = 64;

std::vector<PredictionBatch> predict_chunked(const Predictor & predictor, const std::vector<std::vector<SceneFrame>> & histories)
{
  std::vector<PredictionBatch> out;
  out.reserve(histories.size());
  for (std::size_t start = 0; start < histories.size(); start += kPredictChunk) {
    const std::size_t n = std::min(kPredictChunk, histories.size() - start);
    auto part = predictor(std::span(histories).subspan(start, n));
    for (auto & p : part) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

SplitPredictions predict_split(const Predictor & predictor, const TrajectoryDataset & dataset, Split which)
{
  SplitPredictions out;
  out.refs = dataset.windows(which);
  std::vector<std::vector<SceneFrame>> histories;
  histories.reserve(out.refs.size());
  out.truths.reserve(out.refs.size());
  for (const auto & r : out.refs) {
    Window w = dataset.window(r);
    histories.push_back(std::move(w.history));
    out.truths.push_back(std::move(w.future));
  }
  out.predictions = predict_chunked(predictor, histories);
  return out;
}

ConformalCorrection calibrate_model(
  const Predictor & predictor, const TrajectoryDataset & dataset, double alpha, const std::string & fingerprint)
{
  const SplitPredictions cal = predict_split(predictor, dataset, Split::kCalibration);
  const auto sets = trajectory_calibration_sets(cal.predictions, cal.truths);
  ConformalCorrection c = calibrate(sets, alpha);
  c.fingerprint = fingerprint;
  return c;
}

CalibrationSummary cmd_calibrate(
  const RunConfig & config, const std::string & checkpoint, const std::string & dataset_dir, double alpha,
  const std::string & out_path)
{
  const LoadedDataset data = load_dataset(dataset_dir, config);
  const HstanModel model = load_model(checkpoint);
  const Predictor predictor = hstan_predictor(model);
  const SplitPredictions cal = predict_split(predictor, data.dataset, Split::kCalibration);
  const auto sets = trajectory_calibration_sets(cal.predictions, cal.truths);
  CalibrationSummary s;
  s.correction = calibrate(sets, alpha);
  s.correction.fingerprint = data.fingerprint;
  s.raw_calibration = trajectory_coverage(cal.predictions, cal.truths).overall;
  std::vector<PredictionBatch> corrected;
  corrected.reserve(cal.predictions.size());
  for (const auto & p : cal.predictions) corrected.push_back(apply_correction(p, s.correction));
  s.corrected_calibration = trajectory_coverage(corrected, cal.truths).overall;
  write_correction(out_path, s.correction);
  return s;
}

// ---------------------------------------------------------------------------
// Warnings

WarnResult run_warnings(
  const Predictor & predictor, const TrajectoryDataset & dataset, std::span<const std::size_t> episodes,
  const ConformalCorrection * correction, const RunConfig & config)
{
  const RiskWeights weights = config.effective_risk();
  const std::size_t T = dataset.obs_steps;
  WarnResult out;
  for (std::size_t e : episodes) {
    const Episode & ep = dataset.episodes.at(e);
    if (ep.frames.size() < T || ep.frames.front().size() < 1) {
      continue;
    }
    RiskTrack track(weights, config.ablations.fixed_threshold);
    std::vector<std::size_t> threats;
    for (std::size_t j = 1; j < ep.frames.front().size(); ++j) threats.push_back(j);
    std::vector<std::vector<SceneFrame>> one(1);
    for (std::size_t f = T - 1; f < ep.frames.size(); ++f) {
      one[0].assign(ep.frames.begin() + static_cast<std::ptrdiff_t>(f + 1 - T), ep.frames.begin() + static_cast<std::ptrdiff_t>(f + 1));
      const auto t0 = std::chrono::steady_clock::now();
      PredictionBatch pred = std::move(predictor(one).front());
      const auto t1 = std::chrono::steady_clock::now();
      out.latency_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      if (correction && !config.ablations.no_cqr) {
        pred = apply_correction(pred, *correction);
      }
      RiskInputs in = extract_risk_inputs(pred, 0, threats, one[0], std::nullopt, ep.dt, weights);
      if (config.ablations.no_cqr) {
        in.sigma_pred = 0.0;
      }
      WarningEvent ev = track.step(in);
      ev.episode_id = ep.id;
      ev.tick = f;
      ev.time = ep.frames[f].timestamp;
      ev.track_id = ep.frames[f].ids.front();
      out.events.push_back(ev);
    }
  }
  return out;
}

namespace
{

std::string dir_file(const std::string & dir, std::string_view name)
{
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string & dir)
{
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create '" + dir + "': " + ec.message());
  }
}

}  // namespace

WarnSummary cmd_warn(
  const RunConfig & config, const std::string & checkpoint, const std::string & calibration,
  const std::string & dataset_dir, const std::string & out_dir, bool baseline_cv)
{
  config.validate();
  const LoadedDataset data = load_dataset(dataset_dir, config);
  std::optional<HstanModel> model;
  Predictor predictor;
  if (baseline_cv) {
    predictor = cv_predictor(data.dataset.pred_steps, data.dataset.episodes.empty() ? 0.1 : data.dataset.episodes.front().dt);
  } else {
    if (checkpoint.empty()) {
      throw std::invalid_argument("warn: a checkpoint is required unless the CV baseline is selected");
    }
    model = load_model(checkpoint);
    predictor = hstan_predictor(*model);
  }
  std::optional<ConformalCorrection> correction;
  if (!calibration.empty() && !config.ablations.no_cqr && !baseline_cv) {
    correction = read_correction(calibration);
    if (!correction->fingerprint.empty() && correction->fingerprint != data.fingerprint) {
      throw DataError("warn: calibration was computed on a different dataset");
    }
  }
  const auto test = data.dataset.episodes_in(Split::kTest);
  const WarnResult res = run_warnings(predictor, data.dataset, test, correction ? &*correction : nullptr, config);

  SplitPredictions preds = predict_split(predictor, data.dataset, Split::kTest);
  if (correction) {
    for (auto & p : preds.predictions) p = apply_correction(p, *correction);
  }

  ensure_dir(out_dir);
  write_event_log(dir_file(out_dir, kEventFile), res.events);
  write_predictions(dir_file(out_dir, kPredictionFile), data.dataset, preds);
  Json timing{
    {"ticks", res.latency_ms.size()},
    {"latency_ms", res.latency_ms},
  };
  text::write_text(dir_file(out_dir, kTimingFile), timing.dump() + "\n");

  WarnSummary s;
  s.episodes = test.size();
  s.events = res.events.size();
  for (const auto & e : res.events) s.warnings += e.triggered ? 1 : 0;
  return s;
}

namespace
{

constexpr std::string_view kPredictionHeader =
  "episode_id,start,vehicle,step,x,y,lower_x,lower_y,upper_x,upper_y";

}  // namespace

void write_predictions(const std::string & path, const TrajectoryDataset & dataset, const SplitPredictions & split)
{
  std::string out(kPredictionHeader);
  out += '\n';
  for (std::size_t w = 0; w < split.refs.size(); ++w) {
    const auto & p = split.predictions[w];
    const auto & ref = split.refs[w];
    const int id = dataset.episodes.at(ref.episode).id;
    for (std::size_t v = 0; v < p.point.vehicles(); ++v) {
      for (std::size_t k = 0; k < p.point.steps(); ++k) {
        out += std::to_string(id);
        out += ',';
        out += std::to_string(ref.start);
        out += ',';
        out += std::to_string(v);
        out += ',';
        out += std::to_string(k);
        for (double x : {p.point.x(v, k), p.point.y(v, k), p.lower.x(v, k), p.lower.y(v, k), p.upper.x(v, k), p.upper.y(v, k)}) {
          out += ',';
          text::put(out, x);
        }
        out += '\n';
      }
    }
  }
  text::write_text(path, out);
}

std::vector<std::pair<std::pair<int, std::size_t>, PredictionBatch>> read_predictions(const std::string & path)
{
  const auto lines = text::read_lines(path);
  if (lines.empty() || lines.front() != kPredictionHeader) {
    throw DataError(path + ": missing prediction header");
  }
  struct Row
  {
    std::size_t v, k;
    double vals[6];
  };
  std::map<std::pair<int, std::size_t>, std::vector<Row>> grouped;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = path + ":" + std::to_string(i + 1);
    const auto f = text::split_csv(lines[i]);
    if (f.size() != 10) {
      throw DataError(where + ": expected 10 fields");
    }
    Row r{};
    const auto ep = static_cast<int>(text::parse_int(f[0], where));
    const auto start = static_cast<std::size_t>(text::parse_int(f[1], where));
    r.v = static_cast<std::size_t>(text::parse_int(f[2], where));
    r.k = static_cast<std::size_t>(text::parse_int(f[3], where));
    for (int c = 0; c < 6; ++c) r.vals[c] = text::parse_double(f[static_cast<std::size_t>(4 + c)], where);
    grouped[{ep, start}].push_back(r);
  }
  std::vector<std::pair<std::pair<int, std::size_t>, PredictionBatch>> out;
  for (auto & [key, rows] : grouped) {
    std::size_t n = 0;
    std::size_t steps = 0;
    for (const auto & r : rows) {
      n = std::max(n, r.v + 1);
      steps = std::max(steps, r.k + 1);
    }
    if (rows.size() != n * steps) {
      throw DataError(path + ": incomplete prediction for window " + std::to_string(key.first) + "/" + std::to_string(key.second));
    }
    PredictionBatch b;
    b.point = TrajectorySet(n, steps);
    b.lower = TrajectorySet(n, steps);
    b.upper = TrajectorySet(n, steps);
    for (const auto & r : rows) {
      b.point.x(r.v, r.k) = r.vals[0];
      b.point.y(r.v, r.k) = r.vals[1];
      b.lower.x(r.v, r.k) = r.vals[2];
      b.lower.y(r.v, r.k) = r.vals[3];
      b.upper.x(r.v, r.k) = r.vals[4];
      b.upper.y(r.v, r.k) = r.vals[5];
    }
    out.emplace_back(key, std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate(
  const TrajectoryDataset & dataset, const SplitPredictions & test, std::span<const WarningEvent> events,
  std::span<const double> latency_ms)
{
  EvalReport r;
  std::vector<Episode> eps;
  for (std::size_t e : dataset.episodes_in(Split::kTest)) eps.push_back(dataset.episodes[e]);
  r.episodes = eps.size();
  r.windows = test.refs.size();
  if (!test.predictions.empty()) {
    std::vector<TrajectorySet> points;
    points.reserve(test.predictions.size());
    for (const auto & p : test.predictions) points.push_back(p.point);
    r.ade = mean_ade(points, test.truths);
    r.fde = mean_fde(points, test.truths);
    r.collision_rate = collision_rate(points);
    const auto cov = trajectory_coverage(test.predictions, test.truths);
    r.coverage = cov.overall.coverage;
    r.mean_width = cov.overall.mean_width;
  }
  if (!eps.empty()) {
    r.classification = classification_metrics(events, eps);
    r.lead_time = awlt(events, eps);
  }
  if (!latency_ms.empty()) {
    std::vector<double> lat(latency_ms.begin(), latency_ms.end());
    r.latency_p50_ms = percentile(lat, 0.5);
    r.latency_p90_ms = percentile(lat, 0.9);
    r.latency_p99_ms = percentile(lat, 0.99);
  }
  return r;
}

EvalReport cmd_eval(const RunConfig & config, const std::string & dataset_dir, const std::string & run_dir)
{
  const LoadedDataset data = load_dataset(dataset_dir, config);
  const auto events = read_event_log(dir_file(run_dir, kEventFile));
  const auto dumped = read_predictions(dir_file(run_dir, kPredictionFile));

  SplitPredictions test;
  test.refs = data.dataset.windows(Split::kTest);
  std::map<std::pair<int, std::size_t>, const PredictionBatch *> by_key;
  for (const auto & [key, batch] : dumped) {
    by_key[key] = &batch;
  }
  for (const auto & ref : test.refs) {
    const int id = data.dataset.episodes[ref.episode].id;
    const auto it = by_key.find({id, ref.start});
    if (it == by_key.end()) {
      throw DataError("eval: predictions missing for test window " + std::to_string(id) + "/" + std::to_string(ref.start));
    }
    Window w = data.dataset.window(ref);
    if (it->second->point.vehicles() != w.future.vehicles() || it->second->point.steps() != w.future.steps()) {
      throw DimensionError("eval: prediction shape differs from the dataset window");
    }
    test.predictions.push_back(*it->second);
    test.truths.push_back(std::move(w.future));
  }

  std::vector<double> latency;
  const std::string timing_path = dir_file(run_dir, kTimingFile);
  if (fs::exists(timing_path)) {
    try {
      std::string body;
      for (const auto & l : text::read_lines(timing_path)) body += l;
      latency = Json::parse(body).at("latency_ms").get<std::vector<double>>();
    } catch (const Json::exception & e) {
      throw DataError(timing_path + ": " + e.what());
    }
  }
  EvalReport r = evaluate(data.dataset, test, events, latency);
  r.label = config.ablations.any() ? config.ablations.to_string() : "full";
  return r;
}

// ---------------------------------------------------------------------------
// Scaling benchmark

SceneFrame constant_density_scene(std::size_t n, double spacing, std::uint64_t seed)
{
  constexpr std::size_t kLanes = 4;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.15 * spacing, 0.15 * spacing);
  std::uniform_real_distribution<double> speed(18.0, 22.0);
  SceneFrame f;
  for (std::size_t i = 0; i < n; ++i) {
    VehicleObservation v;
    v.x = static_cast<double>(i / kLanes) * spacing + jitter(rng);
    v.y = static_cast<double>(i % kLanes) * kLaneWidth;
    v.vx = speed(rng);
    f.ids.push_back(static_cast<int>(i));
    f.vehicles.push_back(v);
  }
  return f;
}

double linear_fit_r2(std::span<const double> x, std::span<const double> y)
{
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("linear_fit_r2: need at least two paired samples");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0.0) {
    return 1.0;
  }
  if (sxx == 0.0) {
    return 0.0;
  }
  return sxy * sxy / (sxx * syy);
}

BenchReport run_bench(const HstanModel & model, std::span<const std::size_t> sizes, std::size_t repeats)
{
  const HstanConfig & c = model.config();
  const auto gat = model.gat_params();
  BenchReport report;
  for (std::size_t n : sizes) {
    ScalingPoint pt;
    pt.vehicles = n;
    const SceneFrame scene = constant_density_scene(n, 25.0, 1000 + n);
    const AdjacencyMatrix adj = build_adjacency(scene, c.radius);
    pt.edges = adj.edge_count();

    // Count attention scores by running the spatial stack on this scene.
    if (!gat.empty()) {
      const Tensor2D x = normalized_features(scene, scene_origin(std::span(&scene, 1)), c);
      ad::Tape tape(false);
      Tensor2D h = embed_features(
                     tape.constant(x), tape.constant(model.params().at("embed.weight").value),
                     tape.constant(model.params().at("embed.bias").value))
                     .value();
      for (const auto & layer : gat) {
        h = gat_layer_forward(h, adj, layer, &pt.score_evaluations);
      }
      std::size_t heads = 0;
      for (const auto & layer : gat) heads += layer.heads.size();
      pt.all_pairs = n * n * heads;
    }

    // Latency of a full forward on a T-frame window advected at constant velocity.
    std::vector<SceneFrame> history(c.obs_steps, scene);
    for (std::size_t t = 0; t < c.obs_steps; ++t) {
      history[t].timestamp = static_cast<double>(t) * c.dt;
      for (auto & v : history[t].vehicles) v.x += v.vx * static_cast<double>(t) * c.dt;
    }
    std::vector<double> lat;
    for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto out = hstan_forward(history, model);
      const auto t1 = std::chrono::steady_clock::now();
      if (out.prediction.point.vehicles() != n) {
        throw EvaluationError("bench: forward returned the wrong vehicle count");
      }
      lat.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    pt.latency_p50_ms = percentile(lat, 0.5);
    pt.latency_p90_ms = percentile(lat, 0.9);
    pt.latency_p99_ms = percentile(lat, 0.99);
    report.points.push_back(pt);
  }
  if (report.points.size() >= 2) {
    std::vector<double> ns;
    std::vector<double> n2;
    std::vector<double> scores;
    std::vector<double> pairs;
    for (const auto & p : report.points) {
      ns.push_back(static_cast<double>(p.vehicles));
      n2.push_back(static_cast<double>(p.vehicles * p.vehicles));
      scores.push_back(static_cast<double>(p.score_evaluations));
      pairs.push_back(static_cast<double>(p.all_pairs));
    }
    report.linear_r2 = linear_fit_r2(ns, scores);
    report.quadratic_r2 = linear_fit_r2(n2, pairs);
    report.all_pairs_linear_r2 = linear_fit_r2(ns, pairs);
  }
  return report;
}

std::string format_bench(const BenchReport & report)
{
  std::ostringstream os;
  os << "# scaling benchmark\n[metrics]\n";
  os << "score_linear_r2 = " << report.linear_r2 << "\n";
  os << "all_pairs_quadratic_r2 = " << report.quadratic_r2 << "\n";
  os << "all_pairs_linear_r2 = " << report.all_pairs_linear_r2 << "\n\n[table]\n";
  os << "N     edges   scores    all_pairs  p50_ms    p90_ms    p99_ms\n";
  for (const auto & p : report.points) {
    char line[160];
    std::snprintf(
      line, sizeof(line), "%-5zu %-7zu %-9zu %-10zu %-9.3f %-9.3f %-9.3f\n", p.vehicles, p.edges,
      p.score_evaluations, p.all_pairs, p.latency_p50_ms, p.latency_p90_ms, p.latency_p99_ms);
    os << line;
  }
  return os.str();
}

}  // namespace fcw
