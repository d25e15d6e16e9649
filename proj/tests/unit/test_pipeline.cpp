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

#include "fcw/checkpoint.hpp"
#include "fcw/error.hpp"
#include "fcw/pipeline.hpp"
#include "scenes.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace
{

fcw::RunConfig small_run()
{
  fcw::RunConfig c;
  c.model = scenes::tiny_config();
  c.data.families = {fcw::ScenarioFamily::kSuddenBraking, fcw::ScenarioFamily::kCutIn};
  c.data.episodes_per_family = 10;
  c.data.vehicle_count = 3;
  c.data.duration = 4.0;
  c.train.epochs = 3;
  c.train.batch_size = 16;
  c.train.learning_rate = 3e-3;
  return c;
}

std::string slurp(const fs::path & p)
{
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir
{
  fs::path path;
  explicit TempDir(const std::string & name) : path(fs::temp_directory_path() / ("fcw_test_" + name))
  {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string & leaf) const { return (path / leaf).string(); }
};

}  // namespace

TEST_SUITE("pipeline")
{
TEST_CASE("ablation switches parse and compose")
{
  const auto a = fcw::Ablations::parse("no_sam, fixed_threshold=0.8,no_cqr");
  CHECK(a.no_sam);
  CHECK(a.no_cqr);
  CHECK_FALSE(a.no_tam);
  CHECK(a.fixed_threshold == 0.8);
  CHECK(fcw::Ablations::parse(a.to_string()).to_string() == a.to_string());
  CHECK(fcw::Ablations::parse("fixed_threshold").fixed_threshold == 1.0);
  CHECK_FALSE(fcw::Ablations::parse("").any());
  CHECK_THROWS_AS(fcw::Ablations::parse("no_gat"), std::invalid_argument);
  CHECK_THROWS_AS(fcw::Ablations::parse("no_sam=1"), std::invalid_argument);

  fcw::RunConfig c = small_run();
  c.ablations = fcw::Ablations::parse("single_head,no_tam,no_collision_loss");
  const auto m = c.effective_model();
  CHECK(m.single_head);
  CHECK(m.no_tam);
  CHECK(m.collision_weight == 0.0);
  c.mode = fcw::DrivingMode::kHighway;
  CHECK(c.effective_risk().lambda == 2.6);
}

TEST_CASE("run config json round trip")
{
  fcw::RunConfig c = small_run();
  c.ablations = fcw::Ablations::parse("no_sam,fixed_threshold=0.7");
  c.mode = fcw::DrivingMode::kUrban;
  c.risk.tau = 1.5;
  const auto back = fcw::RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.model.sam_dim == 4);
  CHECK(back.risk.tau == 1.5);
  CHECK(back.ablations.fixed_threshold == 0.7);
  CHECK(back.data.families.size() == 2);
  CHECK_THROWS_AS(fcw::RunConfig::from_json(R"({"modle": {}})"), std::invalid_argument);
  CHECK_THROWS_AS(fcw::RunConfig::load("/nonexistent/run.json"), fcw::IoError);

  for (const char * name : {"default.json", "desk.json"}) {
    const auto path = fs::path(FCW_SOURCE_DIR) / "configs" / name;
    CHECK_NOTHROW(fcw::RunConfig::load(path.string()).validate());
  }
}

TEST_CASE("gen is deterministic and counts windows by formula")
{
  TempDir a("gen_a"), b("gen_b");
  const auto c = small_run();
  const auto s = fcw::cmd_gen(c, a.path.string());
  fcw::cmd_gen(c, b.path.string());
  CHECK(slurp(a.path / "trajectories.csv") == slurp(b.path / "trajectories.csv"));
  CHECK(slurp(a.path / "labels.csv") == slurp(b.path / "labels.csv"));
  CHECK(s.episodes == 20);
  const std::size_t frames = 40;
  CHECK(s.windows == 20 * (frames - c.model.obs_steps - c.model.pred_steps + 1));
  const auto loaded = fcw::load_dataset(a.path.string(), c);
  CHECK(loaded.dataset.episodes.size() == 20);
  CHECK(loaded.fingerprint == fcw::build_dataset(c).fingerprint);
  auto other = c;
  other.data.seed = 2;
  CHECK(fcw::build_dataset(other).fingerprint != loaded.fingerprint);
}

TEST_CASE("train with zero learning rate logs a flat loss")
{
  TempDir d("train_lr0");
  auto c = small_run();
  c.train.learning_rate = 0.0;
  fcw::cmd_gen(c, d.path.string());
  std::ostringstream log;
  const auto s = fcw::cmd_train(c, d.path.string(), d / "model.ckpt", {}, 0, &log);
  REQUIRE(s.history.size() == 3);
  for (const auto & e : s.history) CHECK(e.loss == doctest::Approx(s.history.front().loss).epsilon(1e-12));
  CHECK(log.str().find("epoch 3") != std::string::npos);
  const auto model = fcw::load_model(d / "model.ckpt");
  const fcw::HstanModel fresh(c.effective_model(), c.train.seed);
  for (const auto & [path, p] : fresh.params()) CHECK(model.params().at(path).value == p.value);
}

TEST_CASE("resumed training equals an uninterrupted run")
{
  TempDir d("train_resume");
  const auto c = small_run();
  fcw::cmd_gen(c, d.path.string());
  fcw::cmd_train(c, d.path.string(), d / "full.ckpt");
  const auto part = fcw::cmd_train(c, d.path.string(), d / "part.ckpt", {}, 1);
  CHECK(part.epochs_completed == 1);
  fcw::cmd_train(c, d.path.string(), d / "resumed.ckpt", d / "part.ckpt");
  CHECK(slurp(d.path / "full.ckpt") == slurp(d.path / "resumed.ckpt"));
  fcw::cmd_train(c, d.path.string(), d / "again.ckpt");
  CHECK(slurp(d.path / "full.ckpt") == slurp(d.path / "again.ckpt"));

  auto other = c;
  other.model.sam_dim = 6;
  CHECK_THROWS_AS(fcw::cmd_train(other, d.path.string(), d / "x.ckpt", d / "part.ckpt"), fcw::DataError);
  CHECK_THROWS_AS(fcw::load_model(d / "missing.ckpt"), fcw::IoError);
}

TEST_CASE("calibrate is monotone in alpha and rejects an empty split")
{
  TempDir d("calibrate");
  const auto c = small_run();
  fcw::cmd_gen(c, d.path.string());
  fcw::cmd_train(c, d.path.string(), d / "m.ckpt");
  std::vector<double> prev;
  for (double alpha : {0.05, 0.1, 0.2, 0.3}) {
    const auto s = fcw::cmd_calibrate(c, d / "m.ckpt", d.path.string(), alpha, d / "cal.json");
    CHECK(s.corrected_calibration.coverage >= 1.0 - alpha);
    const auto q = fcw::read_correction(d / "cal.json").q_hat;
    REQUIRE(q.size() == 2 * c.model.pred_steps);
    for (std::size_t i = 0; i < prev.size(); ++i) CHECK(q[i] <= prev[i]);
    prev = q;
  }

  TempDir e("calibrate_empty");
  auto tiny = c;
  tiny.data.families = {fcw::ScenarioFamily::kSuddenBraking};
  tiny.data.episodes_per_family = 2;
  fcw::cmd_gen(tiny, e.path.string());
  fcw::cmd_train(tiny, e.path.string(), e / "m.ckpt");
  CHECK_THROWS_AS(fcw::cmd_calibrate(tiny, e / "m.ckpt", e.path.string(), 0.1, e / "cal.json"), fcw::DataError);
}

TEST_CASE("warn, eval and their switches")
{
  TempDir d("warn");
  const auto c = small_run();
  fcw::cmd_gen(c, d.path.string());
  fcw::cmd_train(c, d.path.string(), d / "m.ckpt");
  fcw::cmd_calibrate(c, d / "m.ckpt", d.path.string(), 0.1, d / "cal.json");
  const auto w = fcw::cmd_warn(c, d / "m.ckpt", d / "cal.json", d.path.string(), d / "run");
  CHECK(w.events > 0);
  fcw::cmd_warn(c, d / "m.ckpt", d / "cal.json", d.path.string(), d / "run2");
  CHECK(slurp(d.path / "run" / "events.csv") == slurp(d.path / "run2" / "events.csv"));
  CHECK(slurp(d.path / "run" / "predictions.csv") == slurp(d.path / "run2" / "predictions.csv"));
  const auto report = fcw::cmd_eval(c, d.path.string(), d / "run");
  CHECK(report.label == "full");
  CHECK(report.windows > 0);
  CHECK(report.classification.counts.total() == report.episodes);
  CHECK(report.coverage > 0.0);

  const auto base = fcw::cmd_warn(c, {}, {}, d.path.string(), d / "cv", true);
  CHECK(base.events == w.events);
  CHECK(fcw::cmd_eval(c, d.path.string(), d / "cv").ade > 0.0);
  CHECK_THROWS_AS(fcw::cmd_warn(c, {}, {}, d.path.string(), d / "bad"), std::invalid_argument);

  const auto data = fcw::load_dataset(d.path.string(), c);
  const auto model = fcw::load_model(d / "m.ckpt");
  const auto corr = fcw::read_correction(d / "cal.json");
  const auto test = data.dataset.episodes_in(fcw::Split::kTest);

  auto fixed = c;
  fixed.ablations = fcw::Ablations::parse("fixed_threshold=0.6");
  const auto fx = fcw::run_warnings(fcw::hstan_predictor(model), data.dataset, test, &corr, fixed);
  for (const auto & e : fx.events) {
    CHECK(e.threshold == 0.6);
    CHECK(e.triggered == (e.terms.total > 0.6));
  }

  // Without CQR the uncertainty factor drops out: same as zero-width intervals.
  auto plain = c;
  plain.ablations = fcw::Ablations::parse("no_cqr");
  const auto nc = fcw::run_warnings(fcw::hstan_predictor(model), data.dataset, test, &corr, plain);
  const fcw::Predictor collapsed = [&](std::span<const std::vector<fcw::SceneFrame>> h) {
    auto out = fcw::hstan_predict(h, model);
    for (auto & p : out) p.lower = p.upper = p.point;
    return out;
  };
  const auto zero = fcw::run_warnings(collapsed, data.dataset, test, nullptr, c);
  REQUIRE(nc.events.size() == zero.events.size());
  for (std::size_t i = 0; i < nc.events.size(); ++i) {
    CHECK(nc.events[i].terms.total == zero.events[i].terms.total);
    CHECK(nc.events[i].triggered == zero.events[i].triggered);
  }
}

TEST_CASE("eval joins predictions by episode id, not position")
{
  TempDir d("ids");
  const auto c = small_run();
  auto eps = fcw::build_dataset(c).dataset.episodes;
  std::reverse(eps.begin(), eps.end());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i].id = 500 + 3 * static_cast<int>(i);
  fcw::write_trajectories(d / "trajectories.csv", eps);
  fcw::write_labels(d / "labels.csv", eps);
  fcw::cmd_train(c, d.path.string(), d / "m.ckpt");
  fcw::cmd_warn(c, d / "m.ckpt", {}, d.path.string(), d / "run");
  const auto dumped = fcw::read_predictions(d / "run/predictions.csv");
  REQUIRE_FALSE(dumped.empty());
  for (const auto & [key, batch] : dumped) CHECK(key.first >= 500);
  const auto r = fcw::cmd_eval(c, d.path.string(), d / "run");
  CHECK(r.windows == fcw::load_dataset(d.path.string(), c).dataset.windows(fcw::Split::kTest).size());
}

TEST_CASE("perfect predictions and oracle warnings give a perfect report")
{
  const auto c = small_run();
  const auto data = fcw::build_dataset(c).dataset;
  fcw::SplitPredictions test;
  test.refs = data.windows(fcw::Split::kTest);
  for (const auto & ref : test.refs) {
    const auto w = data.window(ref);
    test.predictions.push_back({w.future, w.future, w.future, true});
    test.truths.push_back(w.future);
  }
  std::vector<fcw::WarningEvent> events;
  std::size_t danger = 0;
  for (auto e : data.episodes_in(fcw::Split::kTest)) {
    const auto & ep = data.episodes[e];
    if (!ep.label.danger) continue;
    ++danger;
    fcw::WarningEvent ev;
    ev.episode_id = ep.id;
    ev.time = *ep.label.contact_time - 1.0;
    ev.triggered = true;
    events.push_back(ev);
  }
  const auto r = fcw::evaluate(data, test, events, {});
  CHECK(r.ade == 0.0);
  CHECK(r.coverage == 1.0);
  if (danger > 0) {
    CHECK(r.classification.f1 == 1.0);
    REQUIRE(r.lead_time);
    CHECK(r.lead_time->mean == doctest::Approx(1.0));
  }
  CHECK(r.classification.fpr == 0.0);
}

TEST_CASE("bench handles a single vehicle and counts edges")
{
  auto cfg = scenes::tiny_config();
  cfg.radius = 30.0;
  const fcw::HstanModel model(cfg, 1);
  const std::vector<std::size_t> one{1};
  const auto r1 = fcw::run_bench(model, one, 2);
  REQUIRE(r1.points.size() == 1);
  CHECK(r1.points[0].edges == 1);
  CHECK(r1.points[0].score_evaluations == cfg.gat_layers * cfg.gat_heads);

  const std::vector<std::size_t> grid{10, 20, 40, 80};
  const auto r = fcw::run_bench(model, grid, 1);
  for (const auto & p : r.points) {
    CHECK(p.score_evaluations == p.edges * cfg.gat_layers * cfg.gat_heads);
    CHECK(p.all_pairs == p.vehicles * p.vehicles * cfg.gat_layers * cfg.gat_heads);
  }
  CHECK(r.linear_r2 > 0.99);
  CHECK(fcw::format_bench(r).find("80") != std::string::npos);

  const std::vector<double> x{1, 2, 3, 4}, y{3, 5, 7, 9};
  CHECK(fcw::linear_fit_r2(x, y) == doctest::Approx(1.0));
}
}
