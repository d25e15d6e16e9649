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

#include "fcw/error.hpp"
#include "fcw/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace
{

fcw::TrajectorySet random_set(std::size_t n, std::size_t steps, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  fcw::TrajectorySet t(n, steps);
  for (double & v : t.values()) v = u(rng);
  return t;
}

fcw::Episode labelled(int id, bool danger, std::optional<double> contact = std::nullopt)
{
  fcw::Episode e;
  e.id = id;
  e.label = {danger, contact};
  return e;
}

fcw::WarningEvent warning(int episode, double time, bool triggered = true)
{
  fcw::WarningEvent e;
  e.episode_id = episode;
  e.time = time;
  e.triggered = triggered;
  return e;
}

}  // namespace

TEST_SUITE("metrics")
{
TEST_CASE("displacement error examples")
{
  std::mt19937_64 rng(90);
  const auto truth = random_set(3, 5, rng);
  CHECK(fcw::ade(truth, truth) == 0.0);
  CHECK(fcw::fde(truth, truth) == 0.0);
  auto off = truth;
  for (std::size_t v = 0; v < 3; ++v)
    for (std::size_t k = 0; k < 5; ++k) {
      off.x(v, k) += 3.0;
      off.y(v, k) += 4.0;
    }
  CHECK(fcw::ade(off, truth) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(fcw::fde(off, truth) == doctest::Approx(5.0).epsilon(1e-12));

  const auto one = random_set(4, 1, rng), other = random_set(4, 1, rng);
  CHECK(fcw::ade(one, other) == fcw::fde(one, other));

  auto grow = truth;
  for (std::size_t v = 0; v < 3; ++v)
    for (std::size_t k = 0; k < 5; ++k) grow.x(v, k) += 0.5 * static_cast<double>(k + 1);
  CHECK(fcw::fde(grow, truth) > fcw::ade(grow, truth));
  CHECK_THROWS_AS(fcw::ade(truth, random_set(3, 4, rng)), fcw::DimensionError);
}

TEST_CASE("displacement error properties")
{
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> shift(-1e3, 1e3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 4, steps = 1 + trial % 7;
    const auto p = random_set(n, steps, rng), t = random_set(n, steps, rng);
    double worst = 0.0;
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t k = 0; k < steps; ++k) worst = std::max(worst, std::hypot(p.x(v, k) - t.x(v, k), p.y(v, k) - t.y(v, k)));
    CHECK(fcw::ade(p, t) <= worst + 1e-12);
    CHECK(fcw::fde(p, t) <= worst + 1e-12);
    auto pm = p, tm = t;
    const double dx = shift(rng), dy = shift(rng);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t k = 0; k < steps; ++k) {
        pm.x(v, k) += dx;
        tm.x(v, k) += dx;
        pm.y(v, k) += dy;
        tm.y(v, k) += dy;
      }
    CHECK(fcw::ade(pm, tm) == doctest::Approx(fcw::ade(p, t)).epsilon(1e-9));
    CHECK(fcw::fde(pm, tm) == doctest::Approx(fcw::fde(p, t)).epsilon(1e-9));
  }
}

TEST_CASE("pooled errors do not depend on window order")
{
  std::mt19937_64 rng(92);
  std::vector<fcw::TrajectorySet> p, t;
  for (int i = 0; i < 300; ++i) {
    p.push_back(random_set(3, 6, rng));
    t.push_back(random_set(3, 6, rng));
  }
  const double a = fcw::mean_ade(p, t);
  std::vector<std::size_t> idx(p.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<fcw::TrajectorySet> ps, ts;
  for (auto i : idx) {
    ps.push_back(p[i]);
    ts.push_back(t[i]);
  }
  CHECK(std::abs(fcw::mean_ade(ps, ts) - a) <= 1e-14 * a);
  CHECK(std::abs(fcw::mean_fde(ps, ts) - fcw::mean_fde(p, t)) <= 1e-14 * a);

  fcw::KahanSum k;
  k.add(1.0);
  for (int i = 0; i < 1000; ++i) k.add(1e-16);
  CHECK(k.value() == doctest::Approx(1.0 + 1e-13).epsilon(1e-15));
}

TEST_CASE("collision rate examples and exhaustive scan")
{
  std::mt19937_64 rng(93);
  const std::vector<fcw::TrajectorySet> single{random_set(1, 5, rng)};
  CHECK(fcw::collision_rate(single) == 0.0);
  fcw::TrajectorySet same(2, 3);
  CHECK(fcw::collision_rate(std::vector<fcw::TrajectorySet>{same}) == 1.0);
  CHECK_THROWS_AS(fcw::collision_rate(single, 0.0), std::invalid_argument);

  std::vector<fcw::TrajectorySet> sets;
  std::size_t hits = 0;
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int i = 0; i < 400; ++i) {
    fcw::TrajectorySet t(3, 4);
    for (double & v : t.values()) v = u(rng);
    bool hit = false;
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b)
          if (a != b && std::hypot(t.x(a, k) - t.x(b, k), t.y(a, k) - t.y(b, k)) < 2.0) hit = true;
    hits += hit;
    sets.push_back(t);
  }
  CHECK(fcw::collision_rate(sets, 2.0) == static_cast<double>(hits) / 400.0);
}

TEST_CASE("confusion examples")
{
  const std::vector<fcw::Episode> eps{
    labelled(0, true, 3.0), labelled(1, false), labelled(2, true, 2.0), labelled(3, false)};
  // TP: warned before contact. FP: warned while safe. FN: warned after
  // contact. TN: silent and safe.
  const std::vector<fcw::WarningEvent> ev{
    warning(0, 1.0), warning(1, 0.5), warning(2, 2.5), warning(3, 0.2, false)};
  const auto m = fcw::classification_metrics(ev, eps);
  CHECK(m.counts == fcw::ConfusionCounts{1, 1, 1, 1});
  for (double r : {m.precision, m.recall, m.f1, m.fpr, m.fnr}) CHECK(r == 0.5);

  const auto perfect = fcw::rates_from_counts({5, 0, 7, 0});
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.fpr == 0.0);
  const auto pr = fcw::rates_from_counts({6, 2, 1, 2});
  CHECK(pr.precision == pr.recall);
  CHECK(pr.f1 == doctest::Approx(pr.precision).epsilon(1e-15));
  CHECK(std::isnan(fcw::rates_from_counts({0, 0, 3, 0}).precision));
  CHECK_THROWS_AS(fcw::classification_metrics(ev, std::vector<fcw::Episode>{}), fcw::DataError);
}

TEST_CASE("lead time examples")
{
  const std::vector<fcw::Episode> one{labelled(0, true, 3.8)};
  const auto a = fcw::awlt(std::vector<fcw::WarningEvent>{warning(0, 1.0), warning(0, 2.0)}, one);
  REQUIRE(a);
  CHECK(a->mean == doctest::Approx(2.8).epsilon(1e-15));
  CHECK(a->count == 1);
  CHECK(a->stddev == 0.0);

  const std::vector<fcw::Episode> two{labelled(0, true, 5.0), labelled(1, true, 6.0)};
  const auto b = fcw::awlt(std::vector<fcw::WarningEvent>{warning(0, 3.0), warning(1, 2.0)}, two);
  REQUIRE(b);
  CHECK(b->mean == 3.0);
  CHECK(b->stddev == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  // A warning after contact is a miss and contributes no lead.
  CHECK_FALSE(fcw::awlt(std::vector<fcw::WarningEvent>{warning(0, 4.0)}, one));
  CHECK(fcw::percentile({4.0, 1.0, 2.0, 3.0}, 0.5) == 2.5);
  CHECK(fcw::percentile({1.0, 2.0}, 0.05) == doctest::Approx(1.05));
  CHECK_THROWS_AS(fcw::percentile({}, 0.5), fcw::DataError);
}

TEST_CASE("rates match a brute-force recount from raw logs")
{
  std::mt19937_64 rng(94);
  std::uniform_real_distribution<double> t(0.0, 10.0);
  std::bernoulli_distribution coin(0.5), sparse(0.1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<fcw::Episode> eps;
    std::vector<fcw::WarningEvent> ev;
    for (int id = 0; id < 30; ++id) {
      const bool danger = coin(rng);
      eps.push_back(labelled(id, danger, danger ? std::optional<double>(t(rng)) : std::nullopt));
      for (int tick = 0; tick < 100; ++tick) ev.push_back(warning(id, 0.1 * tick, sparse(rng)));
    }
    std::shuffle(ev.begin(), ev.end(), rng);
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::vector<double> leads;
    for (const auto & e : eps) {
      double first = 1e18;
      for (const auto & w : ev)
        if (w.episode_id == e.id && w.triggered && (!e.label.danger || w.time < *e.label.contact_time))
          first = std::min(first, w.time);
      const bool warned = first < 1e18;
      if (e.label.danger) {
        warned ? ++tp : ++fn;
        if (warned) leads.push_back(*e.label.contact_time - first);
      } else {
        warned ? ++fp : ++tn;
      }
    }
    const auto m = fcw::classification_metrics(ev, eps);
    CHECK(m.counts == fcw::ConfusionCounts{tp, fp, tn, fn});
    if (tp + fp > 0) CHECK(m.precision == doctest::Approx(static_cast<double>(tp) / static_cast<double>(tp + fp)).epsilon(1e-15));
    CHECK(m.recall == doctest::Approx(static_cast<double>(tp) / static_cast<double>(tp + fn)).epsilon(1e-15));
    const auto lt = fcw::awlt(ev, eps);
    REQUIRE(lt.has_value() == !leads.empty());
    if (lt) {
      double mean = 0.0;
      for (double l : leads) mean += l / static_cast<double>(leads.size());
      CHECK(lt->mean == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("report round trip")
{
  fcw::EvalReport r;
  r.label = "full";
  r.episodes = 12;
  r.ade = 0.1 / 3.0;
  r.classification = fcw::rates_from_counts({3, 1, 6, 2});
  r.lead_time = fcw::LeadTimeStats{3, 2.5, 0.25, 2.1};
  r.coverage = 0.913;
  const auto text = fcw::format_report(r);
  CHECK(text.find("[table]") != std::string::npos);
  const auto back = fcw::parse_report(text);
  CHECK(back.at("ade_m") == r.ade);
  CHECK(back.at("tp") == 3.0);
  CHECK(back.at("awlt_mean_s") == 2.5);
  CHECK(back.at("coverage") == 0.913);
  CHECK(back.size() == r.entries().size());
  fcw::EvalReport none;
  CHECK(std::isnan(fcw::parse_report(fcw::format_report(none)).at("awlt_mean_s")));
  CHECK_THROWS_AS(fcw::parse_report("hello"), fcw::DataError);
  CHECK(fcw::format_comparison(back, r, "reference").find("ade_m") != std::string::npos);
}
}
