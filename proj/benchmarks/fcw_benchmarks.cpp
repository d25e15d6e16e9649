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
#include "fcw/drta.hpp"
#include "fcw/hstan.hpp"
#include "fcw/pipeline.hpp"
#include "fcw/scene_graph.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace
{

std::vector<fcw::SceneFrame> history_of(std::size_t n, std::size_t steps)
{
  const fcw::SceneFrame base = fcw::constant_density_scene(n, 10.0, 3);
  std::vector<fcw::SceneFrame> out;
  for (std::size_t f = 0; f < steps; ++f) {
    fcw::SceneFrame frame = base;
    frame.timestamp = 0.1 * static_cast<double>(f);
    for (auto & v : frame.vehicles) {
      v.x += v.vx * frame.timestamp;
      v.y += v.vy * frame.timestamp;
    }
    out.push_back(frame);
  }
  return out;
}

// One value-level GAT layer at constant vehicle density.
void BM_GatLayer(benchmark::State & state)
{
  const auto n = static_cast<std::size_t>(state.range(0));
  const fcw::HstanModel model(fcw::HstanConfig::desk_scale(), 1);
  const auto & c = model.config();
  const fcw::SceneFrame frame = fcw::constant_density_scene(n, 10.0, 3);
  const auto adjacency = fcw::build_adjacency(frame, c.radius);
  const auto layer = model.gat_params().front();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  fcw::Tensor2D h(n, c.sam_dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c.sam_dim; ++j) h(i, j) = g(rng);
  std::size_t scores = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fcw::gat_layer_forward(h, adjacency, layer, &scores));
  }
  state.counters["vehicles"] = static_cast<double>(n);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_GatLayer)->Arg(10)->Arg(20)->Arg(40)->Arg(80)->Arg(120)->Complexity();

// Full forward pass of the desk-scale model on one window.
void BM_HstanForward(benchmark::State & state)
{
  const auto n = static_cast<std::size_t>(state.range(0));
  const fcw::HstanModel model(fcw::HstanConfig::desk_scale(), 1);
  const auto history = history_of(n, model.config().obs_steps);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fcw::hstan_forward(history, model));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_HstanForward)->Arg(4)->Arg(10)->Arg(20)->Arg(40)->Complexity();

// Risk fusion plus threshold update for one tracked vehicle.
void BM_RiskStep(benchmark::State & state)
{
  fcw::RiskTrack track(fcw::RiskWeights{});
  fcw::RiskInputs in;
  in.d_min = 12.0;
  in.ttc = 3.0;
  in.sigma_pred = 0.4;
  in.v_rel = 2.0;
  in.a_rel = 0.5;
  in.kappa = 0.01;
  in.v_ego = 20.0;
  for (auto _ : state) {
    in.d_min = in.d_min > 2.0 ? in.d_min - 0.01 : 12.0;
    benchmark::DoNotOptimize(track.step(in));
  }
}
BENCHMARK(BM_RiskStep);

// Conformal quantile over n calibration scores.
void BM_ConformalQuantile(benchmark::State & state)
{
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> scores(static_cast<std::size_t>(state.range(0)));
  for (auto & s : scores) s = g(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fcw::conformal_quantile(scores, 0.1));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ConformalQuantile)->Range(256, 65536)->Complexity();

}  // namespace

BENCHMARK_MAIN();
