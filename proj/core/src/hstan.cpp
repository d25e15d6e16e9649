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

#include "fcw/hstan.hpp"

#include "fcw/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fcw
{

using ad::Var;
using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void HstanConfig::validate() const
{
  auto fail = [](const std::string & what) { throw std::invalid_argument("HstanConfig: " + what); };
  if (feature_dim != kFeatureDim) fail("feature_dim must be " + std::to_string(kFeatureDim));
  if (sam_dim == 0) fail("sam_dim must be positive");
  if (!no_sam) {
    if (gat_layers == 0) fail("gat_layers must be positive");
    if (effective_gat_heads() == 0) fail("gat_heads must be positive");
    if (gat_layers > 1 && sam_dim % effective_gat_heads() != 0) {
      fail("sam_dim must be divisible by gat_heads");
    }
  }
  if (!(radius > 0.0)) fail("radius must be positive");
  if (gru_hidden == 0) fail("gru_hidden must be positive");
  if (!no_tam) {
    if (gru_layers == 0) fail("gru_layers must be positive");
    if (effective_attention_heads() == 0 || gru_hidden % effective_attention_heads() != 0) {
      fail("gru_hidden must be divisible by attention_heads");
    }
  }
  if (obs_steps < 1) fail("obs_steps must be >= 1");
  if (pred_steps < 1) fail("pred_steps must be >= 1");
  if (!(dt > 0.0)) fail("dt must be positive");
  for (std::size_t h : decoder_hidden) {
    if (h == 0) fail("decoder hidden sizes must be positive");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (pinball_weight < 0.0 || collision_weight < 0.0) fail("loss weights must be non-negative");
  if (!(collision_radius > 0.0)) fail("collision_radius must be positive");
  for (double s : {position_scale, velocity_scale, accel_scale, size_scale, output_scale}) {
    if (!(s > 0.0)) fail("scales must be positive");
  }
}

HstanConfig HstanConfig::desk_scale()
{
  HstanConfig c;
  c.sam_dim = 16;
  c.gat_heads = 2;
  c.gat_layers = 2;
  c.gru_hidden = 32;
  c.gru_layers = 1;
  c.attention_heads = 2;
  c.decoder_hidden = {64, 64};
  return c;
}

namespace
{

Json config_to_json(const HstanConfig & c)
{
  return Json{
    {"feature_dim", c.feature_dim},
    {"sam_dim", c.sam_dim},
    {"gat_heads", c.gat_heads},
    {"gat_layers", c.gat_layers},
    {"radius", c.radius},
    {"gru_hidden", c.gru_hidden},
    {"gru_layers", c.gru_layers},
    {"attention_heads", c.attention_heads},
    {"obs_steps", c.obs_steps},
    {"pred_steps", c.pred_steps},
    {"dt", c.dt},
    {"decoder_hidden", c.decoder_hidden},
    {"alpha", c.alpha},
    {"pinball_weight", c.pinball_weight},
    {"collision_weight", c.collision_weight},
    {"collision_radius", c.collision_radius},
    {"position_scale", c.position_scale},
    {"velocity_scale", c.velocity_scale},
    {"accel_scale", c.accel_scale},
    {"size_scale", c.size_scale},
    {"output_scale", c.output_scale},
    {"no_sam", c.no_sam},
    {"no_tam", c.no_tam},
    {"single_head", c.single_head},
  };
}

}  // namespace

std::string HstanConfig::to_json() const
{
  return config_to_json(*this).dump();
}

HstanConfig HstanConfig::from_json(const std::string & text)
{
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception & e) {
    throw std::invalid_argument(std::string("HstanConfig: bad JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw std::invalid_argument("HstanConfig: expected a JSON object");
  }
  HstanConfig c;
  const Json known = config_to_json(c);
  for (const auto & [key, value] : j.items()) {
    if (!known.contains(key)) {
      throw std::invalid_argument("HstanConfig: unknown key '" + key + "'");
    }
  }
  try {
    auto get = [&j](const char * key, auto & field) {
      if (j.contains(key)) {
        j.at(key).get_to(field);
      }
    };
    get("feature_dim", c.feature_dim);
    get("sam_dim", c.sam_dim);
    get("gat_heads", c.gat_heads);
    get("gat_layers", c.gat_layers);
    get("radius", c.radius);
    get("gru_hidden", c.gru_hidden);
    get("gru_layers", c.gru_layers);
    get("attention_heads", c.attention_heads);
    get("obs_steps", c.obs_steps);
    get("pred_steps", c.pred_steps);
    get("dt", c.dt);
    get("decoder_hidden", c.decoder_hidden);
    get("alpha", c.alpha);
    get("pinball_weight", c.pinball_weight);
    get("collision_weight", c.collision_weight);
    get("collision_radius", c.collision_radius);
    get("position_scale", c.position_scale);
    get("velocity_scale", c.velocity_scale);
    get("accel_scale", c.accel_scale);
    get("size_scale", c.size_scale);
    get("output_scale", c.output_scale);
    get("no_sam", c.no_sam);
    get("no_tam", c.no_tam);
    get("single_head", c.single_head);
  } catch (const Json::exception & e) {
    throw std::invalid_argument(std::string("HstanConfig: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace
{

struct ShapeSpec
{
  std::string path;
  std::size_t rows;
  std::size_t cols;
  bool bias;
};

std::string gat_path(std::size_t layer, std::size_t head, const char * leaf)
{
  return "gat." + std::to_string(layer) + ".head." + std::to_string(head) + "." + leaf;
}

std::string gru_path(std::size_t layer, const char * leaf)
{
  return "gru." + std::to_string(layer) + "." + leaf;
}

std::string dec_path(const std::string & head, std::size_t layer, const char * leaf)
{
  return "decoder." + head + "." + std::to_string(layer) + "." + leaf;
}

constexpr const char * kHeads[] = {"point", "lower", "upper"};

std::size_t gat_head_dim(const HstanConfig & c, std::size_t layer)
{
  const bool last = layer + 1 == c.gat_layers;
  return last ? c.sam_dim : c.sam_dim / c.effective_gat_heads();
}

/// Parameter layout in initialisation order.
std::vector<ShapeSpec> layout(const HstanConfig & c)
{
  std::vector<ShapeSpec> out;
  const std::size_t d = c.sam_dim;
  const std::size_t h = c.gru_hidden;
  out.push_back({"embed.weight", c.feature_dim, d, false});
  out.push_back({"embed.bias", 1, d, true});
  if (!c.no_sam) {
    for (std::size_t l = 0; l < c.gat_layers; ++l) {
      const std::size_t hd = gat_head_dim(c, l);
      for (std::size_t k = 0; k < c.effective_gat_heads(); ++k) {
        out.push_back({gat_path(l, k, "transform"), d, hd, false});
        out.push_back({gat_path(l, k, "attention"), 2 * hd, 1, false});
      }
    }
  }
  out.push_back({"bridge.weight", d, h, false});
  out.push_back({"bridge.bias", 1, h, true});
  if (!c.no_tam) {
    for (std::size_t l = 0; l < c.gru_layers; ++l) {
      for (const char * g : {"w_z", "w_r", "w_h"}) out.push_back({gru_path(l, g), h, h, false});
      for (const char * g : {"u_z", "u_r", "u_h"}) out.push_back({gru_path(l, g), h, h, false});
      for (const char * g : {"b_z", "b_r", "b_h"}) out.push_back({gru_path(l, g), 1, h, true});
    }
    for (const char * w : {"mha.w_q", "mha.w_k", "mha.w_v", "mha.w_o"}) out.push_back({w, h, h, false});
  }
  for (const char * head : kHeads) {
    std::size_t in = h;
    for (std::size_t i = 0; i <= c.decoder_hidden.size(); ++i) {
      const std::size_t width = i < c.decoder_hidden.size() ? c.decoder_hidden[i] : c.pred_steps * 2;
      out.push_back({dec_path(head, i, "weight"), in, width, false});
      out.push_back({dec_path(head, i, "bias"), 1, width, true});
      in = width;
    }
  }
  return out;
}

}  // namespace

HstanModel::HstanModel(const HstanConfig & config, std::uint64_t seed) : config_(config)
{
  config_.validate();
  std::mt19937_64 rng(seed);
  for (const auto & s : layout(config_)) {
    Tensor2D w(s.rows, s.cols);
    if (!s.bias) {
      const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = u(rng);
    }
    params_.add(s.path, std::move(w));
  }
}

HstanModel::HstanModel(const HstanConfig & config, ad::ParameterStore params)
: config_(config), params_(std::move(params))
{
  config_.validate();
  const auto specs = layout(config_);
  if (specs.size() != params_.size()) {
    throw DimensionError(
      "HstanModel: expected " + std::to_string(specs.size()) + " parameters, got " +
      std::to_string(params_.size()));
  }
  for (const auto & s : specs) {
    if (!params_.contains(s.path)) {
      throw DimensionError("HstanModel: missing parameter '" + s.path + "'");
    }
    const auto & v = params_.at(s.path).value;
    if (v.rows() != s.rows || v.cols() != s.cols) {
      throw DimensionError(
        "HstanModel: parameter '" + s.path + "' is " + v.shape_string() + ", expected " +
        shape_of(s.rows, s.cols));
    }
  }
}

std::vector<GatLayerParams> HstanModel::gat_params() const
{
  std::vector<GatLayerParams> out;
  if (config_.no_sam) {
    return out;
  }
  for (std::size_t l = 0; l < config_.gat_layers; ++l) {
    GatLayerParams layer;
    layer.combine = l + 1 == config_.gat_layers ? HeadCombine::kAverage : HeadCombine::kConcat;
    for (std::size_t k = 0; k < config_.effective_gat_heads(); ++k) {
      layer.heads.push_back(
        {params_.at(gat_path(l, k, "transform")).value, params_.at(gat_path(l, k, "attention")).value});
    }
    out.push_back(std::move(layer));
  }
  return out;
}

GruParams HstanModel::gru_params() const
{
  GruParams out;
  if (config_.no_tam) {
    return out;
  }
  for (std::size_t l = 0; l < config_.gru_layers; ++l) {
    auto g = [&](const char * leaf) { return params_.at(gru_path(l, leaf)).value; };
    out.layers.push_back(
      {g("w_z"), g("w_r"), g("w_h"), g("u_z"), g("u_r"), g("u_h"), g("b_z"), g("b_r"), g("b_h")});
  }
  return out;
}

MhaParams HstanModel::mha_params() const
{
  MhaParams out;
  if (config_.no_tam) {
    return out;
  }
  out.w_q = params_.at("mha.w_q").value;
  out.w_k = params_.at("mha.w_k").value;
  out.w_v = params_.at("mha.w_v").value;
  out.w_o = params_.at("mha.w_o").value;
  out.heads = config_.effective_attention_heads();
  return out;
}

MlpParams decoder_params(const HstanModel & model, const std::string & head)
{
  MlpParams out;
  const auto & p = model.params();
  for (std::size_t i = 0; p.contains(dec_path(head, i, "weight")); ++i) {
    out.emplace_back(p.at(dec_path(head, i, "weight")).value, p.at(dec_path(head, i, "bias")).value);
  }
  if (out.empty()) {
    throw std::invalid_argument("decoder_params: no head named '" + head + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Value-level reference pieces

Vec2 scene_origin(std::span<const SceneFrame> history)
{
  if (history.empty() || history.front().size() == 0) {
    throw DataError("scene_origin: empty history");
  }
  Vec2 c;
  for (const auto & v : history.front().vehicles) {
    c.x += v.x;
    c.y += v.y;
  }
  const double n = static_cast<double>(history.front().size());
  return {c.x / n, c.y / n};
}

Tensor2D normalized_features(const SceneFrame & frame, Vec2 origin, const HstanConfig & c)
{
  Tensor2D out(frame.size(), kFeatureDim);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const auto & v = frame.vehicles[i];
    const double row[kFeatureDim] = {
      (v.x - origin.x) / c.position_scale, (v.y - origin.y) / c.position_scale,
      v.vx / c.velocity_scale,             v.vy / c.velocity_scale,
      v.ax / c.accel_scale,                v.ay / c.accel_scale,
      v.length / c.size_scale,             v.width / c.size_scale,
    };
    std::copy(std::begin(row), std::end(row), out.row(i).begin());
  }
  return out;
}

Tensor2D mlp_forward(const Tensor2D & x, const MlpParams & layers)
{
  ad::Tape tape(false);
  Var h = tape.constant(x);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = ad::linear_forward(h, tape.constant(layers[i].first), tape.constant(layers[i].second));
    if (i + 1 < layers.size()) {
      h = ad::activation(h, ad::Activation::relu());
    }
  }
  return h.value();
}

namespace
{

TrajectorySet to_absolute(
  const Tensor2D & disp, std::span<const Vec2> last, std::size_t steps, double scale)
{
  if (disp.cols() != steps * 2 || disp.rows() != last.size()) {
    throw DimensionError(
      "decode: displacement " + disp.shape_string() + " expected " + shape_of(last.size(), steps * 2));
  }
  TrajectorySet out(last.size(), steps);
  for (std::size_t v = 0; v < last.size(); ++v) {
    for (std::size_t k = 0; k < steps; ++k) {
      out.x(v, k) = last[v].x + scale * disp(v, 2 * k);
      out.y(v, k) = last[v].y + scale * disp(v, 2 * k + 1);
    }
  }
  return out;
}

}  // namespace

TrajectorySet decode_trajectories(
  const Tensor2D & context, const MlpParams & decoder, std::span<const Vec2> last_positions,
  std::size_t pred_steps, double scale)
{
  return to_absolute(mlp_forward(context, decoder), last_positions, pred_steps, scale);
}

QuantileTrajectories quantile_forward(
  const Tensor2D & context, const MlpParams & lower_head, const MlpParams & upper_head,
  std::span<const Vec2> last_positions, std::size_t pred_steps, double scale)
{
  return {
    decode_trajectories(context, lower_head, last_positions, pred_steps, scale),
    decode_trajectories(context, upper_head, last_positions, pred_steps, scale)};
}

// ---------------------------------------------------------------------------
// Batched tape forward

namespace
{

void check_history(std::span<const SceneFrame> history, const HstanConfig & c)
{
  if (history.size() != c.obs_steps) {
    throw DataError(
      "hstan: history has " + std::to_string(history.size()) + " frames, config T=" +
      std::to_string(c.obs_steps));
  }
  for (const auto & f : history) {
    f.validate();
    if (f.ids != history.front().ids) {
      throw DataError("hstan: vehicle roster changes within the window");
    }
  }
}

struct BatchForward
{
  Var context;  // Ntot x H
  Var point;    // Ntot x 2T' displacements in metres
  Var lower;
  Var upper;
  std::vector<std::size_t> offsets;  // window b owns rows [offsets[b], offsets[b+1])
  std::vector<Vec2> last;            // last observed absolute position per row
  std::vector<Vec2> origin;          // per window
};

Var bind_param(ad::Tape & tape, const ad::ParameterStore & p, const std::string & path)
{
  return tape.param(p.at(path));
}

Var decoder_forward(ad::Tape & tape, const ad::ParameterStore & p, const std::string & head, Var x)
{
  Var h = x;
  for (std::size_t i = 0; p.contains(dec_path(head, i, "weight")); ++i) {
    if (i > 0) {
      h = ad::activation(h, ad::Activation::relu());
    }
    h = ad::linear_forward(h, bind_param(tape, p, dec_path(head, i, "weight")), bind_param(tape, p, dec_path(head, i, "bias")));
  }
  return h;
}

BatchForward forward_batch(
  ad::Tape & tape, const HstanModel & model, std::span<const std::vector<SceneFrame> * const> histories)
{
  const HstanConfig & c = model.config();
  const ad::ParameterStore & p = model.params();
  const std::size_t T = c.obs_steps;
  BatchForward out;
  out.offsets.push_back(0);
  for (const auto * h : histories) {
    check_history(*h, c);
    out.offsets.push_back(out.offsets.back() + h->front().size());
    out.origin.push_back(scene_origin(*h));
  }
  const std::size_t ntot = out.offsets.back();
  if (ntot == 0) {
    throw DataError("hstan: empty batch");
  }
  for (const auto * h : histories) {
    for (const auto & v : h->back().vehicles) out.last.push_back(v.position());
  }

  // Features and graph, t-major: row = t * ntot + offset + v.
  Tensor2D x(T * ntot, c.feature_dim);
  ad::SparseGraph graph;
  graph.nodes = 0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < histories.size(); ++b) {
      const SceneFrame & f = (*histories[b])[t];
      const Tensor2D feats = normalized_features(f, out.origin[b], c);
      std::copy(
        feats.data().begin(), feats.data().end(),
        x.row(t * ntot + out.offsets[b]).begin());
      if (!c.no_sam) {
        append_block(graph, build_adjacency(f, c.radius).graph());
      }
    }
  }

  Var h = embed_features(tape.constant(std::move(x)), bind_param(tape, p, "embed.weight"), bind_param(tape, p, "embed.bias"));
  if (!c.no_sam) {
    const ad::SparseGraph & g = tape.retain(std::move(graph));
    for (std::size_t l = 0; l < c.gat_layers; ++l) {
      std::vector<GatHeadVars> heads;
      for (std::size_t k = 0; k < c.effective_gat_heads(); ++k) {
        heads.push_back({bind_param(tape, p, gat_path(l, k, "transform")), bind_param(tape, p, gat_path(l, k, "attention"))});
      }
      const auto combine = l + 1 == c.gat_layers ? HeadCombine::kAverage : HeadCombine::kConcat;
      // Residual: with a shared query term the attention weights of a
      // clique are identical for every node, so without the skip each
      // vehicle would receive the same aggregate.
      h = ad::add(h, gat_layer_forward(h, g, heads, combine));
    }
  }
  Var bridged = ad::linear_forward(h, bind_param(tape, p, "bridge.weight"), bind_param(tape, p, "bridge.bias"));

  if (c.no_tam) {
    out.context = ad::slice_rows(bridged, (T - 1) * ntot, T * ntot);
  } else {
    std::vector<Var> steps;
    steps.reserve(T);
    for (std::size_t t = 0; t < T; ++t) steps.push_back(ad::slice_rows(bridged, t * ntot, (t + 1) * ntot));
    std::vector<GruLayerVars> layers;
    for (std::size_t l = 0; l < c.gru_layers; ++l) {
      auto g = [&](const char * leaf) { return bind_param(tape, p, gru_path(l, leaf)); };
      layers.push_back(
        {g("w_z"), g("w_r"), g("w_h"), g("u_z"), g("u_r"), g("u_h"), g("b_z"), g("b_r"), g("b_h")});
    }
    const std::vector<Var> states = gru_encode(steps, layers);
    const Var seq = T == 1 ? states.front() : ad::concat_rows(states);
    const MhaVars mha{
      bind_param(tape, p, "mha.w_q"), bind_param(tape, p, "mha.w_k"), bind_param(tape, p, "mha.w_v"),
      bind_param(tape, p, "mha.w_o"), c.effective_attention_heads()};
    const Var attended = multi_head_self_attention(seq, ntot, T, mha);
    out.context = collapse_to_context(attended, ntot, T);
  }

  out.point = ad::affine(decoder_forward(tape, p, "point", out.context), c.output_scale);
  out.lower = ad::affine(decoder_forward(tape, p, "lower", out.context), c.output_scale);
  out.upper = ad::affine(decoder_forward(tape, p, "upper", out.context), c.output_scale);
  return out;
}

TrajectorySet rows_to_set(const Tensor2D & disp, std::span<const Vec2> last, std::size_t begin, std::size_t end, std::size_t steps)
{
  TrajectorySet out(end - begin, steps);
  for (std::size_t v = begin; v < end; ++v) {
    for (std::size_t k = 0; k < steps; ++k) {
      out.x(v - begin, k) = last[v].x + disp(v, 2 * k);
      out.y(v - begin, k) = last[v].y + disp(v, 2 * k + 1);
    }
  }
  return out;
}

Tensor2D set_to_rows(const TrajectorySet & s)
{
  Tensor2D out(s.vehicles(), s.steps() * 2);
  std::copy(s.values().begin(), s.values().end(), out.data().begin());
  return out;
}

}  // namespace

HstanOutput hstan_forward(std::span<const SceneFrame> history, const HstanModel & model)
{
  const std::vector<SceneFrame> copy(history.begin(), history.end());
  const std::vector<SceneFrame> * ptr = &copy;
  ad::Tape tape(false);
  const BatchForward f = forward_batch(tape, model, std::span(&ptr, 1));
  const std::size_t n = f.offsets.back();
  const std::size_t steps = model.config().pred_steps;
  HstanOutput out;
  out.context = f.context.value();
  out.prediction.point = rows_to_set(f.point.value(), f.last, 0, n, steps);
  out.prediction.lower = rows_to_set(f.lower.value(), f.last, 0, n, steps);
  out.prediction.upper = rows_to_set(f.upper.value(), f.last, 0, n, steps);
  return out;
}

std::vector<PredictionBatch> hstan_predict(
  std::span<const std::vector<SceneFrame>> histories, const HstanModel & model)
{
  std::vector<PredictionBatch> out;
  if (histories.empty()) {
    return out;
  }
  std::vector<const std::vector<SceneFrame> *> ptrs;
  for (const auto & h : histories) ptrs.push_back(&h);
  ad::Tape tape(false);
  const BatchForward f = forward_batch(tape, model, ptrs);
  const std::size_t steps = model.config().pred_steps;
  for (std::size_t b = 0; b < histories.size(); ++b) {
    PredictionBatch pb;
    pb.point = rows_to_set(f.point.value(), f.last, f.offsets[b], f.offsets[b + 1], steps);
    pb.lower = rows_to_set(f.lower.value(), f.last, f.offsets[b], f.offsets[b + 1], steps);
    pb.upper = rows_to_set(f.upper.value(), f.last, f.offsets[b], f.offsets[b + 1], steps);
    out.push_back(std::move(pb));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objective

Var pinball_loss(Var pred, const Tensor2D & target, double tau)
{
  const Tensor2D & pv = pred.value();
  require_shape(pv.rows() == target.rows() && pv.cols() == target.cols(), "pinball_loss", pv, target);
  if (pv.size() == 0) {
    throw DimensionError("pinball_loss: empty input");
  }
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::invalid_argument("pinball_loss: tau must lie in (0, 1)");
  }
  const double n = static_cast<double>(pv.size());
  Tensor2D slope(pv.rows(), pv.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double u = target[i] - pv[i];
    total += u >= 0.0 ? tau * u : (tau - 1.0) * u;
    // d/dq of rho_tau(y - q); the kink at u = 0 takes the upper branch.
    slope[i] = u >= 0.0 ? -tau : 1.0 - tau;
  }
  const std::size_t pi = pred.id();
  return pred.tape().push(
    Tensor2D(1, 1, total / n), {pred}, [pi, slope = std::move(slope), n](ad::Tape & tp, const Tensor2D & g) {
      Tensor2D & gp = tp.grad_buffer(pi);
      for (std::size_t i = 0; i < slope.size(); ++i) gp[i] += slope[i] / n * g[0];
    });
}

Var collision_penalty(
  Var positions, std::span<const std::pair<std::size_t, std::size_t>> groups, double radius)
{
  const Tensor2D & pv = positions.value();
  if (pv.cols() % 2 != 0) {
    throw DimensionError("collision_penalty: positions need an even column count, got " + pv.shape_string());
  }
  const std::size_t steps = pv.cols() / 2;
  double total = 0.0;
  std::size_t count = 0;
  Tensor2D grad(pv.rows(), pv.cols());
  for (const auto & [begin, end] : groups) {
    if (end > pv.rows() || begin > end) {
      throw DimensionError("collision_penalty: group out of range for " + pv.shape_string());
    }
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = i + 1; j < end; ++j) {
        for (std::size_t k = 0; k < steps; ++k) {
          ++count;
          const double dx = pv(i, 2 * k) - pv(j, 2 * k);
          const double dy = pv(i, 2 * k + 1) - pv(j, 2 * k + 1);
          const double d = std::sqrt(dx * dx + dy * dy);
          const double gap = radius - d;
          if (gap <= 0.0) {
            continue;
          }
          total += gap * gap;
          if (d == 0.0) {
            continue;  // direction undefined; no gradient
          }
          const double s = -2.0 * gap / d;
          grad(i, 2 * k) += s * dx;
          grad(i, 2 * k + 1) += s * dy;
          grad(j, 2 * k) -= s * dx;
          grad(j, 2 * k + 1) -= s * dy;
        }
      }
    }
  }
  ad::Tape & tape = positions.tape();
  if (count == 0) {
    return tape.constant(Tensor2D(1, 1, 0.0));
  }
  const double n = static_cast<double>(count);
  const std::size_t pi = positions.id();
  return tape.push(
    Tensor2D(1, 1, total / n), {positions}, [pi, grad = std::move(grad), n](ad::Tape & tp, const Tensor2D & g) {
      Tensor2D & gp = tp.grad_buffer(pi);
      for (std::size_t i = 0; i < grad.size(); ++i) gp[i] += grad[i] / n * g[0];
    });
}

namespace
{

Var combine_loss(
  ad::Tape & tape, Var point, Var lower, Var upper, const Tensor2D & target, Var positions,
  std::span<const std::pair<std::size_t, std::size_t>> groups, const HstanConfig & c,
  LossBreakdown * parts)
{
  Var total = ad::mse(point, target);
  LossBreakdown b;
  b.mse = total.value()[0];
  if (c.pinball_weight > 0.0) {
    const Var pin = ad::add(pinball_loss(lower, target, c.alpha / 2.0), pinball_loss(upper, target, 1.0 - c.alpha / 2.0));
    b.pinball = pin.value()[0];
    total = ad::add(total, ad::affine(pin, c.pinball_weight));
  }
  if (c.collision_weight > 0.0) {
    const Var col = collision_penalty(positions, groups, c.collision_radius);
    b.collision = col.value()[0];
    total = ad::add(total, ad::affine(col, c.collision_weight));
  }
  b.total = total.value()[0];
  if (parts != nullptr) {
    *parts = b;
  }
  (void)tape;
  return total;
}

}  // namespace

LossBreakdown training_loss(
  const PredictionBatch & pred, const TrajectorySet & truth, const HstanConfig & config)
{
  if (pred.point.vehicles() != truth.vehicles() || pred.point.steps() != truth.steps() ||
      pred.lower.values().size() != truth.values().size() ||
      pred.upper.values().size() != truth.values().size()) {
    throw DimensionError("training_loss: prediction and truth shapes differ");
  }
  ad::Tape tape(false);
  const Var point = tape.constant(set_to_rows(pred.point));
  const std::pair<std::size_t, std::size_t> group{0, truth.vehicles()};
  LossBreakdown parts;
  combine_loss(
    tape, point, tape.constant(set_to_rows(pred.lower)), tape.constant(set_to_rows(pred.upper)),
    set_to_rows(truth), point, std::span(&group, 1), config, &parts);
  return parts;
}

Var batch_objective(ad::Tape & tape, const HstanModel & model, std::span<const Window> windows, LossBreakdown * parts)
{
  const HstanConfig & c = model.config();
  std::vector<const std::vector<SceneFrame> *> ptrs;
  for (const auto & w : windows) {
    if (w.future.steps() != c.pred_steps || w.future.vehicles() != w.history.back().size()) {
      throw DataError("batch_objective: window future does not match T' or roster");
    }
    ptrs.push_back(&w.history);
  }
  const BatchForward f = forward_batch(tape, model, ptrs);
  const std::size_t ntot = f.offsets.back();
  // Targets as displacements from the last observation; pairwise geometry in
  // a per-window frame anchored at the window origin.
  Tensor2D target(ntot, 2 * c.pred_steps);
  Tensor2D anchor(ntot, 2 * c.pred_steps);
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    groups.emplace_back(f.offsets[b], f.offsets[b + 1]);
    for (std::size_t v = 0; v < windows[b].future.vehicles(); ++v) {
      const std::size_t r = f.offsets[b] + v;
      for (std::size_t k = 0; k < c.pred_steps; ++k) {
        target(r, 2 * k) = windows[b].future.x(v, k) - f.last[r].x;
        target(r, 2 * k + 1) = windows[b].future.y(v, k) - f.last[r].y;
        anchor(r, 2 * k) = f.last[r].x - f.origin[b].x;
        anchor(r, 2 * k + 1) = f.last[r].y - f.origin[b].y;
      }
    }
  }
  Var positions = f.point;
  if (c.collision_weight > 0.0) {
    positions = ad::add(f.point, tape.constant(std::move(anchor)));
  }
  return combine_loss(tape, f.point, f.lower, f.upper, target, positions, groups, c, parts);
}

// ---------------------------------------------------------------------------
// Training

TrainState init_training(const HstanConfig & config, std::uint64_t seed)
{
  TrainState s;
  s.model = HstanModel(config, seed);
  return s;
}

void train(
  TrainState & state, const TrajectoryDataset & dataset, const TrainOptions & options,
  const std::function<void(const EpochLog &)> & on_epoch)
{
  const HstanConfig & c = state.model.config();
  if (dataset.obs_steps != c.obs_steps || dataset.pred_steps != c.pred_steps) {
    throw DataError("train: dataset T/T' do not match the model config");
  }
  const auto refs = dataset.windows(Split::kTrain);
  if (refs.empty()) {
    throw DataError("train: training split has no windows");
  }
  if (options.batch_size == 0) {
    throw std::invalid_argument("train: batch_size must be positive");
  }
  std::vector<Window> windows;
  windows.reserve(refs.size());
  for (const auto & r : refs) windows.push_back(dataset.window(r));

  LRSchedule sched = options.schedule;
  sched.total_epochs = options.epochs;
  std::vector<std::size_t> order(windows.size());
  std::vector<Window> batch;
  const std::size_t last =
    options.stop_after > 0 ? std::min(options.stop_after, options.epochs) : options.epochs;
  for (std::size_t epoch = state.epochs_completed; epoch < last; ++epoch) {
    const double lr = cosine_lr(epoch, sched);
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{
      static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    double weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(windows[order[i]]);
      ad::Tape tape;
      LossBreakdown parts;
      const Var loss = batch_objective(tape, state.model, batch, &parts);
      if (!std::isfinite(parts.total)) {
        throw EvaluationError(
          "train: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
          std::to_string(start) + " (mse=" + std::to_string(parts.mse) + ", pinball=" +
          std::to_string(parts.pinball) + ", collision=" + std::to_string(parts.collision) + ")");
      }
      tape.backward(loss);
      state.model.params().zero_grad();
      tape.accumulate_into(state.model.params());
      adam_step(state.model.params(), state.optimizer, lr);

      const double w = static_cast<double>(end - start);
      weight += w;
      log.loss += w * parts.total;
      log.mse += w * parts.mse;
      log.pinball += w * parts.pinball;
      log.collision += w * parts.collision;
    }
    log.loss /= weight;
    log.mse /= weight;
    log.pinball /= weight;
    log.collision /= weight;
    state.history.push_back(log);
    state.epochs_completed = epoch + 1;
    if (on_epoch) {
      on_epoch(log);
    }
  }
}

}  // namespace fcw
