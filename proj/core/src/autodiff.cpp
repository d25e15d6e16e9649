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

#include "fcw/autodiff.hpp"

#include "fcw/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace fcw::ad
{

// ---------------------------------------------------------------------------
// ParameterStore

Parameter & ParameterStore::add(const std::string & path, Tensor2D init)
{
  if (contains(path)) {
    throw std::invalid_argument("ParameterStore: duplicate parameter path '" + path + "'");
  }
  Tensor2D grad(init.rows(), init.cols());
  auto [it, inserted] = entries_.emplace(path, Parameter{std::move(init), std::move(grad)});
  return it->second;
}

const Parameter & ParameterStore::at(const std::string & path) const
{
  auto it = entries_.find(path);
  if (it == entries_.end()) {
    throw std::out_of_range("ParameterStore: no parameter '" + path + "'");
  }
  return it->second;
}

Parameter & ParameterStore::at(const std::string & path)
{
  auto it = entries_.find(path);
  if (it == entries_.end()) {
    throw std::out_of_range("ParameterStore: no parameter '" + path + "'");
  }
  return it->second;
}

void ParameterStore::zero_grad()
{
  for (auto & [path, p] : entries_) {
    p.grad.fill(0.0);
  }
}

std::size_t ParameterStore::scalar_count() const
{
  std::size_t n = 0;
  for (const auto & [path, p] : entries_) {
    n += p.value.size();
  }
  return n;
}

// ---------------------------------------------------------------------------
// Tape

const Tensor2D & Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor2D value)
{
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Parameter & p)
{
  if (auto it = params_.find(&p); it != params_.end()) {
    return Var(this, it->second);
  }
  Node node;
  node.external = &p.value;
  node.needs_grad = record_;
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  params_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::push(Tensor2D value, std::initializer_list<Var> parents, BackwardFn backward)
{
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(backward));
}

Var Tape::push(Tensor2D value, std::span<const Var> parents, BackwardFn backward)
{
  Node node;
  node.owned = std::move(value);
  if (record_) {
    node.needs_grad = std::any_of(
      parents.begin(), parents.end(), [this](const Var & v) { return nodes_[v.id()].needs_grad; });
    if (node.needs_grad) {
      node.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor2D & Tape::value(std::size_t id) const
{
  const Node & n = nodes_[id];
  return n.external != nullptr ? *n.external : n.owned;
}

Tensor2D & Tape::grad_buffer(std::size_t id)
{
  Tensor2D & g = grads_[id];
  if (g.empty()) {
    const Tensor2D & v = value(id);
    g = Tensor2D(v.rows(), v.cols());
  }
  return g;
}

void Tape::backward(Var output)
{
  if (!record_) {
    throw std::logic_error("Tape::backward: tape was created without recording");
  }
  const Tensor2D & out = output.value();
  if (out.rows() != 1 || out.cols() != 1) {
    throw DimensionError("Tape::backward: output must be 1x1, got " + out.shape_string());
  }
  grads_.assign(nodes_.size(), Tensor2D());
  grads_[output.id()] = Tensor2D(1, 1, 1.0);
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node & node = nodes_[id];
    if (!node.backward || grads_[id].empty()) {
      continue;
    }
    node.backward(*this, grads_[id]);
  }
}

Tensor2D Tape::grad(Var v) const
{
  if (v.id() < grads_.size() && !grads_[v.id()].empty()) {
    return grads_[v.id()];
  }
  const Tensor2D & val = v.value();
  return Tensor2D(val.rows(), val.cols());
}

Tensor2D Tape::param_grad(const Parameter & p) const
{
  auto it = params_.find(&p);
  if (it == params_.end() || it->second >= grads_.size() || grads_[it->second].empty()) {
    return Tensor2D(p.value.rows(), p.value.cols());
  }
  return grads_[it->second];
}

void Tape::accumulate_into(ParameterStore & store) const
{
  for (auto & [path, p] : store) {
    auto it = params_.find(&p);
    if (it == params_.end() || it->second >= grads_.size()) {
      continue;
    }
    const Tensor2D & g = grads_[it->second];
    if (g.empty()) {
      continue;
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      p.grad[i] += g[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Dense kernels

namespace
{

// c += a * b
void gemm_nn(const Tensor2D & a, const Tensor2D & b, Tensor2D & c)
{
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double * ci = c.data().data() + i * n;
    const double * ai = a.data().data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) {
        continue;
      }
      const double * bp = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        ci[j] += av * bp[j];
      }
    }
  }
}

// c += a * b^T
void gemm_nt(const Tensor2D & a, const Tensor2D & b, Tensor2D & c)
{
  const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double * ai = a.data().data() + i * n;
    double * ci = c.data().data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double * bp = b.data().data() + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        acc += ai[j] * bp[j];
      }
      ci[p] += acc;
    }
  }
}

// c += a^T * b
void gemm_tn(const Tensor2D & a, const Tensor2D & b, Tensor2D & c)
{
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double * ai = a.data().data() + i * k;
    const double * bi = b.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) {
        continue;
      }
      double * cp = c.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        cp[j] += av * bi[j];
      }
    }
  }
}

void add_into(Tensor2D & dst, const Tensor2D & src)
{
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] += src[i];
  }
}

bool same_shape(const Tensor2D & a, const Tensor2D & b)
{
  return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace

// ---------------------------------------------------------------------------
// Activations

double apply_activation(double x, const Activation & act)
{
  switch (act.kind) {
    case ActivationKind::kIdentity:
      return x;
    case ActivationKind::kLeakyRelu:
      return x > 0.0 ? x : act.slope * x;
    case ActivationKind::kElu:
      return x > 0.0 ? x : std::expm1(x);
    case ActivationKind::kSigmoid:
      if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
      } else {
        const double e = std::exp(x);
        return e / (1.0 + e);
      }
    case ActivationKind::kTanh:
      return std::tanh(x);
    case ActivationKind::kRelu:
      return x > 0.0 ? x : 0.0;
  }
  return x;
}

double activation_derivative(double x, double y, const Activation & act)
{
  switch (act.kind) {
    case ActivationKind::kIdentity:
      return 1.0;
    case ActivationKind::kLeakyRelu:
      return x > 0.0 ? 1.0 : act.slope;
    case ActivationKind::kElu:
      return x > 0.0 ? 1.0 : y + 1.0;
    case ActivationKind::kSigmoid:
      return y * (1.0 - y);
    case ActivationKind::kTanh:
      return 1.0 - y * y;
    case ActivationKind::kRelu:
      return x > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// Ops

Var linear_forward(Var x, Var w, std::optional<Var> b)
{
  const Tensor2D & xv = x.value();
  const Tensor2D & wv = w.value();
  require_shape(xv.cols() == wv.rows(), "linear_forward", xv, wv);
  Tensor2D out(xv.rows(), wv.cols());
  if (b) {
    const Tensor2D & bv = b->value();
    if (bv.rows() != 1 || bv.cols() != wv.cols()) {
      throw DimensionError(
        "linear_forward: bias shape " + bv.shape_string() + " does not match weight " +
        wv.shape_string());
    }
    for (std::size_t i = 0; i < out.rows(); ++i) {
      std::copy(bv.data().begin(), bv.data().end(), out.row(i).begin());
    }
  }
  gemm_nn(xv, wv, out);
  Tape & t = x.tape();
  const std::size_t xi = x.id(), wi = w.id();
  const std::optional<std::size_t> bi = b ? std::optional(b->id()) : std::nullopt;
  auto backward = [xi, wi, bi](Tape & tp, const Tensor2D & g) {
    if (tp.needs_grad(xi)) {
      gemm_nt(g, tp.value(wi), tp.grad_buffer(xi));
    }
    if (tp.needs_grad(wi)) {
      gemm_tn(tp.value(xi), g, tp.grad_buffer(wi));
    }
    if (bi && tp.needs_grad(*bi)) {
      Tensor2D & gb = tp.grad_buffer(*bi);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) {
          gb[j] += g(i, j);
        }
      }
    }
  };
  if (b) {
    return t.push(std::move(out), {x, w, *b}, backward);
  }
  return t.push(std::move(out), {x, w}, backward);
}

Var matmul(Var a, Var b) { return linear_forward(a, b); }

Var add(Var a, Var b)
{
  const Tensor2D & av = a.value();
  const Tensor2D & bv = b.value();
  require_shape(same_shape(av, bv), "add", av, bv);
  Tensor2D out = av;
  add_into(out, bv);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), {a, b}, [ai, bi](Tape & tp, const Tensor2D & g) {
    if (tp.needs_grad(ai)) add_into(tp.grad_buffer(ai), g);
    if (tp.needs_grad(bi)) add_into(tp.grad_buffer(bi), g);
  });
}

Var sub(Var a, Var b)
{
  const Tensor2D & av = a.value();
  const Tensor2D & bv = b.value();
  require_shape(same_shape(av, bv), "sub", av, bv);
  Tensor2D out = av;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] -= bv[i];
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), {a, b}, [ai, bi](Tape & tp, const Tensor2D & g) {
    if (tp.needs_grad(ai)) add_into(tp.grad_buffer(ai), g);
    if (tp.needs_grad(bi)) {
      Tensor2D & gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b)
{
  const Tensor2D & av = a.value();
  const Tensor2D & bv = b.value();
  require_shape(same_shape(av, bv), "mul", av, bv);
  Tensor2D out = av;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= bv[i];
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(std::move(out), {a, b}, [ai, bi](Tape & tp, const Tensor2D & g) {
    if (tp.needs_grad(ai)) {
      Tensor2D & ga = tp.grad_buffer(ai);
      const Tensor2D & bv = tp.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.needs_grad(bi)) {
      Tensor2D & gb = tp.grad_buffer(bi);
      const Tensor2D & av = tp.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row)
{
  const Tensor2D & av = a.value();
  const Tensor2D & rv = row.value();
  require_shape(rv.rows() == 1 && rv.cols() == av.cols(), "add_row", av, rv);
  Tensor2D out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) {
      out(i, j) += rv[j];
    }
  }
  const std::size_t ai = a.id(), ri = row.id();
  return a.tape().push(std::move(out), {a, row}, [ai, ri](Tape & tp, const Tensor2D & g) {
    if (tp.needs_grad(ai)) add_into(tp.grad_buffer(ai), g);
    if (tp.needs_grad(ri)) {
      Tensor2D & gr = tp.grad_buffer(ri);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
      }
    }
  });
}

Var affine(Var a, double scale, double shift)
{
  Tensor2D out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = scale * out[i] + shift;
  }
  const std::size_t ai = a.id();
  return a.tape().push(std::move(out), {a}, [ai, scale](Tape & tp, const Tensor2D & g) {
    Tensor2D & ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
  });
}

Var activation(Var x, const Activation & act)
{
  if (act.kind == ActivationKind::kLeakyRelu && !(act.slope > 0.0 && act.slope < 1.0)) {
    throw std::invalid_argument("activation: leaky_relu slope must lie in (0, 1)");
  }
  const Tensor2D & xv = x.value();
  Tensor2D out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = apply_activation(xv[i], act);
  }
  Tape & t = x.tape();
  const std::size_t xi = x.id();
  const std::size_t oi = t.size();  // id the output will receive
  return t.push(std::move(out), {x}, [xi, oi, act](Tape & tp, const Tensor2D & g) {
    Tensor2D & gx = tp.grad_buffer(xi);
    const Tensor2D & xv = tp.value(xi);
    const Tensor2D & yv = tp.value(oi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * activation_derivative(xv[i], yv[i], act);
    }
  });
}

Tensor2D softmax_rows(const Tensor2D & x, const Mask * mask)
{
  if (mask != nullptr && mask->size() != x.size()) {
    throw DimensionError(
      "softmax_rows: mask of " + std::to_string(mask->size()) + " entries for input " +
      x.shape_string());
  }
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double row_max = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (mask == nullptr || (*mask)[r * x.cols() + c] != 0) {
        row_max = std::max(row_max, x(r, c));
        any = true;
      }
    }
    if (!any) {
      throw DegenerateRowError("softmax_rows: row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (mask == nullptr || (*mask)[r * x.cols() + c] != 0) {
        out(r, c) = std::exp(x(r, c) - row_max);
        total += out(r, c);
      }
    }
    for (std::size_t c = 0; c < x.cols(); ++c) {
      out(r, c) /= total;
    }
  }
  return out;
}

Var softmax_rows(Var x, const Mask * mask)
{
  Tensor2D out = softmax_rows(x.value(), mask);
  Tape & t = x.tape();
  const std::size_t xi = x.id();
  const std::size_t oi = t.size();
  return t.push(std::move(out), {x}, [xi, oi](Tape & tp, const Tensor2D & g) {
    Tensor2D & gx = tp.grad_buffer(xi);
    const Tensor2D & y = tp.value(oi);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var concat_cols(std::span<const Var> parts)
{
  if (parts.empty()) {
    throw DimensionError("concat_cols: no inputs");
  }
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var & p : parts) {
    require_shape(p.rows() == rows, "concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Tensor2D out(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const Var & p : parts) {
    const Tensor2D & pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + offset);
    }
    offset += pv.cols();
    ids.push_back(p.id());
  }
  return parts.front().tape().push(std::move(out), parts, [ids](Tape & tp, const Tensor2D & g) {
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t c = tp.value(id).cols();
      if (tp.needs_grad(id)) {
        Tensor2D & gp = tp.grad_buffer(id);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t j = 0; j < c; ++j) gp(r, j) += g(r, off + j);
        }
      }
      off += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts)
{
  if (parts.empty()) {
    throw DimensionError("concat_rows: no inputs");
  }
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var & p : parts) {
    require_shape(p.cols() == cols, "concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  std::vector<std::size_t> ids;
  for (const Var & p : parts) {
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
    ids.push_back(p.id());
  }
  return parts.front().tape().push(
    Tensor2D(rows, cols, std::move(data)), parts, [ids](Tape & tp, const Tensor2D & g) {
      std::size_t off = 0;
      for (std::size_t id : ids) {
        const std::size_t n = tp.value(id).size();
        if (tp.needs_grad(id)) {
          Tensor2D & gp = tp.grad_buffer(id);
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
        }
        off += n;
      }
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end)
{
  const Tensor2D & av = a.value();
  if (begin > end || end > av.cols()) {
    throw DimensionError(
      "slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
      ") out of bounds for " + av.shape_string());
  }
  Tensor2D out(av.rows(), end - begin);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = av(r, c);
  }
  const std::size_t ai = a.id();
  return a.tape().push(std::move(out), {a}, [ai, begin](Tape & tp, const Tensor2D & g) {
    Tensor2D & ga = tp.grad_buffer(ai);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end)
{
  const Tensor2D & av = a.value();
  if (begin > end || end > av.rows()) {
    throw DimensionError(
      "slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
      ") out of bounds for " + av.shape_string());
  }
  const auto d = av.data();
  std::vector<double> data(d.begin() + begin * av.cols(), d.begin() + end * av.cols());
  const std::size_t ai = a.id();
  const std::size_t offset = begin * av.cols();
  return a.tape().push(
    Tensor2D(end - begin, av.cols(), std::move(data)), {a},
    [ai, offset](Tape & tp, const Tensor2D & g) {
      Tensor2D & ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
    });
}

Var sum(Var a)
{
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ai = a.id();
  return a.tape().push(Tensor2D(1, 1, total), {a}, [ai](Tape & tp, const Tensor2D & g) {
    Tensor2D & ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean(Var a)
{
  const std::size_t n = a.value().size();
  if (n == 0) {
    throw DimensionError("mean: empty input");
  }
  return affine(sum(a), 1.0 / static_cast<double>(n));
}

Var mse(Var pred, const Tensor2D & target)
{
  const Tensor2D & pv = pred.value();
  require_shape(same_shape(pv, target), "mse", pv, target);
  if (pv.size() == 0) {
    throw DimensionError("mse: empty input");
  }
  Tensor2D diff = pv;
  double total = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] -= target[i];
    total += diff[i] * diff[i];
  }
  const double n = static_cast<double>(diff.size());
  const std::size_t pi = pred.id();
  return pred.tape().push(
    Tensor2D(1, 1, total / n), {pred}, [pi, diff = std::move(diff), n](Tape & tp, const Tensor2D & g) {
      Tensor2D & gp = tp.grad_buffer(pi);
      for (std::size_t i = 0; i < diff.size(); ++i) gp[i] += 2.0 * diff[i] / n * g[0];
    });
}

// ---------------------------------------------------------------------------
// Sparse graph attention primitives

Var edge_softmax(
  Var src, Var dst, const SparseGraph & graph, double slope, std::size_t * score_evaluations)
{
  const Tensor2D & sv = src.value();
  const Tensor2D & dv = dst.value();
  if (sv.rows() != graph.nodes || sv.cols() != 1 || dv.rows() != graph.nodes || dv.cols() != 1) {
    throw DimensionError(
      "edge_softmax: scores " + sv.shape_string() + " / " + dv.shape_string() +
      " do not match a graph of " + std::to_string(graph.nodes) + " nodes");
  }
  const std::size_t edges = graph.edge_count();
  Tensor2D alpha(edges, 1);
  std::vector<double> pre(edges);
  for (std::size_t i = 0; i < graph.nodes; ++i) {
    const std::size_t b = graph.offsets[i], e = graph.offsets[i + 1];
    if (b == e) {
      continue;
    }
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t k = b; k < e; ++k) {
      pre[k] = sv[i] + dv[graph.targets[k]];
      alpha[k] = pre[k] > 0.0 ? pre[k] : slope * pre[k];
      row_max = std::max(row_max, alpha[k]);
    }
    double total = 0.0;
    for (std::size_t k = b; k < e; ++k) {
      alpha[k] = std::exp(alpha[k] - row_max);
      total += alpha[k];
    }
    for (std::size_t k = b; k < e; ++k) {
      alpha[k] /= total;
    }
  }
  if (score_evaluations != nullptr) {
    *score_evaluations += edges;
  }
  Tape & t = src.tape();
  const std::size_t si = src.id(), di = dst.id();
  const std::size_t oi = t.size();
  return t.push(
    std::move(alpha), {src, dst},
    [si, di, oi, &graph, pre = std::move(pre), slope](Tape & tp, const Tensor2D & g) {
      const Tensor2D & a = tp.value(oi);
      Tensor2D * gs = tp.needs_grad(si) ? &tp.grad_buffer(si) : nullptr;
      Tensor2D * gd = tp.needs_grad(di) ? &tp.grad_buffer(di) : nullptr;
      for (std::size_t i = 0; i < graph.nodes; ++i) {
        const std::size_t b = graph.offsets[i], e = graph.offsets[i + 1];
        double dot = 0.0;
        for (std::size_t k = b; k < e; ++k) dot += a[k] * g[k];
        for (std::size_t k = b; k < e; ++k) {
          const double ds = a[k] * (g[k] - dot);
          const double dpre = pre[k] > 0.0 ? ds : slope * ds;
          if (gs) (*gs)[i] += dpre;
          if (gd) (*gd)[graph.targets[k]] += dpre;
        }
      }
    });
}

Var edge_aggregate(Var alpha, Var z, const SparseGraph & graph)
{
  const Tensor2D & av = alpha.value();
  const Tensor2D & zv = z.value();
  if (av.rows() != graph.edge_count() || av.cols() != 1 || zv.rows() != graph.nodes) {
    throw DimensionError(
      "edge_aggregate: alpha " + av.shape_string() + " / features " + zv.shape_string() +
      " do not match a graph of " + std::to_string(graph.nodes) + " nodes and " +
      std::to_string(graph.edge_count()) + " edges");
  }
  const std::size_t d = zv.cols();
  Tensor2D out(graph.nodes, d);
  for (std::size_t i = 0; i < graph.nodes; ++i) {
    double * oi = out.row(i).data();
    for (std::size_t k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k) {
      const double w = av[k];
      const double * zj = zv.row(graph.targets[k]).data();
      for (std::size_t c = 0; c < d; ++c) oi[c] += w * zj[c];
    }
  }
  const std::size_t ai = alpha.id(), zi = z.id();
  return alpha.tape().push(
    std::move(out), {alpha, z}, [ai, zi, &graph](Tape & tp, const Tensor2D & g) {
      const Tensor2D & av = tp.value(ai);
      const Tensor2D & zv = tp.value(zi);
      Tensor2D * ga = tp.needs_grad(ai) ? &tp.grad_buffer(ai) : nullptr;
      Tensor2D * gz = tp.needs_grad(zi) ? &tp.grad_buffer(zi) : nullptr;
      const std::size_t d = zv.cols();
      for (std::size_t i = 0; i < graph.nodes; ++i) {
        const double * gi = g.row(i).data();
        for (std::size_t k = graph.offsets[i]; k < graph.offsets[i + 1]; ++k) {
          const std::size_t j = graph.targets[k];
          if (ga) {
            const double * zj = zv.row(j).data();
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += gi[c] * zj[c];
            (*ga)[k] += dot;
          }
          if (gz) {
            double * gzj = gz->row(j).data();
            for (std::size_t c = 0; c < d; ++c) gzj[c] += av[k] * gi[c];
          }
        }
      }
    });
}

}  // namespace fcw::ad
