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

#ifndef FCW__AUTODIFF_HPP_
#define FCW__AUTODIFF_HPP_

#include "fcw/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fcw::ad
{

struct Parameter
{
  Tensor2D value;
  Tensor2D grad;
};

/// Named learnable tensors, each with a gradient buffer of the same shape.
/// Paths are unique; iteration order is lexicographic by path.
class ParameterStore
{
public:
  using Map = std::map<std::string, Parameter>;

  Parameter & add(const std::string & path, Tensor2D init);
  const Parameter & at(const std::string & path) const;
  Parameter & at(const std::string & path);
  bool contains(const std::string & path) const { return entries_.count(path) != 0; }

  void zero_grad();
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

private:
  Map entries_;
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var
{
public:
  Var() = default;
  Var(Tape * tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor2D & value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape & tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

private:
  Tape * tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording. One tape per forward invocation; never shared
/// between threads. With recording off, ops only compute values.
class Tape
{
public:
  /// Called during backward with the gradient of the op output.
  using BackwardFn = std::function<void(Tape &, const Tensor2D & out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape &) = delete;
  Tape & operator=(const Tape &) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor2D value);
  /// Binds a parameter by reference (no copy). Binding twice returns the same Var.
  Var param(const Parameter & p);

  /// Records an op result. `parents` are the inputs the backward touches; the
  /// closure is dropped when none of them needs a gradient.
  Var push(Tensor2D value, std::initializer_list<Var> parents, BackwardFn backward);
  Var push(Tensor2D value, std::span<const Var> parents, BackwardFn backward);

  const Tensor2D & value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient accumulator for node `id`; allocated on first use.
  Tensor2D & grad_buffer(std::size_t id);

  /// Seeds d(output)/d(output) = 1 for a 1x1 output and propagates.
  void backward(Var output);

  /// Gradient reached by `v` during backward; zeros if none flowed.
  Tensor2D grad(Var v) const;
  Tensor2D param_grad(const Parameter & p) const;

  /// Adds every bound parameter's gradient into the matching store entry.
  void accumulate_into(ParameterStore & store) const;

  /// Keeps `value` alive as long as the tape, for ops that capture by
  /// reference (e.g. the graph passed to edge_softmax).
  template <class T>
  const T & retain(T value)
  {
    auto p = std::make_shared<const T>(std::move(value));
    retained_.push_back(p);
    return *p;
  }

private:
  struct Node
  {
    Tensor2D owned;
    const Tensor2D * external = nullptr;
    BackwardFn backward;
    bool needs_grad = false;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::vector<Tensor2D> grads_;
  std::unordered_map<const Parameter *, std::size_t> params_;
  std::vector<std::shared_ptr<const void>> retained_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. All shapes are checked; mismatch throws DimensionError.

enum class ActivationKind { kIdentity, kLeakyRelu, kElu, kSigmoid, kTanh, kRelu };

struct Activation
{
  ActivationKind kind = ActivationKind::kIdentity;
  double slope = 0.2;  // leaky_relu only

  static Activation identity() { return {ActivationKind::kIdentity}; }
  static Activation leaky_relu(double slope = 0.2) { return {ActivationKind::kLeakyRelu, slope}; }
  static Activation elu() { return {ActivationKind::kElu}; }
  static Activation sigmoid() { return {ActivationKind::kSigmoid}; }
  static Activation tanh() { return {ActivationKind::kTanh}; }
  static Activation relu() { return {ActivationKind::kRelu}; }
};

/// Row-major boolean mask; nonzero = keep.
using Mask = std::vector<std::uint8_t>;

double apply_activation(double x, const Activation & act);
double activation_derivative(double x, double y, const Activation & act);

/// x·w (+ b broadcast over rows).
Var linear_forward(Var x, Var w, std::optional<Var> b = std::nullopt);
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);
/// scale·a + shift, elementwise.
Var affine(Var a, double scale, double shift = 0.0);
Var activation(Var x, const Activation & act);
Var softmax_rows(Var x, const Mask * mask = nullptr);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var sum(Var a);
Var mean(Var a);
/// Mean of squared differences against a constant target.
Var mse(Var pred, const Tensor2D & target);

/// Plain (untaped) row softmax with the same semantics as the op.
Tensor2D softmax_rows(const Tensor2D & x, const Mask * mask = nullptr);

/// Directed neighbour lists in CSR form: edges of node i are
/// targets[offsets[i] .. offsets[i+1]).
struct SparseGraph
{
  std::size_t nodes = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> targets;

  std::size_t edge_count() const { return targets.size(); }
};

/// Per-edge attention. For edge i->j the score is
/// LeakyReLU(src[i] + dst[j]), normalised by softmax over i's edges.
/// src and dst are Nx1. Returns Ex1. Adds E to *score_evaluations if given.
/// `graph` is held by reference and must outlive the tape.
Var edge_softmax(
  Var src, Var dst, const SparseGraph & graph, double slope,
  std::size_t * score_evaluations = nullptr);

/// out[i] = sum over edges i->j of alpha[e] * z[j].
Var edge_aggregate(Var alpha, Var z, const SparseGraph & graph);

}  // namespace fcw::ad

#endif  // FCW__AUTODIFF_HPP_
