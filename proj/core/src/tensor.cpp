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

#include "fcw/tensor.hpp"

#include "fcw/error.hpp"

#include <algorithm>
#include <cmath>

namespace fcw
{

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, double fill)
: rows_(rows), cols_(cols), data_(rows * cols, fill)
{
}

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
: rows_(rows), cols_(cols), data_(std::move(data))
{
  if (data_.size() != rows * cols) {
    throw DimensionError(
      "Tensor2D: data length " + std::to_string(data_.size()) + " does not match shape " +
      shape_of(rows, cols));
  }
}

Tensor2D Tensor2D::identity(std::size_t n)
{
  Tensor2D out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    out(i, i) = 1.0;
  }
  return out;
}

Tensor2D Tensor2D::from_rows(std::initializer_list<std::initializer_list<double>> rows)
{
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto & row : rows) {
    if (row.size() != c) {
      throw DimensionError("Tensor2D::from_rows: ragged rows");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor2D(r, c, std::move(data));
}

Tensor2D Tensor2D::row_vector(std::span<const double> values)
{
  return Tensor2D(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Tensor2D::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor2D::all_finite() const
{
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor2D::shape_string() const { return shape_of(rows_, cols_); }

std::string shape_of(std::size_t rows, std::size_t cols)
{
  return std::to_string(rows) + "x" + std::to_string(cols);
}

void require_shape(bool ok, const char * op, const Tensor2D & a, const Tensor2D & b)
{
  if (!ok) {
    throw DimensionError(
      std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
  }
}

double max_abs_diff(const Tensor2D & a, const Tensor2D & b)
{
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff", a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace fcw
