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

#ifndef FCW__ERROR_HPP_
#define FCW__ERROR_HPP_

#include <stdexcept>
#include <string>

namespace fcw
{

/// Operand shapes do not agree. The message names both shapes.
class DimensionError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// A softmax row had every entry masked out.
class DegenerateRowError : public std::domain_error
{
public:
  using std::domain_error::domain_error;
};

class RangeError : public std::out_of_range
{
public:
  using std::out_of_range::out_of_range;
};

/// A numeric evaluation produced a non-finite value.
class EvaluationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (datasets, windows, files).
class DataError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

}  // namespace fcw

#endif  // FCW__ERROR_HPP_
