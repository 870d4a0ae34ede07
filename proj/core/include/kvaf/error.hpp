// Copyright 2026 The KVAF Toolkit Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace kvaf {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input (XML, CSV, JSON). Carries the 1-based line if known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Kinematic topology is not a set of unbranched chains.
class StructureError : public Error {
 public:
  using Error::Error;
};

/// Input violates a documented invariant (unit axis, unit quaternion, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Vector length does not match what the operation expects.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Tensor or grid shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid scalar argument (counts, ranges).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Could not estimate a quantity from the data (e.g. no visible points).
class EstimationError : public Error {
 public:
  using Error::Error;
};

/// Geometric configuration is rank deficient.
class DegeneracyError : public Error {
 public:
  using Error::Error;
};

/// Numeric failure such as a singular matrix.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File content does not match its schema.
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace kvaf
