// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace kvbudget {

using Index = Eigen::Index;

/// Row-major per-layer table: one row per layer, one column per token position.
using LayerTable = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input document.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A trace, profile or cache violated one of its invariants.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Bad argument to an operation (out-of-range index, non-positive parameter, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// The requested compression budget cannot be realized.
class BudgetError : public Error {
public:
    using Error::Error;
};

/// Inconsistent simulation setup, e.g. feature merging without key/value vectors.
class ConfigError : public Error {
public:
    using Error::Error;
};

constexpr double kRowSumTolerance = 1e-6;

}  // namespace kvbudget
