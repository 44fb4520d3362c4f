// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "kvbudget/common.hpp"
#include "kvbudget/trace.hpp"

namespace kvbudget {

/// Raw (accumulated attention mass) and normalized per-token importance, one row per layer.
struct ImportanceProfile {
    TraceMeta meta;
    LayerTable raw;
    LayerTable normalized;

    Index layers() const { return raw.rows(); }
    Index seq_len() const { return raw.cols(); }
};

/// Descending-importance ordering per layer and its running sum.
struct PrioritySequence {
    std::vector<std::vector<Index>> order;  // order[l][j] = position ranked j
    LayerTable cumulative;                  // cumulative(l, j) = share captured by the top j+1

    Index layers() const { return cumulative.rows(); }
    Index seq_len() const { return cumulative.cols(); }
};

/// Column sums of one causal attention matrix: the mass each position receives.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> received_attention(
    const Eigen::MatrixBase<Derived>& attention) {
    return attention.colwise().sum().transpose();
}

/// Scales a nonnegative vector to unit sum. Throws ValidationError on an all-zero vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> normalize_importance(
    const Eigen::MatrixBase<Derived>& raw) {
    const auto total = raw.sum();
    if (!(total > 0)) {
        throw ValidationError("degenerate layer: importance sums to zero");
    }
    return raw / total;
}

/// Positions sorted by descending score; equal scores keep ascending position order.
template <typename Derived>
std::vector<Index> descending_order(const Eigen::MatrixBase<Derived>& scores) {
    std::vector<Index> order(static_cast<std::size_t>(scores.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return scores(a) > scores(b); });
    return order;
}

ImportanceProfile compute_importance(const AttentionTrace& trace);

/// Profile from an explicit raw table (L x N), as carried by shortcut-form traces.
ImportanceProfile importance_from_raw(const TraceMeta& meta, const LayerTable& raw);

PrioritySequence priority_sequence(const ImportanceProfile& profile);

/// Priority sequence of a normalized table directly.
PrioritySequence priority_sequence(const LayerTable& normalized);

}  // namespace kvbudget
