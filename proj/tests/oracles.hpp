// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force reference implementations. They deliberately avoid the library's
// code paths (no Eigen reductions, no std::sort, no lower_bound) so the tests
// compare two independent routes.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "kvbudget/trace.hpp"

namespace kvbudget::oracle {

using Row = std::vector<double>;

/// Mean over heads of column sums, by explicit loops.
inline std::vector<Row> column_sum_importance(const AttentionTrace& trace) {
    const auto layers = static_cast<std::size_t>(trace.meta.layers);
    const auto n = static_cast<std::size_t>(trace.meta.seq_len);
    std::vector<Row> raw(layers, Row(n, 0.0));
    for (std::size_t l = 0; l < layers; ++l) {
        const auto& heads = trace.attention[l];
        for (std::size_t col = 0; col < n; ++col) {
            double total = 0.0;
            for (const auto& a : heads) {
                for (std::size_t m = 0; m < n; ++m) {
                    total += a(static_cast<Index>(m), static_cast<Index>(col));
                }
            }
            raw[l][col] = total / static_cast<double>(heads.size());
        }
    }
    return raw;
}

inline Row normalize(const Row& raw) {
    double total = 0.0;
    for (double v : raw) total += v;
    Row out;
    for (double v : raw) out.push_back(v / total);
    return out;
}

/// Selection sort: repeatedly take the largest remaining value, earliest index on ties.
inline std::vector<Index> descending_order(const Row& values) {
    std::vector<bool> used(values.size(), false);
    std::vector<Index> order;
    for (std::size_t k = 0; k < values.size(); ++k) {
        std::size_t best = values.size();
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!used[i] && (best == values.size() || values[i] > values[best])) {
                best = i;
            }
        }
        used[best] = true;
        order.push_back(static_cast<Index>(best));
    }
    return order;
}

inline Row cumulative(const Row& normalized) {
    Row out;
    double running = 0.0;
    for (Index pos : descending_order(normalized)) {
        running += normalized[static_cast<std::size_t>(pos)];
        out.push_back(running);
    }
    return out;
}

/// 2 * (trapezoidal area under (0,0),(1/N,y0),...,(1,y_{N-1}) - 1/2).
inline double trapezoid_gini(const Row& cum) {
    const double width = 1.0 / static_cast<double>(cum.size());
    double area = 0.0;
    double prev = 0.0;
    for (double y : cum) {
        area += width * (prev + y) * 0.5;
        prev = y;
    }
    return 2.0 * (area - 0.5);
}

/// Smallest prefix size whose cumulative priority reaches p, by linear scan.
inline Index scan_count(const Row& cum, double p) {
    if (p <= 0.0) return 0;
    for (std::size_t j = 0; j < cum.size(); ++j) {
        if (cum[j] >= p) return static_cast<Index>(j + 1);
    }
    return static_cast<Index>(cum.size());
}

struct GridChoice {
    double p = 0.0;
    std::vector<Index> counts;
    double delta = 0.0;
};

/**
 * Scans every distinct cumulative-priority value as the threshold and keeps
 * the one whose summed ratio is closest to rL (over-budget side on ties).
 */
inline GridChoice grid_search(const std::vector<Row>& cums, double r) {
    const double n = static_cast<double>(cums.front().size());
    const double goal = r * static_cast<double>(cums.size());
    GridChoice best;
    bool have = false;
    for (const auto& row : cums) {
        for (double p : row) {
            GridChoice c;
            c.p = p;
            Index total = 0;
            for (const auto& other : cums) {
                c.counts.push_back(scan_count(other, p));
                total += c.counts.back();
            }
            c.delta = static_cast<double>(total) / n - goal;
            const double a = std::abs(c.delta);
            const double b = std::abs(best.delta);
            if (!have || a < b || (a == b && c.delta > best.delta)) {
                best = c;
                have = true;
            }
        }
    }
    return best;
}

/// Minimal sum |count/N - ratio| over every integer vector in [floor, N]^L with the given total.
inline double best_rounding_cost(const std::vector<double>& ratios, Index n, Index total, Index floor) {
    const std::size_t layers = ratios.size();
    std::vector<Index> counts(layers, floor);
    double best = std::numeric_limits<double>::infinity();
    std::function<void(std::size_t, Index)> recurse = [&](std::size_t l, Index used) {
        if (l == layers) {
            if (used != total) return;
            double cost = 0.0;
            for (std::size_t i = 0; i < layers; ++i) {
                cost += std::abs(static_cast<double>(counts[i]) / static_cast<double>(n) - ratios[i]);
            }
            best = std::min(best, cost);
            return;
        }
        for (Index c = floor; c <= n && used + c <= total; ++c) {
            counts[l] = c;
            recurse(l + 1, used + c);
        }
    };
    recurse(0, 0);
    return best;
}

/// One KV slot for the merge oracle: original per-head keys/values of every absorbed token.
struct MergeSlot {
    Index position = 0;
    std::vector<Index> members;  // original positions averaged into this slot, self first
};

/// Key rows per head of a merged slot: plain average of the original vectors.
inline Eigen::MatrixXd average_of(const std::vector<Index>& members,
                                  const std::vector<Eigen::MatrixXd>& originals) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(originals.front().rows(), originals.front().cols());
    for (Index m : members) {
        for (Index h = 0; h < sum.rows(); ++h) {
            for (Index d = 0; d < sum.cols(); ++d) {
                sum(h, d) += originals[static_cast<std::size_t>(m)](h, d);
            }
        }
    }
    return sum / static_cast<double>(members.size());
}

inline double cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Index row) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (Index d = 0; d < a.cols(); ++d) {
        dot += a(row, d) * b(row, d);
        na += a(row, d) * a(row, d);
        nb += b(row, d) * b(row, d);
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    return denom > 0.0 ? dot / denom : 0.0;
}

/// Brute-force merge target: argmax score, smaller position on ties.
inline std::size_t merge_target(bool by_feature, const Eigen::MatrixXd& evictee_keys, Index evictee_pos,
                                const std::vector<MergeSlot>& slots,
                                const std::vector<Eigen::MatrixXd>& slot_keys) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        double score = 0.0;
        if (by_feature) {
            for (Index h = 0; h < evictee_keys.rows(); ++h) {
                score += cosine(evictee_keys, slot_keys[i], h);
            }
            score /= static_cast<double>(evictee_keys.rows());
        } else {
            score = -std::abs(static_cast<double>(evictee_pos - slots[i].position));
        }
        if (score > best_score || (score == best_score && slots[i].position < slots[best].position)) {
            best = i;
            best_score = score;
        }
    }
    return best;
}

/// Random row-stochastic causal matrix (for building test traces).
inline Eigen::MatrixXd random_causal(std::mt19937_64& rng, Index n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (Index m = 0; m < n; ++m) {
        double s = 0.0;
        for (Index k = 0; k <= m; ++k) {
            a(m, k) = u(rng) + 1e-3;
            s += a(m, k);
        }
        for (Index k = 0; k <= m; ++k) a(m, k) /= s;
    }
    return a;
}

}  // namespace kvbudget::oracle
