// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "kvbudget/cachesim.hpp"

namespace kvbudget {

namespace {

template <typename A, typename B>
double cosine(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    const double denom = a.norm() * b.norm();
    return denom > 0.0 ? a.dot(b) / denom : 0.0;
}

}  // namespace

double match_score(MergePolicy policy, const CacheEntry& evictee, const CacheEntry& candidate) {
    switch (policy) {
        case MergePolicy::Position:
            return -std::abs(static_cast<double>(evictee.position - candidate.position));
        case MergePolicy::Feature: {
            if (evictee.keys.size() == 0 || candidate.keys.size() == 0) {
                throw ConfigError("feature merging needs key vectors");
            }
            double sum = 0.0;
            for (Index h = 0; h < evictee.keys.rows(); ++h) {
                sum += cosine(evictee.keys.row(h), candidate.keys.row(h));
            }
            return sum / static_cast<double>(evictee.keys.rows());
        }
        case MergePolicy::None:
            break;
    }
    throw ConfigError("merge policy 'none' has no matching score");
}

Index select_merge_target(MergePolicy policy, const CacheEntry& evictee,
                          std::span<const CacheEntry> retained) {
    if (retained.empty()) {
        throw ArgumentError("no retained entry to merge into");
    }
    Index best = 0;
    double best_score = match_score(policy, evictee, retained[0]);
    for (std::size_t i = 1; i < retained.size(); ++i) {
        const double score = match_score(policy, evictee, retained[i]);
        if (score > best_score ||
            (score == best_score &&
             retained[i].position < retained[static_cast<std::size_t>(best)].position)) {
            best = static_cast<Index>(i);
            best_score = score;
        }
    }
    return best;
}

void absorb(CacheEntry& target, const CacheEntry& evictee) {
    const double wt = static_cast<double>(target.weight());
    const double we = static_cast<double>(evictee.weight());
    if (target.keys.size() != 0 && evictee.keys.size() != 0) {
        target.keys = (target.keys * wt + evictee.keys * we) / (wt + we);
        target.values = (target.values * wt + evictee.values * we) / (wt + we);
    }
    target.merged_from.push_back(evictee.position);
    target.merged_from.insert(target.merged_from.end(), evictee.merged_from.begin(),
                              evictee.merged_from.end());
}

Index merge(MergePolicy policy, const CacheEntry& evictee, std::span<CacheEntry> retained) {
    const Index target =
        select_merge_target(policy, evictee, std::span<const CacheEntry>(retained.data(), retained.size()));
    absorb(retained[static_cast<std::size_t>(target)], evictee);
    return target;
}

}  // namespace kvbudget
