// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvbudget/allocator.hpp"
#include "kvbudget/common.hpp"
#include "kvbudget/importance.hpp"
#include "kvbudget/trace.hpp"

namespace kvbudget {

enum class MergePolicy { None, Position, Feature };

std::string_view to_string(MergePolicy policy);
MergePolicy parse_merge_policy(std::string_view name);

/// One live KV slot. keys/values hold one row per head and are empty when the run has no vectors.
struct CacheEntry {
    Index position = 0;
    double importance_acc = 0.0;
    Eigen::MatrixXd keys;
    Eigen::MatrixXd values;
    std::vector<Index> merged_from;

    /// Number of original tokens averaged into this entry.
    Index weight() const { return 1 + static_cast<Index>(merged_from.size()); }
};

struct EvictionRecord {
    Index layer = 0;
    Index position = 0;
    std::optional<Index> merged_into;

    bool operator==(const EvictionRecord&) const = default;
};

struct SimulationOptions {
    Index protect_distance = 10;
    MergePolicy merge = MergePolicy::None;
};

/**
 * Per-layer simulated KV cache. Single writer: decode_step mutates it in place.
 *
 * Layer l may hold at most
 *   max(min_tokens, token_counts[l] + floor(R_l * len) - floor(R_l * prefill_len))
 * entries once `len` tokens have been processed, which starts at the prefill
 * allocation and grows in proportion to R_l.
 */
struct CacheState {
    std::vector<std::vector<CacheEntry>> layer_caches;
    PrefixConfiguration config;
    Index prefill_len = 0;
    Index current_len = 0;
    Index protect_distance = 0;  // effective window, never wider than the smallest capacity
    MergePolicy merge = MergePolicy::None;
    std::vector<Index> hard_evicted;  // original tokens dropped without a merge target, per layer
    std::vector<EvictionRecord> last_evictions;

    Index layers() const { return static_cast<Index>(layer_caches.size()); }
    Index capacity(Index layer) const;
    Index newest_position() const { return current_len - 1; }
};

/// Keeps token_counts[l] entries per layer: top importance, or sinks plus most recent for `local`.
CacheState prefill_compress(const AttentionTrace& trace, const PrefixConfiguration& config,
                            const SimulationOptions& options = {});

/// Same, from a precomputed prefill profile and optional per-layer/per-head vectors.
CacheState prefill_compress(const ImportanceProfile& profile,
                            const std::vector<std::vector<HeadKv>>& kv,
                            const PrefixConfiguration& config, const SimulationOptions& options = {});

/// Attention of one new token: rows[l][h] spans the live entries of layer l (in cache order) then itself.
struct DecodeInput {
    std::vector<std::vector<Eigen::VectorXd>> attention;
    std::vector<Eigen::MatrixXd> keys;    // [l], heads x dim; empty when no vectors
    std::vector<Eigen::MatrixXd> values;
};

void decode_step(CacheState& state, const DecodeInput& input);

/// Matching score c(evictee, candidate): -|m - n| or the head-averaged key cosine similarity.
double match_score(MergePolicy policy, const CacheEntry& evictee, const CacheEntry& candidate);

/// argmax of match_score over `retained`; ties go to the smaller position. Returns an index into `retained`.
Index select_merge_target(MergePolicy policy, const CacheEntry& evictee,
                          std::span<const CacheEntry> retained);

/// Folds `evictee` into `target`: keys and values become the equal-weight mean of every absorbed original.
void absorb(CacheEntry& target, const CacheEntry& evictee);

/// select_merge_target + absorb. Returns the index of the updated entry.
Index merge(MergePolicy policy, const CacheEntry& evictee, std::span<CacheEntry> retained);

/// Share of the importance of the positions seen so far still held per layer.
Eigen::VectorXd retained_info(const CacheState& state, const ImportanceProfile& profile);

struct StepLog {
    Index step = 0;  // 0 is the post-prefill compression
    std::vector<Index> layer_sizes;
    std::vector<EvictionRecord> evicted;
    Eigen::VectorXd retained_info;
};

std::string step_log_to_json_line(const StepLog& log);

struct ReplayResult {
    CacheState state;
    std::vector<StepLog> log;
    ImportanceProfile profile;  // of the whole trace, used for retained_info
};

/**
 * Prefills on the first N - decode_steps tokens of a full-form trace, then
 * replays the remaining rows as decode steps. Each replayed row is restricted
 * to the live entries plus the token itself and renormalized.
 */
ReplayResult replay_trace(const AttentionTrace& trace, const PrefixConfiguration& config,
                          Index decode_steps, const SimulationOptions& options = {});

}  // namespace kvbudget
