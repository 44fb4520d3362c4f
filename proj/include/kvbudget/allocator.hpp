// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvbudget/common.hpp"
#include "kvbudget/importance.hpp"

namespace kvbudget {

struct BudgetSpec {
    double r = 0.5;
    double delta_tol = 0.025;  // on sum(R_l) - rL, in summed-ratio units
    Index max_steps = 32;
    Index min_tokens_per_layer = 1;

    void validate() const;

    /// round(r * L * N): the exact number of tokens a finalized configuration keeps.
    Index target_tokens(Index layers, Index seq_len) const;
};

struct SearchResult {
    double p = 0.0;
    Index steps = 0;
    double delta_final = 0.0;
    bool converged = false;
};

enum class Policy { PrefixKV, Uniform, Pyramid, Local };
enum class ConfigSource { Online, Offline, Baseline };
enum class OfflineMethod { PerSampleMean, PooledCurve };

std::string_view to_string(Policy policy);
std::string_view to_string(ConfigSource source);
Policy parse_policy(std::string_view name);
OfflineMethod parse_offline_method(std::string_view name);

/**
 * Per-layer retention plan. `ratios` are the scaled, clamped retention
 * fractions; `token_counts` is their largest-remainder realization at
 * `seq_len`, summing to exactly round(r * L * seq_len).
 */
struct PrefixConfiguration {
    BudgetSpec budget;
    Policy policy = Policy::PrefixKV;
    ConfigSource source = ConfigSource::Online;
    Index samples = 1;
    Index seq_len = 0;
    Index sink_count = 0;  // local policy only
    Eigen::VectorXd ratios;
    std::vector<Index> token_counts;
    std::optional<SearchResult> search;  // empty for baselines

    Index layers() const { return ratios.size(); }
    Index total_tokens() const;
};

/// Smallest prefix size j+1 with cumulative(layer, j) >= p; 0 when p <= 0.
Index count_at_threshold(const PrioritySequence& seq, Index layer, double p);

/// count_at_threshold as a fraction of N.
double ratio_at_threshold(const PrioritySequence& seq, Index layer, double p);

/// Bisection on the retention threshold p until the summed ratios meet rL.
SearchResult binary_search(const PrioritySequence& seq, const BudgetSpec& budget);

PrefixConfiguration finalize_config(const PrioritySequence& seq, const SearchResult& result,
                                    const BudgetSpec& budget);

/// binary_search followed by finalize_config.
PrefixConfiguration plan_online(const PrioritySequence& seq, const BudgetSpec& budget);

/**
 * Scales `ratios` in place to sum to rL, clamps them to [min_tokens/N, 1]
 * (re-spreading whatever the clamp removed over the unclamped layers), and
 * returns largest-remainder token counts summing to round(r * L * N).
 * Throws BudgetError when the floor cannot fit the budget.
 */
std::vector<Index> realize_token_counts(Eigen::VectorXd& ratios, const BudgetSpec& budget,
                                        Index seq_len);

PrefixConfiguration estimate_offline(std::span<const PrioritySequence> samples,
                                     const BudgetSpec& budget,
                                     OfflineMethod method = OfflineMethod::PerSampleMean);

struct BaselineParams {
    Index sink_count = 4;
};

PrefixConfiguration baseline_config(Policy kind, const BudgetSpec& budget, Index layers,
                                    Index seq_len, const BaselineParams& params = {});

/// Same plan realized at a different sequence length (same ratios, same exact-budget rule).
PrefixConfiguration rescale_config(const PrefixConfiguration& config, Index seq_len);

std::string config_to_json_text(const PrefixConfiguration& config);
PrefixConfiguration config_from_json_text(const std::string& text);
PrefixConfiguration load_config(const std::filesystem::path& path);
void save_config(const PrefixConfiguration& config, const std::filesystem::path& path);

}  // namespace kvbudget
