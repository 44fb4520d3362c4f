// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbudget/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kvbudget {

void BudgetSpec::validate() const {
    if (!(r > 0.0) || r > 1.0) {
        throw ArgumentError("budget r must be in (0, 1]");
    }
    if (!(delta_tol >= 0.0)) {
        throw ArgumentError("delta_tol must be nonnegative");
    }
    if (max_steps < 1) {
        throw ArgumentError("max_steps must be at least 1");
    }
    if (min_tokens_per_layer < 0) {
        throw ArgumentError("min_tokens_per_layer must be nonnegative");
    }
}

Index BudgetSpec::target_tokens(Index layers, Index seq_len) const {
    return static_cast<Index>(std::llround(r * static_cast<double>(layers * seq_len)));
}

Index PrefixConfiguration::total_tokens() const {
    return std::accumulate(token_counts.begin(), token_counts.end(), Index{0});
}

std::string_view to_string(Policy policy) {
    switch (policy) {
        case Policy::PrefixKV: return "prefixkv";
        case Policy::Uniform: return "uniform";
        case Policy::Pyramid: return "pyramid";
        case Policy::Local: return "local";
    }
    return "unknown";
}

std::string_view to_string(ConfigSource source) {
    switch (source) {
        case ConfigSource::Online: return "online";
        case ConfigSource::Offline: return "offline";
        case ConfigSource::Baseline: return "baseline";
    }
    return "unknown";
}

Policy parse_policy(std::string_view name) {
    if (name == "prefixkv") return Policy::PrefixKV;
    if (name == "uniform") return Policy::Uniform;
    if (name == "pyramid") return Policy::Pyramid;
    if (name == "local") return Policy::Local;
    throw ArgumentError("unknown policy '" + std::string(name) + "'");
}

OfflineMethod parse_offline_method(std::string_view name) {
    if (name == "per-sample-mean" || name == "mean") return OfflineMethod::PerSampleMean;
    if (name == "pooled-curve" || name == "pooled") return OfflineMethod::PooledCurve;
    throw ArgumentError("unknown offline method '" + std::string(name) + "'");
}

Index count_at_threshold(const PrioritySequence& seq, Index layer, double p) {
    if (layer < 0 || layer >= seq.layers()) {
        throw ArgumentError("layer " + std::to_string(layer) + " out of range");
    }
    if (p <= 0.0) {
        return 0;
    }
    const auto row = seq.cumulative.row(layer);
    const Index n = row.size();
    // cumulative rows are nondecreasing, so the first qualifying prefix is a lower bound
    const auto* begin = row.data();
    const auto* it = std::lower_bound(begin, begin + n, p);
    // a full prefix that rounds just below 1 still holds all the information
    return it == begin + n ? n : static_cast<Index>(it - begin) + 1;
}

double ratio_at_threshold(const PrioritySequence& seq, Index layer, double p) {
    return static_cast<double>(count_at_threshold(seq, layer, p)) /
           static_cast<double>(seq.seq_len());
}

namespace {

double budget_delta(const PrioritySequence& seq, const BudgetSpec& budget, double p) {
    Index total = 0;
    for (Index l = 0; l < seq.layers(); ++l) {
        total += count_at_threshold(seq, l, p);
    }
    return static_cast<double>(total) / static_cast<double>(seq.seq_len()) -
           budget.r * static_cast<double>(seq.layers());
}

// Distinct cumulative values strictly inside (lo, hi), capped at 2, and whether lo is one of them.
struct Bracket {
    int inside = 0;
    bool lo_is_value = false;
};

Bracket inspect_bracket(const PrioritySequence& seq, double lo, double hi) {
    Bracket out;
    double first = 0.0;
    for (Index l = 0; l < seq.layers(); ++l) {
        const auto row = seq.cumulative.row(l);
        const auto* begin = row.data();
        const auto* end = begin + row.size();
        const auto* at = std::lower_bound(begin, end, lo);
        if (at != end && *at == lo) {
            out.lo_is_value = true;
        }
        for (const auto* it = std::upper_bound(begin, end, lo); it != end && *it < hi; ++it) {
            if (out.inside == 0) {
                first = *it;
                out.inside = 1;
            } else if (*it != first) {
                out.inside = 2;
                break;
            }
        }
    }
    return out;
}

// Smaller |delta| wins; on a tie the over-budget side is kept so finalize scales down.
bool better(double delta, double incumbent) {
    const double a = std::abs(delta);
    const double b = std::abs(incumbent);
    return a < b || (a == b && delta > incumbent);
}

}  // namespace

SearchResult binary_search(const PrioritySequence& seq, const BudgetSpec& budget) {
    budget.validate();
    if (seq.layers() < 1 || seq.seq_len() < 1) {
        throw ArgumentError("priority sequence is empty");
    }
    double lo = 0.0;
    double hi = 1.0;
    SearchResult best;
    bool have_best = false;
    bool lo_seen = false;
    bool hi_seen = false;
    Index steps = 0;
    while (lo < hi && steps < budget.max_steps) {
        const double p = (lo + hi) / 2.0;
        if (p <= lo || p >= hi) {
            break;  // midpoint collapsed in floating point
        }
        ++steps;
        const double delta = budget_delta(seq, budget, p);
        if (delta == 0.0 || std::abs(delta) <= budget.delta_tol) {
            return SearchResult{p, steps, delta, true};
        }
        if (!have_best || better(delta, best.delta_final)) {
            best = SearchResult{p, steps, delta, false};
            have_best = true;
        }
        if (delta < 0.0) {
            lo = p;
            lo_seen = true;
        } else {
            hi = p;
            hi_seen = true;
        }
        // Every threshold in (lo, hi) now reproduces an evaluated configuration.
        const Bracket br = inspect_bracket(seq, lo, hi);
        const bool lo_class = lo_seen && !br.lo_is_value;
        if ((br.inside == 0 && (hi_seen || lo_class)) || (br.inside == 1 && hi_seen && lo_class)) {
            break;
        }
    }
    best.steps = steps;
    return best;
}

std::vector<Index> realize_token_counts(Eigen::VectorXd& ratios, const BudgetSpec& budget,
                                        Index seq_len) {
    budget.validate();
    const Index layers = ratios.size();
    if (layers < 1 || seq_len < 1) {
        throw ArgumentError("need at least one layer and one token");
    }
    const Index floor_tokens = budget.min_tokens_per_layer;
    const Index target = budget.target_tokens(layers, seq_len);
    if (floor_tokens > seq_len || target < layers * floor_tokens) {
        throw BudgetError("infeasible budget: " + std::to_string(target) + " tokens for " +
                          std::to_string(layers) + " layers with a floor of " +
                          std::to_string(floor_tokens) + " each");
    }
    const double n = static_cast<double>(seq_len);
    const double lo = static_cast<double>(floor_tokens) / n;
    const double goal = budget.r * static_cast<double>(layers);

    const double sum = ratios.sum();
    if (!(sum > 0.0)) {
        ratios.setConstant(budget.r);
    } else if (sum != goal) {
        ratios *= goal / sum;
    }

    // Clamp to [lo, 1]. When that moves the total, search the scale t with
    // sum(clamp(t * shape, lo, 1)) = rL so the freed mass lands on the free layers.
    if ((ratios.array() < lo).any() || (ratios.array() > 1.0).any()) {
        const Eigen::ArrayXd shape = ratios.array().max(0.0);
        const auto filled = [&](double t) { return (t * shape).max(lo).min(1.0).sum(); };
        double a = 0.0;
        double b = 1.0;
        while (filled(b) < goal && b < 1e300) {
            b *= 2.0;
        }
        while (true) {
            const double mid = (a + b) / 2.0;
            if (mid <= a || mid >= b) {
                break;
            }
            (filled(mid) < goal ? a : b) = mid;
        }
        ratios = (b * shape).max(lo).min(1.0).matrix();
    }

    // Largest-remainder rounding to the exact integer target.
    std::vector<Index> counts(static_cast<std::size_t>(layers));
    std::vector<double> remainder(static_cast<std::size_t>(layers));
    Index total = 0;
    for (Index l = 0; l < layers; ++l) {
        const auto i = static_cast<std::size_t>(l);
        const double ideal = ratios(l) * n;
        const double whole = std::floor(ideal);
        remainder[i] = ideal - whole;
        counts[i] = std::clamp(static_cast<Index>(whole), floor_tokens, seq_len);
        total += counts[i];
    }
    std::vector<Index> by_remainder(static_cast<std::size_t>(layers));
    std::iota(by_remainder.begin(), by_remainder.end(), Index{0});
    std::stable_sort(by_remainder.begin(), by_remainder.end(), [&](Index a, Index b) {
        return remainder[static_cast<std::size_t>(a)] > remainder[static_cast<std::size_t>(b)];
    });
    while (total < target) {
        for (Index l : by_remainder) {
            auto& c = counts[static_cast<std::size_t>(l)];
            if (total < target && c < seq_len) {
                ++c;
                ++total;
            }
        }
    }
    while (total > target) {
        for (auto it = by_remainder.rbegin(); it != by_remainder.rend(); ++it) {
            auto& c = counts[static_cast<std::size_t>(*it)];
            if (total > target && c > floor_tokens) {
                --c;
                --total;
            }
        }
    }
    return counts;
}

PrefixConfiguration finalize_config(const PrioritySequence& seq, const SearchResult& result,
                                    const BudgetSpec& budget) {
    PrefixConfiguration config;
    config.budget = budget;
    config.policy = Policy::PrefixKV;
    config.source = ConfigSource::Online;
    config.seq_len = seq.seq_len();
    config.search = result;
    config.ratios.resize(seq.layers());
    for (Index l = 0; l < seq.layers(); ++l) {
        config.ratios(l) = ratio_at_threshold(seq, l, result.p);
    }
    config.token_counts = realize_token_counts(config.ratios, budget, config.seq_len);
    return config;
}

PrefixConfiguration plan_online(const PrioritySequence& seq, const BudgetSpec& budget) {
    return finalize_config(seq, binary_search(seq, budget), budget);
}

namespace {

// Step-function evaluation of a cumulative curve of length n at prefix size k out of grid.
double resample(const auto& row, Index n, Index j, Index grid) {
    const Index k = ((j + 1) * n) / grid;
    return k == 0 ? 0.0 : row(k - 1);
}

}  // namespace

PrefixConfiguration estimate_offline(std::span<const PrioritySequence> samples,
                                     const BudgetSpec& budget, OfflineMethod method) {
    if (samples.empty()) {
        throw ArgumentError("offline estimation needs at least one sample");
    }
    const Index layers = samples.front().layers();
    Index grid = 0;
    for (const auto& s : samples) {
        if (s.layers() != layers) {
            throw ArgumentError("samples disagree on the number of layers");
        }
        grid = std::max(grid, s.seq_len());
    }

    PrefixConfiguration config;
    if (method == OfflineMethod::PerSampleMean) {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(layers);
        double p_sum = 0.0;
        Index max_steps = 0;
        bool all_converged = true;
        for (const auto& s : samples) {
            const auto online = plan_online(s, budget);
            mean += online.ratios;
            p_sum += online.search->p;
            max_steps = std::max(max_steps, online.search->steps);
            all_converged = all_converged && online.search->converged;
        }
        const double count = static_cast<double>(samples.size());
        mean /= count;
        config.budget = budget;
        config.seq_len = grid;
        config.search = SearchResult{p_sum / count, max_steps,
                                     mean.sum() - budget.r * static_cast<double>(layers),
                                     all_converged};
        config.ratios = mean;
        config.token_counts = realize_token_counts(config.ratios, budget, grid);
    } else {
        PrioritySequence pooled;
        pooled.cumulative = LayerTable::Zero(layers, grid);
        for (const auto& s : samples) {
            for (Index l = 0; l < layers; ++l) {
                for (Index j = 0; j < grid; ++j) {
                    pooled.cumulative(l, j) += resample(s.cumulative.row(l), s.seq_len(), j, grid);
                }
            }
        }
        pooled.cumulative /= static_cast<double>(samples.size());
        config = plan_online(pooled, budget);
    }
    config.policy = Policy::PrefixKV;
    config.source = ConfigSource::Offline;
    config.samples = static_cast<Index>(samples.size());
    return config;
}

PrefixConfiguration baseline_config(Policy kind, const BudgetSpec& budget, Index layers,
                                    Index seq_len, const BaselineParams& params) {
    budget.validate();
    if (layers < 1 || seq_len < 1) {
        throw ArgumentError("need at least one layer and one token");
    }
    PrefixConfiguration config;
    config.budget = budget;
    config.policy = kind;
    config.source = ConfigSource::Baseline;
    config.seq_len = seq_len;
    config.ratios = Eigen::VectorXd::Constant(layers, budget.r);
    switch (kind) {
        case Policy::Uniform:
            break;
        case Policy::Pyramid:
            if (layers > 1) {
                const double step = std::min(budget.r, 1.0 - budget.r) / 2.0;
                for (Index l = 0; l < layers; ++l) {
                    const double t = static_cast<double>(2 * l) / static_cast<double>(layers - 1);
                    config.ratios(l) = budget.r + step * (1.0 - t);
                }
            }
            break;
        case Policy::Local:
            if (params.sink_count < 0) {
                throw ArgumentError("sink_count must be nonnegative");
            }
            config.sink_count = params.sink_count;
            break;
        case Policy::PrefixKV:
            throw ArgumentError("prefixkv is not a baseline policy");
    }
    config.token_counts = realize_token_counts(config.ratios, budget, seq_len);
    return config;
}

PrefixConfiguration rescale_config(const PrefixConfiguration& config, Index seq_len) {
    if (seq_len == config.seq_len) {
        return config;
    }
    PrefixConfiguration out = config;
    out.seq_len = seq_len;
    out.token_counts = realize_token_counts(out.ratios, out.budget, seq_len);
    return out;
}

}  // namespace kvbudget
