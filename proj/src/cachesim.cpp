// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbudget/cachesim.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "json_util.hpp"

namespace kvbudget {

std::string_view to_string(MergePolicy policy) {
    switch (policy) {
        case MergePolicy::None: return "none";
        case MergePolicy::Position: return "position";
        case MergePolicy::Feature: return "feature";
    }
    return "unknown";
}

MergePolicy parse_merge_policy(std::string_view name) {
    if (name == "none") return MergePolicy::None;
    if (name == "position") return MergePolicy::Position;
    if (name == "feature") return MergePolicy::Feature;
    throw ArgumentError("unknown merge policy '" + std::string(name) + "'");
}

Index CacheState::capacity(Index layer) const {
    const auto l = static_cast<std::size_t>(layer);
    const double ratio = config.ratios(layer);
    const auto grown = static_cast<Index>(std::floor(ratio * static_cast<double>(current_len))) -
                       static_cast<Index>(std::floor(ratio * static_cast<double>(prefill_len)));
    return std::max(config.budget.min_tokens_per_layer, config.token_counts[l] + grown);
}

namespace {

std::vector<Index> kept_positions(const PrefixConfiguration& config, Index layer,
                                  const LayerTable& normalized) {
    const Index n = normalized.cols();
    const Index count = config.token_counts[static_cast<std::size_t>(layer)];
    std::vector<Index> kept;
    if (config.policy == Policy::Local) {
        const Index sinks = std::min(config.sink_count, count);
        for (Index pos = 0; pos < sinks; ++pos) {
            kept.push_back(pos);
        }
        for (Index pos = n - 1; pos >= sinks && static_cast<Index>(kept.size()) < count; --pos) {
            kept.push_back(pos);
        }
    } else {
        const auto order = descending_order(normalized.row(layer));
        kept.assign(order.begin(), order.begin() + count);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

CacheEntry make_entry(Index position, double importance,
                      const std::vector<std::vector<HeadKv>>& kv, Index layer) {
    CacheEntry e;
    e.position = position;
    e.importance_acc = importance;
    if (!kv.empty()) {
        const auto& heads = kv[static_cast<std::size_t>(layer)];
        const Index dim = heads.front().keys.cols();
        e.keys.resize(static_cast<Index>(heads.size()), dim);
        e.values.resize(static_cast<Index>(heads.size()), dim);
        for (std::size_t h = 0; h < heads.size(); ++h) {
            e.keys.row(static_cast<Index>(h)) = heads[h].keys.row(position);
            e.values.row(static_cast<Index>(h)) = heads[h].values.row(position);
        }
    }
    return e;
}

}  // namespace

CacheState prefill_compress(const ImportanceProfile& profile,
                            const std::vector<std::vector<HeadKv>>& kv,
                            const PrefixConfiguration& config, const SimulationOptions& options) {
    const Index layers = profile.layers();
    const Index n = profile.seq_len();
    if (config.layers() != layers || static_cast<Index>(config.token_counts.size()) != layers) {
        throw ValidationError("configuration has " + std::to_string(config.layers()) +
                              " layers, trace has " + std::to_string(layers));
    }
    if (config.seq_len != n) {
        throw ValidationError("configuration planned for " + std::to_string(config.seq_len) +
                              " tokens, prefill has " + std::to_string(n));
    }
    for (Index c : config.token_counts) {
        if (c < 0 || c > n) {
            throw ValidationError("token count " + std::to_string(c) + " exceeds sequence length");
        }
    }
    if (options.merge == MergePolicy::Feature && kv.empty()) {
        throw ConfigError("feature merging needs key/value vectors in the trace");
    }
    if (options.protect_distance < 0) {
        throw ArgumentError("protect_distance must be nonnegative");
    }

    CacheState state;
    state.config = config;
    state.prefill_len = n;
    state.current_len = n;
    state.merge = options.merge;
    state.layer_caches.resize(static_cast<std::size_t>(layers));
    state.hard_evicted.assign(static_cast<std::size_t>(layers), 0);

    for (Index l = 0; l < layers; ++l) {
        auto& cache = state.layer_caches[static_cast<std::size_t>(l)];
        const auto kept = kept_positions(config, l, profile.normalized);
        std::vector<bool> is_kept(static_cast<std::size_t>(n), false);
        for (Index pos : kept) {
            is_kept[static_cast<std::size_t>(pos)] = true;
            cache.push_back(make_entry(pos, profile.raw(l, pos), kv, l));
        }
        // Targets are matched against the retained set as it stood before any merge.
        const std::vector<CacheEntry> snapshot = cache;
        for (Index pos = 0; pos < n; ++pos) {
            if (is_kept[static_cast<std::size_t>(pos)]) {
                continue;
            }
            EvictionRecord record{l, pos, std::nullopt};
            if (options.merge != MergePolicy::None && !cache.empty()) {
                const CacheEntry evictee = make_entry(pos, profile.raw(l, pos), kv, l);
                const Index target = select_merge_target(options.merge, evictee, snapshot);
                absorb(cache[static_cast<std::size_t>(target)], evictee);
                record.merged_into = cache[static_cast<std::size_t>(target)].position;
            } else {
                ++state.hard_evicted[static_cast<std::size_t>(l)];
            }
            state.last_evictions.push_back(record);
        }
    }

    Index smallest = options.protect_distance;
    for (Index l = 0; l < layers; ++l) {
        smallest = std::min(smallest, state.capacity(l));
    }
    state.protect_distance = std::max<Index>(0, smallest);
    return state;
}

CacheState prefill_compress(const AttentionTrace& trace, const PrefixConfiguration& config,
                            const SimulationOptions& options) {
    return prefill_compress(compute_importance(trace), trace.kv, config, options);
}

void decode_step(CacheState& state, const DecodeInput& input) {
    const Index layers = state.layers();
    if (static_cast<Index>(input.attention.size()) != layers) {
        throw ValidationError("decode input covers " + std::to_string(input.attention.size()) +
                              " layers, cache has " + std::to_string(layers));
    }
    const bool has_kv = !input.keys.empty();
    if (has_kv && (static_cast<Index>(input.keys.size()) != layers ||
                   static_cast<Index>(input.values.size()) != layers)) {
        throw ValidationError("decode key/value vectors must cover every layer");
    }
    if (state.merge == MergePolicy::Feature && !has_kv) {
        throw ConfigError("feature merging needs key/value vectors for every decoded token");
    }

    for (Index l = 0; l < layers; ++l) {
        const auto& rows = input.attention[static_cast<std::size_t>(l)];
        const auto live = static_cast<Index>(state.layer_caches[static_cast<std::size_t>(l)].size());
        if (rows.empty()) {
            throw ValidationError("no attention heads for layer " + std::to_string(l));
        }
        for (std::size_t h = 0; h < rows.size(); ++h) {
            if (rows[h].size() != live + 1) {
                throw ValidationError("attention row at layer " + std::to_string(l) + " head " +
                                      std::to_string(h) + " has " + std::to_string(rows[h].size()) +
                                      " entries, cache holds " + std::to_string(live) + " + 1");
            }
            if ((rows[h].array() < 0.0).any() ||
                std::abs(rows[h].sum() - 1.0) > kRowSumTolerance) {
                throw ValidationError("unnormalized attention row at layer " + std::to_string(l) +
                                      " head " + std::to_string(h));
            }
        }
    }

    state.last_evictions.clear();
    ++state.current_len;
    const Index newest = state.newest_position();
    const Index window = state.protect_distance;

    for (Index l = 0; l < layers; ++l) {
        auto& cache = state.layer_caches[static_cast<std::size_t>(l)];
        const auto& rows = input.attention[static_cast<std::size_t>(l)];
        const double heads = static_cast<double>(rows.size());
        const auto live = static_cast<Index>(cache.size());

        Eigen::VectorXd received = Eigen::VectorXd::Zero(live + 1);
        for (const auto& row : rows) {
            received += row;
        }
        received /= heads;
        for (Index j = 0; j < live; ++j) {
            cache[static_cast<std::size_t>(j)].importance_acc += received(j);
        }

        CacheEntry fresh;
        fresh.position = newest;
        fresh.importance_acc = received(live);
        if (has_kv) {
            fresh.keys = input.keys[static_cast<std::size_t>(l)];
            fresh.values = input.values[static_cast<std::size_t>(l)];
        }
        cache.push_back(std::move(fresh));

        const Index cap = state.capacity(l);
        while (static_cast<Index>(cache.size()) > cap) {
            // Entries are position-ordered, so the unprotected ones form a prefix.
            const auto eligible = static_cast<std::size_t>(
                std::count_if(cache.begin(), cache.end(),
                              [&](const CacheEntry& e) { return newest - e.position >= window; }));
            if (eligible == 0) {
                throw ValidationError("no evictable entry outside the protected window");
            }
            std::size_t victim = 0;
            for (std::size_t i = 1; i < eligible; ++i) {
                if (cache[i].importance_acc < cache[victim].importance_acc) {
                    victim = i;
                }
            }
            CacheEntry evictee = std::move(cache[victim]);
            cache.erase(cache.begin() + static_cast<std::ptrdiff_t>(victim));

            EvictionRecord record{l, evictee.position, std::nullopt};
            const std::size_t targets = eligible - 1;
            if (state.merge != MergePolicy::None && targets > 0) {
                const Index t = merge(state.merge, evictee, std::span<CacheEntry>(cache.data(), targets));
                record.merged_into = cache[static_cast<std::size_t>(t)].position;
            } else {
                state.hard_evicted[static_cast<std::size_t>(l)] += evictee.weight();
            }
            state.last_evictions.push_back(record);
        }
    }
}

Eigen::VectorXd retained_info(const CacheState& state, const ImportanceProfile& profile) {
    if (profile.layers() != state.layers()) {
        throw ArgumentError("profile and cache disagree on the number of layers");
    }
    // Kept raw mass over the raw mass of every position seen so far, both summed in
    // position order, so a cache that dropped nothing gives exactly 1.
    const Index seen = std::min(profile.seq_len(), state.current_len);
    Eigen::VectorXd info = Eigen::VectorXd::Zero(state.layers());
    for (Index l = 0; l < state.layers(); ++l) {
        double total = 0.0;
        for (Index pos = 0; pos < seen; ++pos) {
            total += profile.raw(l, pos);
        }
        double kept = 0.0;
        for (const auto& e : state.layer_caches[static_cast<std::size_t>(l)]) {
            if (e.position >= profile.seq_len()) {
                throw ArgumentError("profile does not cover position " + std::to_string(e.position));
            }
            kept += profile.raw(l, e.position);
        }
        info(l) = kept / total;
    }
    return info;
}

std::string step_log_to_json_line(const StepLog& log) {
    nlohmann::json doc;
    doc["step"] = log.step;
    doc["layer_sizes"] = log.layer_sizes;
    nlohmann::json evicted = nlohmann::json::array();
    for (const auto& r : log.evicted) {
        evicted.push_back({{"layer", r.layer},
                           {"pos", r.position},
                           {"merged_into", r.merged_into ? nlohmann::json(*r.merged_into)
                                                         : nlohmann::json(nullptr)}});
    }
    doc["evicted"] = std::move(evicted);
    doc["retained_info"] = detail::vector_to_json(log.retained_info);
    return doc.dump();
}

namespace {

StepLog snapshot(const CacheState& state, const ImportanceProfile& profile, Index step) {
    StepLog log;
    log.step = step;
    for (const auto& cache : state.layer_caches) {
        log.layer_sizes.push_back(static_cast<Index>(cache.size()));
    }
    log.evicted = state.last_evictions;
    log.retained_info = retained_info(state, profile);
    return log;
}

}  // namespace

ReplayResult replay_trace(const AttentionTrace& trace, const PrefixConfiguration& config,
                          Index decode_steps, const SimulationOptions& options) {
    if (!trace.has_attention()) {
        throw ValidationError("decode replay needs a full-form trace with attention matrices");
    }
    const Index n = trace.meta.seq_len;
    if (decode_steps < 0 || decode_steps >= n) {
        throw ArgumentError("decode steps must leave at least one prompt token");
    }
    const Index prompt = n - decode_steps;
    const auto layers = static_cast<std::size_t>(trace.meta.layers);

    AttentionTrace prefix;
    prefix.meta = trace.meta;
    prefix.meta.seq_len = prompt;
    prefix.attention.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        for (const auto& a : trace.attention[l]) {
            prefix.attention[l].push_back(a.topLeftCorner(prompt, prompt));
        }
    }
    if (trace.has_kv()) {
        prefix.kv.resize(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            for (const auto& head : trace.kv[l]) {
                prefix.kv[l].push_back(HeadKv{head.keys.topRows(prompt), head.values.topRows(prompt)});
            }
        }
    }

    ReplayResult result;
    result.profile = compute_importance(trace);
    result.state = prefill_compress(prefix, config, options);
    result.log.push_back(snapshot(result.state, result.profile, 0));

    for (Index m = prompt; m < n; ++m) {
        DecodeInput input;
        input.attention.resize(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            const auto& cache = result.state.layer_caches[l];
            for (const auto& a : trace.attention[l]) {
                Eigen::VectorXd row(static_cast<Index>(cache.size()) + 1);
                for (std::size_t j = 0; j < cache.size(); ++j) {
                    row(static_cast<Index>(j)) = a(m, cache[j].position);
                }
                row(row.size() - 1) = a(m, m);
                const double sum = row.sum();
                if (sum > 0.0) {
                    row /= sum;
                } else {
                    row.setConstant(1.0 / static_cast<double>(row.size()));
                }
                input.attention[l].push_back(std::move(row));
            }
            if (trace.has_kv()) {
                const auto& heads = trace.kv[l];
                Eigen::MatrixXd k(static_cast<Index>(heads.size()), trace.kv_dim());
                Eigen::MatrixXd v(static_cast<Index>(heads.size()), trace.kv_dim());
                for (std::size_t h = 0; h < heads.size(); ++h) {
                    k.row(static_cast<Index>(h)) = heads[h].keys.row(m);
                    v.row(static_cast<Index>(h)) = heads[h].values.row(m);
                }
                input.keys.push_back(std::move(k));
                input.values.push_back(std::move(v));
            }
        }
        decode_step(result.state, input);
        result.log.push_back(snapshot(result.state, result.profile, m - prompt + 1));
    }
    return result;
}

}  // namespace kvbudget
