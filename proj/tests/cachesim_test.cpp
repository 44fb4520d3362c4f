// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"
#include "kvbudget/cachesim.hpp"
#include "oracles.hpp"

using namespace kvbudget;

namespace {

LayerTable one_row(std::vector<double> values) {
    LayerTable t(1, static_cast<Index>(values.size()));
    for (std::size_t j = 0; j < values.size(); ++j) t(0, static_cast<Index>(j)) = values[j];
    return t;
}

PrefixConfiguration manual_config(std::vector<Index> counts, std::vector<double> ratios, Index n,
                                  Policy policy = Policy::PrefixKV) {
    PrefixConfiguration c;
    c.policy = policy;
    c.seq_len = n;
    c.token_counts = std::move(counts);
    c.ratios = Eigen::Map<const Eigen::VectorXd>(ratios.data(), static_cast<Index>(ratios.size()));
    return c;
}

std::vector<Index> positions(const std::vector<CacheEntry>& cache) {
    std::vector<Index> out;
    for (const auto& e : cache) out.push_back(e.position);
    return out;
}

CacheEntry keyed(Index pos, std::vector<double> key) {
    CacheEntry e;
    e.position = pos;
    e.keys = Eigen::Map<const Eigen::RowVectorXd>(key.data(), static_cast<Index>(key.size()));
    e.values = e.keys * 2.0;
    return e;
}

/// Hand-built single-layer cache holding positions 0..n-1 with the given accumulators.
CacheState hand_state(const std::vector<double>& acc, Index capacity, Index protect) {
    CacheState s;
    const auto n = static_cast<Index>(acc.size());
    // A tiny ratio keeps capacity flat over one step.
    s.config = manual_config({capacity}, {1e-9}, n);
    s.prefill_len = n;
    s.current_len = n;
    s.protect_distance = protect;
    s.layer_caches.resize(1);
    s.hard_evicted.assign(1, 0);
    for (Index pos = 0; pos < n; ++pos) {
        CacheEntry e;
        e.position = pos;
        e.importance_acc = acc[static_cast<std::size_t>(pos)];
        s.layer_caches[0].push_back(e);
    }
    return s;
}

DecodeInput uniform_input(Index live) {
    DecodeInput in;
    in.attention = {{Eigen::VectorXd::Constant(live + 1, 1.0 / static_cast<double>(live + 1))}};
    return in;
}

}  // namespace

TEST_CASE("prefill keeps the top-importance positions") {
    const auto profile = importance_from_raw(TraceMeta{1, 1, 4, "", std::nullopt}, one_row({0.7, 0.2, 0.05, 0.05}));
    const auto state = prefill_compress(profile, {}, manual_config({2}, {0.5}, 4));
    CHECK(positions(state.layer_caches[0]) == std::vector<Index>{0, 1});
    CHECK(state.layer_caches[0][0].importance_acc == doctest::Approx(0.7));
    CHECK(state.last_evictions.size() == 2);
    CHECK(retained_info(state, profile)(0) == doctest::Approx(0.9));
}

TEST_CASE("prefill tie-break prefers earlier positions") {
    const auto profile = importance_from_raw(TraceMeta{1, 1, 4, "", std::nullopt}, one_row({0.1, 0.3, 0.3, 0.3}));
    const auto state = prefill_compress(profile, {}, manual_config({2}, {0.5}, 4));
    CHECK(positions(state.layer_caches[0]) == std::vector<Index>{1, 2});
}

TEST_CASE("full count keeps everything for every policy") {
    const auto profile = importance_from_raw(TraceMeta{1, 1, 4, "", std::nullopt}, one_row({0.7, 0.2, 0.05, 0.05}));
    for (auto policy : {Policy::PrefixKV, Policy::Uniform, Policy::Pyramid, Policy::Local}) {
        const auto state = prefill_compress(profile, {}, manual_config({4}, {1.0}, 4, policy));
        CHECK(positions(state.layer_caches[0]) == std::vector<Index>{0, 1, 2, 3});
        CHECK(retained_info(state, profile)(0) == doctest::Approx(1.0));
    }
}

TEST_CASE("local policy keeps sinks and the most recent tokens") {
    const auto profile = importance_from_raw(TraceMeta{1, 1, 4, "", std::nullopt}, one_row({0.05, 0.7, 0.2, 0.05}));
    auto config = manual_config({2}, {0.5}, 4, Policy::Local);
    config.sink_count = 1;
    const auto state = prefill_compress(profile, {}, config);
    CHECK(positions(state.layer_caches[0]) == std::vector<Index>{0, 3});
}

TEST_CASE("single retained token holds exactly its share") {
    const auto profile = importance_from_raw(TraceMeta{1, 1, 4, "", std::nullopt}, one_row({0.05, 0.7, 0.2, 0.05}));
    const auto state = prefill_compress(profile, {}, manual_config({1}, {0.25}, 4));
    CHECK(retained_info(state, profile)(0) == doctest::Approx(0.7));
}

TEST_CASE("prefill rejects mismatched configurations") {
    const auto profile = importance_from_raw(TraceMeta{1, 1, 4, "", std::nullopt}, one_row({0.7, 0.2, 0.05, 0.05}));
    CHECK_THROWS_AS(prefill_compress(profile, {}, manual_config({2}, {0.5}, 5)), ValidationError);
    CHECK_THROWS_AS(prefill_compress(profile, {}, manual_config({5}, {1.0}, 4)), ValidationError);
    CHECK_THROWS_AS(prefill_compress(profile, {}, manual_config({2, 2}, {0.5, 0.5}, 4)), ValidationError);
    SimulationOptions feature;
    feature.merge = MergePolicy::Feature;
    CHECK_THROWS_AS(prefill_compress(profile, {}, manual_config({2}, {0.5}, 4), feature), ConfigError);
}

TEST_CASE("decode evicts the lowest eligible accumulator") {
    // Positions 0..4 plus the new token 5; capacity 5, window 2. Position 1 sits at distance 4.
    auto state = hand_state({0.9, 0.05, 0.8, 0.7, 0.6}, 5, 2);
    REQUIRE(state.capacity(0) == 5);
    decode_step(state, uniform_input(5));
    CHECK(positions(state.layer_caches[0]) == std::vector<Index>{0, 2, 3, 4, 5});
    REQUIRE(state.last_evictions.size() == 1);
    CHECK(state.last_evictions[0] == EvictionRecord{0, 1, std::nullopt});
    CHECK(state.hard_evicted[0] == 1);
    CHECK(state.layer_caches[0][0].importance_acc == doctest::Approx(0.9 + 1.0 / 6.0));
}

TEST_CASE("dropping a merged entry counts every token it carried") {
    auto state = hand_state({0.9, 0.05, 0.8, 0.7, 0.6}, 5, 2);
    state.layer_caches[0][1].merged_from = {6, 7};
    decode_step(state, uniform_input(5));
    CHECK(state.last_evictions[0] == EvictionRecord{0, 1, std::nullopt});
    CHECK(state.hard_evicted[0] == 3);
}

TEST_CASE("the newest token is protected even when it is the minimum") {
    auto state = hand_state({0.9, 0.5, 0.8, 0.3, 0.6}, 5, 1);
    DecodeInput in;
    Eigen::VectorXd row(6);
    row << 0.3, 0.2, 0.2, 0.1, 0.2, 0.0;
    in.attention = {{row}};
    decode_step(state, in);
    // New token 5 has accumulator 0; position 3 (0.4) is the lowest eligible one.
    CHECK(positions(state.layer_caches[0]) == std::vector<Index>{0, 1, 2, 4, 5});
}

TEST_CASE("window entries stay even when they hold the least importance") {
    auto state = hand_state({0.9, 0.8, 0.7, 0.01, 0.02}, 4, 3);
    decode_step(state, uniform_input(5));
    // Window 3 protects positions 3, 4 and 5; positions 1 and 2 go.
    CHECK(positions(state.layer_caches[0]) == std::vector<Index>{0, 3, 4, 5});
}

TEST_CASE("decode input validation") {
    auto state = hand_state({0.5, 0.5}, 2, 1);
    CHECK_THROWS_AS(decode_step(state, uniform_input(3)), ValidationError);
    DecodeInput bad;
    bad.attention = {{Eigen::VectorXd::Constant(3, 0.5)}};
    CHECK_THROWS_AS(decode_step(state, bad), ValidationError);
}

TEST_CASE("full budget never evicts") {
    const std::vector<double> conc{0.2, 2.0};
    const auto trace = synth_trace(2, 2, 40, conc, 6);
    BudgetSpec b;
    b.r = 1.0;
    const auto config = baseline_config(Policy::Uniform, b, 2, 30);
    const auto replay = replay_trace(trace, config, 10);
    for (const auto& log : replay.log) {
        CHECK(log.evicted.empty());
        CHECK(log.layer_sizes == std::vector<Index>{30 + log.step, 30 + log.step});
    }
    CHECK(replay.state.layer_caches[1].size() == 40);
}

TEST_CASE("feature merge example") {
    const std::vector<CacheEntry> retained{keyed(0, {1.0, 0.0}), keyed(1, {0.0, 1.0})};
    const auto evictee = keyed(5, {0.9, 0.1});
    CHECK(select_merge_target(MergePolicy::Feature, evictee, retained) == 0);
    auto live = retained;
    const Index t = merge(MergePolicy::Feature, evictee, live);
    CHECK(t == 0);
    CHECK(live[0].keys(0, 0) == doctest::Approx(0.95));
    CHECK(live[0].keys(0, 1) == doctest::Approx(0.05));
    CHECK(live[0].values(0, 0) == doctest::Approx(1.9));
    CHECK(live[0].merged_from == std::vector<Index>{5});
    CHECK(live[1].keys == retained[1].keys);
}

TEST_CASE("position merge example") {
    std::vector<CacheEntry> live{keyed(2, {1.0}), keyed(9, {1.0})};
    CHECK(match_score(MergePolicy::Position, keyed(7, {1.0}), live[0]) == -5.0);
    CHECK(match_score(MergePolicy::Position, keyed(7, {1.0}), live[1]) == -2.0);
    CHECK(live[static_cast<std::size_t>(merge(MergePolicy::Position, keyed(7, {1.0}), live))].position == 9);
    // Equidistant candidates resolve to the smaller position.
    std::vector<CacheEntry> tie{keyed(4, {1.0}), keyed(10, {1.0})};
    CHECK(select_merge_target(MergePolicy::Position, keyed(7, {1.0}), tie) == 0);
}

TEST_CASE("single retained entry always wins") {
    std::vector<CacheEntry> one{keyed(3, {0.0, 1.0})};
    CHECK(select_merge_target(MergePolicy::Feature, keyed(8, {1.0, 0.0}), one) == 0);
    CHECK(select_merge_target(MergePolicy::Position, keyed(100, {1.0, 0.0}), one) == 0);
    CHECK_THROWS_AS(select_merge_target(MergePolicy::Position, keyed(1, {1.0}), {}), ArgumentError);
}

TEST_CASE("repeated absorption is an equal-weight mean of originals") {
    CacheEntry target = keyed(0, {3.0, 0.0});
    absorb(target, keyed(1, {0.0, 3.0}));
    absorb(target, keyed(2, {3.0, 3.0}));
    CacheEntry pair = keyed(3, {6.0, 6.0});
    absorb(pair, keyed(4, {0.0, 0.0}));
    absorb(target, pair);
    // Originals: (3,0), (0,3), (3,3), (6,6), (0,0).
    CHECK(target.weight() == 5);
    CHECK(target.keys(0, 0) == doctest::Approx(12.0 / 5.0));
    CHECK(target.keys(0, 1) == doctest::Approx(12.0 / 5.0));
    CHECK(target.merged_from == std::vector<Index>{1, 2, 3, 4});
}

TEST_CASE("feature merging without vectors is a configuration error") {
    CacheEntry a, b;
    b.position = 1;
    CHECK_THROWS_AS(match_score(MergePolicy::Feature, a, b), ConfigError);
}

TEST_CASE("simulation invariants over replayed synthetic traces") {
    std::mt19937_64 rng(31);
    const std::vector<double> conc{0.1, 0.5, 2.0};
    SynthOptions opts;
    opts.with_kv = true;
    opts.kv_dim = 4;
    for (int trial = 0; trial < 12; ++trial) {
        const auto trace = synth_trace(3, 2, 48, conc, rng(), opts);
        BudgetSpec b;
        b.r = 0.2 + 0.1 * static_cast<double>(trial % 6);
        const auto prefill_profile = [&] {
            AttentionTrace head = trace;
            for (auto& layer : head.attention) {
                for (auto& a : layer) a = a.topLeftCorner(32, 32).eval();
            }
            head.meta.seq_len = 32;
            return compute_importance(head);
        }();
        const auto policy = static_cast<Policy>(trial % 4);
        const auto config = policy == Policy::PrefixKV
                                ? plan_online(priority_sequence(prefill_profile), b)
                                : baseline_config(policy, b, 3, 32);
        SimulationOptions options;
        options.protect_distance = 3;
        options.merge = static_cast<MergePolicy>(trial % 3);
        const auto replay = replay_trace(trace, config, 16, options);
        const auto& state = replay.state;
        CHECK(state.current_len == 48);
        for (Index l = 0; l < 3; ++l) {
            const auto& cache = state.layer_caches[static_cast<std::size_t>(l)];
            CHECK(static_cast<Index>(cache.size()) <= state.capacity(l));
            std::set<Index> seen;
            Index absorbed = 0;
            for (const auto& e : cache) {
                CHECK(seen.insert(e.position).second);
                for (Index m : e.merged_from) CHECK(seen.insert(m).second);
                absorbed += static_cast<Index>(e.merged_from.size());
                CHECK(e.importance_acc >= 0.0);
            }
            CHECK(static_cast<Index>(cache.size()) + absorbed + state.hard_evicted[static_cast<std::size_t>(l)] ==
                  state.current_len);
        }
        for (const auto& log : replay.log) {
            if (log.step == 0) continue;
            const Index newest = 32 + log.step - 1;
            for (const auto& ev : log.evicted) CHECK(newest - ev.position >= state.protect_distance);
        }
        const Index smallest = *std::min_element(config.token_counts.begin(), config.token_counts.end());
        CHECK(state.protect_distance == std::min<Index>(3, smallest));
    }
}

TEST_CASE("replay is deterministic") {
    const std::vector<double> conc{0.3, 3.0};
    SynthOptions opts;
    opts.with_kv = true;
    const auto trace = synth_trace(2, 2, 30, conc, 12, opts);
    BudgetSpec b;
    b.r = 0.4;
    const auto config = baseline_config(Policy::Pyramid, b, 2, 20);
    SimulationOptions options;
    options.merge = MergePolicy::Feature;
    options.protect_distance = 4;
    const auto a = replay_trace(trace, config, 10, options);
    const auto c = replay_trace(trace, config, 10, options);
    REQUIRE(a.log.size() == c.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(step_log_to_json_line(a.log[i]) == step_log_to_json_line(c.log[i]));
    }
}

TEST_CASE("protect window shrinks to the smallest capacity") {
    const auto profile = importance_from_raw(TraceMeta{1, 1, 4, "", std::nullopt}, one_row({0.7, 0.2, 0.05, 0.05}));
    SimulationOptions options;
    options.protect_distance = 10;
    const auto state = prefill_compress(profile, {}, manual_config({2}, {0.5}, 4), options);
    CHECK(state.protect_distance == 2);
}

TEST_CASE("step log json line") {
    StepLog log;
    log.step = 3;
    log.layer_sizes = {2, 1};
    log.evicted = {EvictionRecord{1, 7, std::nullopt}, EvictionRecord{0, 4, Index{2}}};
    log.retained_info = Eigen::Vector2d(0.5, 1.0);
    CHECK(step_log_to_json_line(log) ==
          R"({"evicted":[{"layer":1,"merged_into":null,"pos":7},{"layer":0,"merged_into":2,"pos":4}],"layer_sizes":[2,1],"retained_info":[0.5,1.0],"step":3})");
}
