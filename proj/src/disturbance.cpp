// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbudget/toymodel.hpp"

namespace kvbudget {

DisturbanceReport disturbance(const ToyModel& model, std::span<const Index> prompt,
                              Index decode_len, const PrefixConfiguration& config,
                              const SimulationOptions& options) {
    if (decode_len < 1) {
        throw ArgumentError("decode_len must be at least 1");
    }
    const auto full = model.decode(prompt, decode_len);
    const auto compressed = model.decode(prompt, decode_len, config, options, full.tokens);

    const Index layers = model.spec().layers;
    DisturbanceReport report;
    report.budget = config.budget.r;
    report.per_token_mae.resize(layers, decode_len);
    for (Index t = 0; t < decode_len; ++t) {
        const auto& a = full.features[static_cast<std::size_t>(t)];
        const auto& b = compressed.features[static_cast<std::size_t>(t)];
        report.per_token_mae.col(t) = (a - b).cwiseAbs().rowwise().mean();
    }
    report.per_layer_mae = report.per_token_mae.rowwise().mean();
    return report;
}

DisturbanceReport disturbance(const ToyModel& model, Index prompt_len, Index decode_len,
                              const PrefixConfiguration& config, std::uint64_t prompt_seed,
                              const SimulationOptions& options) {
    const auto prompt = model.random_prompt(prompt_len, prompt_seed);
    return disturbance(model, prompt, decode_len, config, options);
}

}  // namespace kvbudget
