// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbudget/lorenz.hpp"

namespace kvbudget {

LorenzCurve lorenz_curve(const PrioritySequence& seq, Index layer) {
    if (layer < 0 || layer >= seq.layers()) {
        throw ArgumentError("layer " + std::to_string(layer) + " out of range");
    }
    const Index n = seq.seq_len();
    LorenzCurve curve;
    curve.x.resize(n);
    for (Index j = 0; j < n; ++j) {
        curve.x(j) = static_cast<double>(j + 1) / static_cast<double>(n);
    }
    curve.y = seq.cumulative.row(layer).transpose();
    return curve;
}

double gini(const LorenzCurve& curve) {
    return gini_coefficient(curve.x, curve.y);
}

std::vector<LayerStats> layer_stats(const PrioritySequence& seq) {
    std::vector<LayerStats> stats;
    stats.reserve(static_cast<std::size_t>(seq.layers()));
    for (Index l = 0; l < seq.layers(); ++l) {
        LayerStats s;
        s.layer = l;
        s.curve = lorenz_curve(seq, l);
        s.gini = gini(s.curve);
        stats.push_back(std::move(s));
    }
    return stats;
}

}  // namespace kvbudget
