// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbudget/importance.hpp"

namespace kvbudget {

ImportanceProfile importance_from_raw(const TraceMeta& meta, const LayerTable& raw) {
    ImportanceProfile profile;
    profile.meta = meta;
    profile.raw = raw;
    profile.normalized.resize(raw.rows(), raw.cols());
    for (Index l = 0; l < raw.rows(); ++l) {
        if ((raw.row(l).array() < 0.0).any()) {
            throw ValidationError("negative importance in layer " + std::to_string(l));
        }
        try {
            profile.normalized.row(l) = normalize_importance(raw.row(l).transpose()).transpose();
        } catch (const ValidationError&) {
            throw ValidationError("degenerate layer " + std::to_string(l) +
                                  ": importance sums to zero");
        }
    }
    return profile;
}

ImportanceProfile compute_importance(const AttentionTrace& trace) {
    if (!trace.has_attention()) {
        if (!trace.importance) {
            throw ValidationError("trace carries neither attention nor importance");
        }
        return importance_from_raw(trace.meta, *trace.importance);
    }
    const Index layers = trace.meta.layers;
    const Index n = trace.meta.seq_len;
    LayerTable raw = LayerTable::Zero(layers, n);
    for (Index l = 0; l < layers; ++l) {
        const auto& heads = trace.attention[static_cast<std::size_t>(l)];
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
        for (const auto& a : heads) {
            sum += received_attention(a);
        }
        raw.row(l) = (sum / static_cast<double>(heads.size())).transpose();
    }
    return importance_from_raw(trace.meta, raw);
}

PrioritySequence priority_sequence(const LayerTable& normalized) {
    PrioritySequence seq;
    seq.cumulative.resize(normalized.rows(), normalized.cols());
    seq.order.reserve(static_cast<std::size_t>(normalized.rows()));
    for (Index l = 0; l < normalized.rows(); ++l) {
        auto order = descending_order(normalized.row(l));
        double running = 0.0;
        for (Index j = 0; j < normalized.cols(); ++j) {
            running += normalized(l, order[static_cast<std::size_t>(j)]);
            seq.cumulative(l, j) = running;
        }
        seq.order.push_back(std::move(order));
    }
    return seq;
}

PrioritySequence priority_sequence(const ImportanceProfile& profile) {
    return priority_sequence(profile.normalized);
}

}  // namespace kvbudget
