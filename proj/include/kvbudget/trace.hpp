// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvbudget/common.hpp"

namespace kvbudget {

struct TraceMeta {
    Index layers = 1;
    Index heads = 1;
    Index seq_len = 1;
    std::string label;
    std::optional<std::uint64_t> seed;

    bool operator==(const TraceMeta&) const = default;
};

/// Key and value vectors of one head, one row per token position.
struct HeadKv {
    Eigen::MatrixXd keys;
    Eigen::MatrixXd values;

    bool operator==(const HeadKv& other) const {
        return keys == other.keys && values == other.values;
    }
};

/**
 * Attention trace of one sequence.
 *
 * Full form carries `attention[l][h]`, an N x N lower-triangular row-stochastic
 * matrix per layer and head. Shortcut form carries only the raw per-layer
 * importance (L x N) and leaves `attention` empty.
 */
struct AttentionTrace {
    TraceMeta meta;
    std::vector<std::vector<Eigen::MatrixXd>> attention;
    std::optional<LayerTable> importance;
    std::vector<std::vector<HeadKv>> kv;           // [layer][head], empty when absent
    std::vector<Eigen::MatrixXd> features;         // [layer], N x width, empty when absent

    bool has_attention() const { return !attention.empty(); }
    bool has_kv() const { return !kv.empty(); }
    Index kv_dim() const { return has_kv() ? kv.front().front().keys.cols() : 0; }

    bool operator==(const AttentionTrace& other) const;
};

/// Throws ValidationError naming the layer/head/row of the first violation.
void validate(const AttentionTrace& trace);

/// Checks causality and row sums of a single N x N attention matrix.
void validate_attention_matrix(const Eigen::MatrixXd& matrix, Index layer, Index head);

struct SynthOptions {
    bool with_kv = false;
    Index kv_dim = 16;
    std::string label = "dirichlet";
};

/**
 * Seeded synthetic trace. Each layer draws a shared token salience from
 * Gamma(concentration, 1); every row of every head is the salience times
 * independent Gamma(1, 1) noise over positions 0..m, normalized. Small
 * concentration values give a few heavy-hitter columns, large values spread
 * the column mass.
 */
AttentionTrace synth_trace(Index layers, Index heads, Index seq_len,
                           std::span<const double> concentration, std::uint64_t seed,
                           const SynthOptions& options = {});

AttentionTrace load_trace(const std::filesystem::path& path);
void save_trace(const AttentionTrace& trace, const std::filesystem::path& path);

AttentionTrace trace_from_json_text(const std::string& text);
std::string trace_to_json_text(const AttentionTrace& trace);

}  // namespace kvbudget
